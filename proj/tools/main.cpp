#include "momentfit/cli.hpp"

int main(int argc, char** argv) { return momentfit::cli::run_cli(argc, argv); }
