#pragma once

namespace momentfit::cli {

// Front door for the provider/analyst/simulation workflows. Subcommands:
// summarize, generate, fit, simulate. Returns the process exit code; hard
// errors print to stderr and return nonzero, warnings (non-convergence,
// overdetermined matching) keep exit code 0 with machine-readable flags in
// the output files.
int run_cli(int argc, const char* const* argv);

}  // namespace momentfit::cli
