#include "momentfit/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "momentfit/bundle_io.hpp"
#include "momentfit/csvio.hpp"
#include "momentfit/glmm.hpp"
#include "momentfit/moments.hpp"
#include "momentfit/parallel.hpp"
#include "momentfit/pseudogen.hpp"
#include "momentfit/simlab.hpp"

namespace momentfit::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using moments::ClusterData;
using moments::VariableMeta;
using moments::VarKind;

namespace {

struct CategoricalSpec {
  std::string column;
  std::vector<std::string> levels;  // first level is the reference
};

CategoricalSpec parse_categorical(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= text.size())
    throw ConfigError("--categorical expects NAME=level1,level2,... got '" + text + "'");
  CategoricalSpec spec;
  spec.column = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string level;
  while (std::getline(rest, level, ',')) spec.levels.push_back(level);
  if (spec.levels.size() < 2)
    throw ConfigError("--categorical '" + spec.column + "' needs at least 2 levels");
  return spec;
}

double parse_double(const std::string& text, long line_number, const std::string& column) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw InvalidInputError("line " + std::to_string(line_number) + ": column '" + column +
                            "' has non-numeric value '" + text + "'");
  }
}

struct LoadedData {
  std::vector<ClusterData> clusters;               // first-appearance order
  std::vector<VariableMeta> variables;             // response first
  std::vector<std::string> predictor_names;
};

LoadedData load_dataset(const fs::path& input, const std::string& cluster_col,
                        const std::string& response_col,
                        const std::vector<CategoricalSpec>& categoricals,
                        const std::vector<std::string>& standardize_cols) {
  const csvio::Table table = csvio::read_csv(input);
  const int cluster_idx = table.require_column(cluster_col);
  const int response_idx = table.require_column(response_col);

  auto categorical_of = [&](const std::string& name) -> const CategoricalSpec* {
    for (const auto& c : categoricals)
      if (c.column == name) return &c;
    return nullptr;
  };
  for (const auto& c : categoricals) table.require_column(c.column);

  // Predictor source columns in CSV order.
  std::vector<int> source_cols;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (static_cast<int>(j) == cluster_idx || static_cast<int>(j) == response_idx) continue;
    source_cols.push_back(static_cast<int>(j));
  }
  if (source_cols.empty()) throw InvalidInputError("no predictor columns in " + input.string());

  // Group row indices by cluster, keeping first-appearance order.
  std::vector<std::string> cluster_order;
  std::map<std::string, std::vector<std::size_t>> cluster_rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& id = table.rows[r][static_cast<std::size_t>(cluster_idx)];
    if (cluster_rows.find(id) == cluster_rows.end()) cluster_order.push_back(id);
    cluster_rows[id].push_back(r);
  }

  LoadedData data;
  VariableMeta response;
  response.name = response_col;
  response.kind = VarKind::binary_response;
  data.variables.push_back(response);

  // Expand the predictor metadata once, from the full table.
  struct SourceInfo {
    std::string name;
    const CategoricalSpec* cat = nullptr;
    bool binary = false;
  };
  std::vector<SourceInfo> sources;
  for (int col : source_cols) {
    SourceInfo info;
    info.name = table.header[static_cast<std::size_t>(col)];
    info.cat = categorical_of(info.name);
    if (info.cat == nullptr) {
      info.binary = true;
      for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const double v =
            parse_double(table.rows[r][static_cast<std::size_t>(col)], static_cast<long>(r) + 2,
                         info.name);
        if (v != 0.0 && v != 1.0) {
          info.binary = false;
          break;
        }
      }
    }
    sources.push_back(info);
  }

  for (const auto& info : sources) {
    const bool wants_std = std::find(standardize_cols.begin(), standardize_cols.end(),
                                     info.name) != standardize_cols.end();
    if (info.cat != nullptr) {
      if (wants_std)
        throw ConfigError("cannot standardize categorical column '" + info.name + "'");
      for (std::size_t l = 1; l < info.cat->levels.size(); ++l) {
        VariableMeta meta;
        meta.name = info.name + "_" + info.cat->levels[l];
        meta.kind = VarKind::dummy;
        meta.level = info.cat->levels[l];
        meta.parent = info.name;
        data.variables.push_back(meta);
        data.predictor_names.push_back(meta.name);
      }
    } else {
      VariableMeta meta;
      meta.name = info.name;
      meta.kind = info.binary ? VarKind::binary : VarKind::numeric;
      if (wants_std) {
        if (info.binary)
          throw ConfigError("cannot standardize binary column '" + info.name + "'");
        meta.standardized = true;
      }
      data.variables.push_back(meta);
      data.predictor_names.push_back(meta.name);
    }
  }
  const int p = static_cast<int>(data.predictor_names.size());

  for (const auto& id : cluster_order) {
    const auto& rows = cluster_rows[id];
    ClusterData cluster;
    cluster.cluster_id = id;
    cluster.y.resize(static_cast<Eigen::Index>(rows.size()));
    cluster.x.resize(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& row = table.rows[rows[k]];
      const long line = static_cast<long>(rows[k]) + 2;
      const double y = parse_double(row[static_cast<std::size_t>(response_idx)], line, response_col);
      if (y != 0.0 && y != 1.0)
        throw InvalidInputError("line " + std::to_string(line) + ": response must be 0 or 1");
      cluster.y[static_cast<Eigen::Index>(k)] = y;
      int out_col = 0;
      for (std::size_t s = 0; s < sources.size(); ++s) {
        const int col = source_cols[s];
        const std::string& text = row[static_cast<std::size_t>(col)];
        if (sources[s].cat != nullptr) {
          const auto& levels = sources[s].cat->levels;
          const auto it = std::find(levels.begin(), levels.end(), text);
          if (it == levels.end())
            throw InvalidInputError("line " + std::to_string(line) + ": unseen level '" + text +
                                    "' in column '" + sources[s].name + "'");
          const std::size_t level_idx = static_cast<std::size_t>(it - levels.begin());
          for (std::size_t l = 1; l < levels.size(); ++l) {
            cluster.x(static_cast<Eigen::Index>(k), out_col++) = (level_idx == l) ? 1.0 : 0.0;
          }
        } else {
          cluster.x(static_cast<Eigen::Index>(k), out_col++) =
              parse_double(text, line, sources[s].name);
        }
      }
    }
    data.clusters.push_back(std::move(cluster));
  }
  return data;
}

// ---------------------------------------------------------------- summarize

struct SummarizeArgs {
  std::string input, cluster_col, response_col, out_dir;
  std::vector<std::string> categorical_texts;
  std::vector<std::string> standardize_cols;
  int max_order = 3;
  bool quiet = false;
};

int cmd_summarize(const SummarizeArgs& args) {
  std::vector<CategoricalSpec> categoricals;
  for (const auto& text : args.categorical_texts) categoricals.push_back(parse_categorical(text));
  const LoadedData data = load_dataset(args.input, args.cluster_col, args.response_col,
                                       categoricals, args.standardize_cols);

  std::vector<moments::SummaryBundle> bundles;
  for (const auto& cluster : data.clusters) {
    try {
      bundles.push_back(moments::summarize_cluster(cluster, data.variables, args.max_order));
    } catch (const ClusterTooSmallError&) {
      if (!args.quiet)
        std::cerr << "notice: skipping cluster '" << cluster.cluster_id << "' (fewer than 2 records)\n";
    } catch (const DegenerateScaleError& e) {
      if (!args.quiet)
        std::cerr << "notice: skipping cluster '" << cluster.cluster_id << "' (" << e.what() << ")\n";
    }
  }
  if (bundles.empty()) throw InvalidInputError("no cluster could be summarized");

  const bundle_io::BundleSet set = bundle_io::merge_bundles(std::move(bundles));
  bundle_io::write_bundle_set(set, args.out_dir);
  if (!args.quiet)
    std::cout << "wrote " << set.bundles.size() << " bundle(s) to " << args.out_dir << "\n";
  return 0;
}

// ----------------------------------------------------------------- generate

struct GenerateArgs {
  std::string bundles_dir, out_dir;
  std::uint64_t seed = 1;
  int threads = 1;
  int lm_max_iterations = 0;
  bool quiet = false;
};

int cmd_generate(const GenerateArgs& args) {
  const bundle_io::BundleSet set = bundle_io::read_bundle_dir(args.bundles_dir);
  if (set.bundles.empty()) throw InvalidInputError("bundle directory is empty");

  optim::LmOptions lm;
  lm.seed = args.seed;
  lm.max_iterations = args.lm_max_iterations;

  std::vector<std::pair<pseudogen::PseudoDataset, pseudogen::MomentDiagnostics>> results(
      set.bundles.size());
  parallel_for(set.bundles.size(), args.threads, [&](std::size_t i) {
    results[i] = pseudogen::generate_cluster(set.bundles[i], lm);
  });

  const auto& variables = set.bundles.front().variables;
  std::ostringstream pseudo_csv;
  pseudo_csv << "cluster_id";
  for (const auto& v : variables) pseudo_csv << "," << v.name;
  pseudo_csv << "\n";
  std::ostringstream diag_csv;
  diag_csv << "cluster_id,index,order,target,achieved,abs_difference\n";

  json summary;
  summary["seed"] = args.seed;
  json warnings = json::array();
  json cluster_entries = json::array();
  std::map<int, double> worst_by_order;

  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [ps, diag] = results[i];
    for (Eigen::Index r = 0; r < ps.y_pi.size(); ++r) {
      pseudo_csv << ps.cluster_id << "," << csvio::format_full(ps.y_pi[r]);
      for (Eigen::Index c = 0; c < ps.x_pi.cols(); ++c)
        pseudo_csv << "," << csvio::format_full(ps.x_pi(r, c));
      pseudo_csv << "\n";
    }
    for (const auto& row : diag.rows) {
      diag_csv << ps.cluster_id << ",\"" << row.index.to_string() << "\","
               << row.index.total_order() << "," << csvio::format_full(row.target) << ","
               << csvio::format_full(row.achieved) << ","
               << csvio::format_full(row.abs_difference) << "\n";
      auto& worst = worst_by_order[row.index.total_order()];
      worst = std::max(worst, row.abs_difference);
    }
    for (const auto& w : diag.warnings) warnings.push_back(w);
    json entry;
    entry["cluster_id"] = ps.cluster_id;
    entry["generation_seed"] = ps.generation_seed;
    json ssd = json::array();
    for (Eigen::Index j = 0; j < ps.achieved_ssd_per_variable.size(); ++j)
      ssd.push_back(ps.achieved_ssd_per_variable[j]);
    entry["achieved_ssd_per_variable"] = std::move(ssd);
    cluster_entries.push_back(std::move(entry));
  }

  json worst_json;
  for (const auto& [order, worst] : worst_by_order)
    worst_json["order_" + std::to_string(order)] = worst;
  summary["worst_abs_difference_by_order"] = std::move(worst_json);
  summary["clusters"] = std::move(cluster_entries);
  summary["warnings"] = std::move(warnings);

  const fs::path out(args.out_dir);
  csvio::write_lines(out / "pseudo.csv", pseudo_csv.str());
  csvio::write_lines(out / "diagnostics.csv", diag_csv.str());
  csvio::write_lines(out / "generation_summary.json", summary.dump(2) + "\n");

  if (!args.quiet) {
    std::cout << "generated pseudo-data for " << results.size() << " cluster(s); worst |target-achieved|";
    for (const auto& [order, worst] : worst_by_order)
      std::cout << " order " << order << ": " << worst << ";";
    std::cout << "\n";
    if (!summary["warnings"].empty())
      std::cout << summary["warnings"].size() << " matching warning(s); see generation_summary.json\n";
  }
  return 0;
}

// ---------------------------------------------------------------------- fit

struct FitArgs {
  std::string input, cluster_col, response_col, out_dir;
  std::vector<std::string> categorical_texts;
  std::string model = "mixed";
  std::string ci_method = "wald";
  int nagq = 7;
  bool quiet = false;
};

std::string stars(double p_value) {
  if (p_value < 0.001) return "***";
  if (p_value < 0.01) return "**";
  if (p_value < 0.05) return "*";
  return "";
}

std::string fmt(double value, int digits) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.*f", digits, value);
  return buffer;
}

int cmd_fit(const FitArgs& args) {
  std::vector<CategoricalSpec> categoricals;
  for (const auto& text : args.categorical_texts) categoricals.push_back(parse_categorical(text));
  const LoadedData data =
      load_dataset(args.input, args.cluster_col, args.response_col, categoricals, {});

  json out_json;
  std::ostringstream table;
  std::vector<std::string> warnings;

  const auto residual_lines = [&table](const std::array<double, 5>& q) {
    table << "\nScaled residuals:\n";
    const char* labels[5] = {"Min", "Q1", "Median", "Q3", "Max"};
    for (int i = 0; i < 5; ++i)
      table << "  " << labels[i] << std::string(8 - std::string(labels[i]).size(), ' ')
            << fmt(q[static_cast<std::size_t>(i)], 3) << "\n";
  };

  long n_obs = 0;
  for (const auto& c : data.clusters) n_obs += c.y.size();

  if (args.model == "mixed") {
    glmm::GlmmOptions gopt;
    gopt.coef_names = data.predictor_names;
    gopt.profile_ci = args.ci_method == "profile";
    const glmm::GlmmFit fit = glmm::fit_glmm(data.clusters, args.nagq, gopt);
    if (!fit.converged) warnings.push_back("mixed-model fit did not converge; estimates are best available");

    table << "Mixed effects binary logistic regression (random intercept)\n";
    if (!fit.converged) table << "WARNING: fit did not converge\n";
    table << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %-22s %s\n", "", "Est (std. err.)", "95% CI");
    table << line;
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
      const std::string& name = fit.coef_names[static_cast<std::size_t>(j)];
      const double z = fit.se_beta[j] > 0.0 ? fit.beta[j] / fit.se_beta[j] : 0.0;
      const auto& ci = fit.ci.at(name);
      std::snprintf(line, sizeof(line), "%-24s %7s (%s) %-3s    (%s, %s)\n", name.c_str(),
                    fmt(fit.beta[j], 3).c_str(), fmt(fit.se_beta[j], 3).c_str(),
                    stars(glmm::two_sided_p(z)).c_str(), fmt(ci.lower, 4).c_str(),
                    fmt(ci.upper, 4).c_str());
      table << line;
    }
    const auto& sci = fit.ci.at("sigma_u");
    std::snprintf(line, sizeof(line), "%-24s %7s %9s    (%s, %s)\n", "sigma_Int",
                  fmt(fit.sigma_u, 3).c_str(), "", fmt(sci.lower, 4).c_str(),
                  fmt(sci.upper, 4).c_str());
    table << line;

    residual_lines(glmm::scaled_residual_summary(fit, data.clusters));
    table << "\nAIC                 " << fmt(fit.aic, 1) << "\n";
    table << "BIC                 " << fmt(fit.bic, 1) << "\n";
    table << "N                   " << fit.n_obs << "\n";
    table << "number of clusters  " << fit.n_clusters << "\n";
    table << "CI method: " << args.ci_method << "; nAGQ = " << fit.n_quad
          << "; converged: " << (fit.converged ? "yes" : "NO") << "\n";

    out_json["model"] = "mixed";
    json est, se, ci;
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
      const std::string& name = fit.coef_names[static_cast<std::size_t>(j)];
      est[name] = fit.beta[j];
      se[name] = fit.se_beta[j];
      json e;
      e["lower"] = fit.ci.at(name).lower;
      e["upper"] = fit.ci.at(name).upper;
      e["method"] = fit.ci.at(name).method;
      ci[name] = std::move(e);
    }
    {
      json e;
      e["lower"] = fit.ci.at("sigma_u").lower;
      e["upper"] = fit.ci.at("sigma_u").upper;
      e["method"] = fit.ci.at("sigma_u").method;
      ci["sigma_u"] = std::move(e);
    }
    out_json["estimates"] = std::move(est);
    out_json["se"] = std::move(se);
    out_json["sigma_u"] = fit.sigma_u;
    out_json["ci"] = std::move(ci);
    out_json["loglik"] = fit.loglik;
    out_json["aic"] = fit.aic;
    out_json["bic"] = fit.bic;
    out_json["n"] = fit.n_obs;
    out_json["clusters"] = fit.n_clusters;
    out_json["nagq"] = fit.n_quad;
    out_json["converged"] = fit.converged;
    out_json["boundary_sigma_u"] = fit.boundary_sigma_u;
    const auto q = glmm::scaled_residual_summary(fit, data.clusters);
    json res;
    res["min"] = q[0];
    res["q1"] = q[1];
    res["median"] = q[2];
    res["q3"] = q[3];
    res["max"] = q[4];
    out_json["scaled_residuals"] = std::move(res);
  } else if (args.model == "fixed") {
    // Pooled design with intercept.
    Eigen::VectorXd y(n_obs);
    Eigen::MatrixXd x(n_obs, static_cast<Eigen::Index>(data.predictor_names.size()) + 1);
    long row = 0;
    for (const auto& c : data.clusters) {
      const Eigen::Index n = c.y.size();
      y.segment(row, n) = c.y;
      x.block(row, 0, n, 1).setOnes();
      if (c.x.cols() > 0) x.block(row, 1, n, c.x.cols()) = c.x;
      row += n;
    }
    const glmm::FixedFit fit = glmm::fit_logistic(y, x);
    if (!fit.converged) warnings.push_back("fixed-effects fit did not converge (possible separation)");

    table << "Binary logistic regression (fixed effects)\n";
    if (!fit.converged) table << "WARNING: fit did not converge\n";
    table << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %-22s %s\n", "", "Est (std. err.)", "95% CI");
    table << line;
    const double zq = glmm::normal_quantile(0.975);
    json est, se, ci;
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
      const std::string name =
          j == 0 ? "(Intercept)" : data.predictor_names[static_cast<std::size_t>(j - 1)];
      const double z = fit.se[j] > 0.0 ? fit.beta[j] / fit.se[j] : 0.0;
      const double lower = fit.beta[j] - zq * fit.se[j];
      const double upper = fit.beta[j] + zq * fit.se[j];
      std::snprintf(line, sizeof(line), "%-24s %7s (%s) %-3s    (%s, %s)\n", name.c_str(),
                    fmt(fit.beta[j], 3).c_str(), fmt(fit.se[j], 3).c_str(),
                    stars(glmm::two_sided_p(z)).c_str(), fmt(lower, 4).c_str(),
                    fmt(upper, 4).c_str());
      table << line;
      est[name] = fit.beta[j];
      se[name] = fit.se[j];
      json e;
      e["lower"] = lower;
      e["upper"] = upper;
      e["method"] = "wald";
      ci[name] = std::move(e);
    }
    residual_lines(glmm::scaled_residual_summary(fit, y, x));
    const double aic_value = glmm::aic(fit);
    const double bic_value =
        -2.0 * fit.loglik + static_cast<double>(fit.beta.size()) * std::log(static_cast<double>(n_obs));
    table << "\nAIC                 " << fmt(aic_value, 1) << "\n";
    table << "BIC                 " << fmt(bic_value, 1) << "\n";
    table << "N                   " << n_obs << "\n";
    table << "number of clusters  " << data.clusters.size() << "\n";
    table << "converged: " << (fit.converged ? "yes" : "NO") << "\n";

    out_json["model"] = "fixed";
    out_json["estimates"] = std::move(est);
    out_json["se"] = std::move(se);
    out_json["ci"] = std::move(ci);
    out_json["loglik"] = fit.loglik;
    out_json["aic"] = aic_value;
    out_json["bic"] = bic_value;
    out_json["n"] = n_obs;
    out_json["clusters"] = data.clusters.size();
    out_json["converged"] = fit.converged;
    const auto q = glmm::scaled_residual_summary(fit, y, x);
    json res;
    res["min"] = q[0];
    res["q1"] = q[1];
    res["median"] = q[2];
    res["q3"] = q[3];
    res["max"] = q[4];
    out_json["scaled_residuals"] = std::move(res);
  } else {
    throw ConfigError("--model must be 'mixed' or 'fixed'");
  }

  table << "Signif. codes: *** p<0.001, ** p<0.01, * p<0.05\n";
  json warn_json = json::array();
  for (const auto& w : warnings) warn_json.push_back(w);
  out_json["warnings"] = std::move(warn_json);

  if (!args.out_dir.empty()) {
    const fs::path out(args.out_dir);
    csvio::write_lines(out / "fit.json", out_json.dump(2) + "\n");
    csvio::write_lines(out / "table.txt", table.str());
  }
  if (!args.quiet) std::cout << table.str();
  return 0;
}

// ----------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config_path, out_dir;
  int threads = 0;          // 0: take from config
  std::uint64_t seed = 0;   // 0: take from config
  bool quiet = false;
};

simlab::SimConfig load_sim_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open config " + path.string());
  json parsed;
  try {
    parsed = json::parse(std::string(std::istreambuf_iterator<char>(in), {}));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  simlab::SimConfig cfg;
  cfg.m = parsed.value("m", cfg.m);
  cfg.n = parsed.value("n", cfg.n);
  cfg.replicates = parsed.value("replicates", cfg.replicates);
  cfg.seed = parsed.value("seed", cfg.seed);
  cfg.n_quad = parsed.value("nagq", cfg.n_quad);
  if (parsed.contains("truth")) {
    const auto& t = parsed["truth"];
    cfg.truth.beta0 = t.value("beta0", cfg.truth.beta0);
    cfg.truth.beta1 = t.value("beta1", cfg.truth.beta1);
    cfg.truth.beta2 = t.value("beta2", cfg.truth.beta2);
    cfg.truth.beta32 = t.value("beta32", cfg.truth.beta32);
    cfg.truth.beta33 = t.value("beta33", cfg.truth.beta33);
    cfg.truth.sigma_u = t.value("sigma_u", cfg.truth.sigma_u);
  }
  if (parsed.contains("predictors")) {
    const auto& laws = parsed["predictors"];
    if (laws.contains("normal")) {
      cfg.laws.normal_mean = laws["normal"].value("mean", cfg.laws.normal_mean);
      cfg.laws.normal_var = laws["normal"].value("var", cfg.laws.normal_var);
    }
    if (laws.contains("poisson"))
      cfg.laws.poisson_lambda = laws["poisson"].value("lambda", cfg.laws.poisson_lambda);
    if (laws.contains("multinomial") && laws["multinomial"].contains("p")) {
      const auto p = laws["multinomial"]["p"].get<std::vector<double>>();
      if (p.size() != 3) throw ConfigError("multinomial p must have exactly 3 entries");
      std::copy(p.begin(), p.end(), cfg.laws.multinomial_p.begin());
    }
  }
  if (parsed.contains("moment_orders"))
    cfg.moment_orders = parsed["moment_orders"].get<std::vector<int>>();
  return cfg;
}

int cmd_simulate(const SimulateArgs& args) {
  simlab::SimConfig cfg = load_sim_config(args.config_path);
  if (args.threads > 0) cfg.threads = args.threads;
  if (args.seed != 0) cfg.seed = args.seed;
  simlab::validate(cfg);

  const simlab::ExperimentReport report = simlab::run_experiment(cfg);

  std::ostringstream report_csv;
  report_csv << "replicate,arm,parameter,estimate,se,lower,upper,truth,bias,covered,converged,error\n";
  std::ostringstream aic_csv;
  aic_csv << "replicate,arm,aic,loglik,converged,error\n";
  for (const auto& rep : report.replicates) {
    for (const auto& arm : report.arm_names) {
      const auto it = rep.arms.find(arm);
      if (it == rep.arms.end()) continue;
      const auto& rec = it->second;
      if (rec.error.empty()) {
        aic_csv << rep.replicate << "," << arm << "," << csvio::format_full(rec.aic) << ","
                << csvio::format_full(rec.loglik) << "," << (rec.converged ? 1 : 0) << ",\n";
        for (const auto& param : simlab::parameter_names()) {
          const double truth = report.truth_of(param);
          const double est = rec.estimate.at(param);
          const bool covered = rec.lower.at(param) <= truth && truth <= rec.upper.at(param);
          report_csv << rep.replicate << "," << arm << "," << param << ","
                     << csvio::format_full(est) << "," << csvio::format_full(rec.se.at(param))
                     << "," << csvio::format_full(rec.lower.at(param)) << ","
                     << csvio::format_full(rec.upper.at(param)) << "," << csvio::format_full(truth)
                     << "," << csvio::format_full(est - truth) << "," << (covered ? 1 : 0) << ","
                     << (rec.converged ? 1 : 0) << ",\n";
        }
      } else {
        aic_csv << rep.replicate << "," << arm << ",,,0,\"" << rec.error << "\"\n";
        for (const auto& param : simlab::parameter_names()) {
          report_csv << rep.replicate << "," << arm << "," << param << ",,,,,"
                     << csvio::format_full(report.truth_of(param)) << ",,0,0,\"" << rec.error
                     << "\"\n";
        }
      }
    }
  }

  const auto band = simlab::coverage_band(0.95, cfg.replicates);
  json summary;
  summary["m"] = cfg.m;
  summary["n"] = cfg.n;
  summary["replicates"] = cfg.replicates;
  summary["seed"] = cfg.seed;
  summary["nagq"] = cfg.n_quad;
  json band_json;
  band_json["nominal"] = 0.95;
  band_json["lower"] = band.first;
  band_json["upper"] = band.second;
  summary["coverage_band"] = std::move(band_json);
  json arms_json;
  for (const auto& arm : report.arm_names) {
    json arm_json;
    arm_json["nonconverged"] = report.nonconverged_count(arm);
    json params_json;
    for (const auto& param : simlab::parameter_names()) {
      json p;
      const double cov = report.coverage(arm, param);
      p["coverage"] = cov;
      p["in_band"] = std::isfinite(cov) && cov >= band.first && cov <= band.second;
      p["mean_abs_bias"] = report.mean_abs_bias(arm, param);
      const auto bias = report.bias_values(arm, param);
      double mean_bias = 0.0;
      for (double b : bias) mean_bias += b;
      p["mean_bias"] = bias.empty() ? 0.0 : mean_bias / static_cast<double>(bias.size());
      p["usable_replicates"] = bias.size();
      params_json[param] = std::move(p);
    }
    arm_json["parameters"] = std::move(params_json);
    arms_json[arm] = std::move(arm_json);
  }
  summary["arms"] = std::move(arms_json);

  const fs::path out(args.out_dir);
  csvio::write_lines(out / "report.csv", report_csv.str());
  csvio::write_lines(out / "aic.csv", aic_csv.str());
  csvio::write_lines(out / "summary.json", summary.dump(2) + "\n");

  if (!args.quiet) {
    std::cout << "simulation finished: " << cfg.replicates << " replicate(s), arms";
    for (const auto& arm : report.arm_names) std::cout << " " << arm;
    std::cout << "; outputs in " << args.out_dir << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"moment-matched pseudo-data toolkit for federated logistic regression"};
  app.require_subcommand(1);

  SummarizeArgs sargs;
  auto* summarize = app.add_subcommand(
      "summarize", "reduce a clustered CSV to per-cluster moment bundles (data provider role)");
  summarize->add_option("--input", sargs.input, "input CSV with header row")->required();
  summarize->add_option("--cluster-col", sargs.cluster_col, "cluster id column")->required();
  summarize->add_option("--response-col", sargs.response_col, "binary response column")->required();
  summarize->add_option("--categorical", sargs.categorical_texts,
                        "categorical column as NAME=level1,level2,...; first level is the reference");
  summarize->add_option("--standardize", sargs.standardize_cols,
                        "numeric column to standardize (repeatable)");
  summarize->add_option("--max-order", sargs.max_order, "highest moment order (2, 3, or 4)")
      ->default_val(3);
  summarize->add_option("--out", sargs.out_dir, "output directory for bundles")->required();
  summarize->add_flag("--quiet", sargs.quiet, "suppress notices");

  GenerateArgs gargs;
  auto* generate = app.add_subcommand(
      "generate", "generate moment-matched pseudo-data from bundles (data analyst role)");
  generate->add_option("--bundles", gargs.bundles_dir, "directory with bundles + manifest")->required();
  generate->add_option("--out", gargs.out_dir, "output directory")->required();
  generate->add_option("--seed", gargs.seed, "generation seed")->default_val(1);
  generate->add_option("--threads", gargs.threads, "worker threads")->default_val(1);
  generate->add_option("--lm-max-iter", gargs.lm_max_iterations,
                       "Levenberg-Marquardt iteration cap (0 = 400 per unknown)");
  generate->add_flag("--quiet", gargs.quiet, "suppress summary line");

  FitArgs fargs;
  auto* fit = app.add_subcommand("fit", "fit a fixed or mixed logistic regression from a CSV");
  fit->add_option("--input", fargs.input, "input CSV (actual or pseudo-data)")->required();
  fit->add_option("--cluster-col", fargs.cluster_col, "cluster id column")->required();
  fit->add_option("--response-col", fargs.response_col, "binary response column")->required();
  fit->add_option("--categorical", fargs.categorical_texts,
                  "categorical column as NAME=level1,level2,...");
  fit->add_option("--model", fargs.model, "'mixed' (random intercept) or 'fixed'")->default_val("mixed");
  fit->add_option("--nagq", fargs.nagq, "adaptive quadrature points")->default_val(7);
  fit->add_option("--ci", fargs.ci_method, "interval method: 'wald' or 'profile'")->default_val("wald");
  fit->add_option("--out", fargs.out_dir, "output directory (fit.json, table.txt)");
  fit->add_flag("--quiet", fargs.quiet, "do not print the table");

  SimulateArgs simargs;
  auto* simulate = app.add_subcommand("simulate", "run the simulation protocol from a config file");
  simulate->add_option("--config", simargs.config_path, "JSON config")->required();
  simulate->add_option("--out", simargs.out_dir, "output directory")->required();
  simulate->add_option("--threads", simargs.threads, "worker threads (overrides config)");
  simulate->add_option("--seed", simargs.seed, "seed (overrides config)");
  simulate->add_flag("--quiet", simargs.quiet, "suppress summary line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (summarize->parsed()) return cmd_summarize(sargs);
    if (generate->parsed()) return cmd_generate(gargs);
    if (fit->parsed()) return cmd_fit(fargs);
    if (simulate->parsed()) return cmd_simulate(simargs);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace momentfit::cli
