#include "momentfit/simlab.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "momentfit/parallel.hpp"
#include "momentfit/pseudogen.hpp"
#include "momentfit/rng.hpp"

namespace momentfit::simlab {

using moments::VariableMeta;
using moments::VarKind;

void validate(const SimConfig& cfg) {
  if (cfg.m < 2) throw ConfigError("simulation needs at least 2 clusters");
  if (cfg.n < 2) throw ConfigError("cluster size must be at least 2");
  if (cfg.replicates < 1) throw ConfigError("need at least 1 replicate");
  if (!(cfg.truth.sigma_u >= 0.0)) throw ConfigError("sigma_u must be >= 0");
  if (!(cfg.laws.normal_var > 0.0)) throw ConfigError("normal variance must be > 0");
  if (!(cfg.laws.poisson_lambda > 0.0)) throw ConfigError("poisson lambda must be > 0");
  double total = 0.0;
  for (double p : cfg.laws.multinomial_p) {
    if (!(p > 0.0)) throw ConfigError("multinomial probabilities must be > 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("multinomial probabilities must sum to 1");
  if (cfg.moment_orders.empty()) throw ConfigError("moment_orders must not be empty");
  for (int k : cfg.moment_orders) {
    if (k < 2 || k > 4) throw ConfigError("moment orders must be within {2,3,4}");
  }
  if (cfg.n_quad < 1 || cfg.n_quad > 100) throw ConfigError("n_quad must be in [1,100]");
}

const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names = {"beta0", "beta1",  "beta2",
                                                 "beta32", "beta33", "sigma_u"};
  return names;
}

std::vector<ClusterData> simulate_dataset(const SimConfig& cfg, int replicate_index) {
  validate(cfg);
  const std::vector<double> probs(cfg.laws.multinomial_p.begin(), cfg.laws.multinomial_p.end());
  const double sd_x1 = std::sqrt(cfg.laws.normal_var);

  std::vector<ClusterData> clusters(static_cast<std::size_t>(cfg.m));
  for (int i = 0; i < cfg.m; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(replicate_index),
                        static_cast<std::uint64_t>(i)));
    const double u = rng.normal(0.0, cfg.truth.sigma_u);

    ClusterData cluster;
    cluster.cluster_id = "c" + std::to_string(i + 1);
    cluster.y.resize(cfg.n);
    cluster.x.resize(cfg.n, 4);
    for (int j = 0; j < cfg.n; ++j) {
      const double x1 = rng.normal(cfg.laws.normal_mean, sd_x1);
      const double x2 = static_cast<double>(rng.poisson(cfg.laws.poisson_lambda));
      const int level = rng.categorical(probs);
      const double x32 = level == 1 ? 1.0 : 0.0;
      const double x33 = level == 2 ? 1.0 : 0.0;
      const double eta = cfg.truth.beta0 + cfg.truth.beta1 * x1 + cfg.truth.beta2 * x2 +
                         cfg.truth.beta32 * x32 + cfg.truth.beta33 * x33 + u;
      const double pi = 1.0 / (1.0 + std::exp(-eta));
      cluster.y[j] = rng.uniform() < pi ? 1.0 : 0.0;
      cluster.x(j, 0) = x1;
      cluster.x(j, 1) = x2;
      cluster.x(j, 2) = x32;
      cluster.x(j, 3) = x33;
    }
    clusters[static_cast<std::size_t>(i)] = std::move(cluster);
  }
  return clusters;
}

namespace {

std::vector<VariableMeta> simulation_variables() {
  std::vector<VariableMeta> vars(5);
  vars[0].name = "y";
  vars[0].kind = VarKind::binary_response;
  vars[1].name = "x1";
  vars[1].kind = VarKind::numeric;
  vars[1].standardized = true;
  vars[2].name = "x2";
  vars[2].kind = VarKind::numeric;
  vars[2].standardized = true;
  vars[3].name = "x32";
  vars[3].kind = VarKind::dummy;
  vars[3].level = "2";
  vars[3].parent = "x3";
  vars[4].name = "x33";
  vars[4].kind = VarKind::dummy;
  vars[4].level = "3";
  vars[4].parent = "x3";
  return vars;
}

ArmRecord record_fit(const glmm::GlmmFit& fit, const Truth& truth) {
  (void)truth;
  ArmRecord rec;
  rec.converged = fit.converged;
  rec.aic = fit.aic;
  rec.loglik = fit.loglik;
  const auto& names = parameter_names();
  for (std::size_t k = 0; k + 1 < names.size(); ++k) {
    const std::string coef = fit.coef_names[k];
    rec.estimate[names[k]] = fit.beta[static_cast<Eigen::Index>(k)];
    rec.se[names[k]] = fit.se_beta[static_cast<Eigen::Index>(k)];
    rec.lower[names[k]] = fit.ci.at(coef).lower;
    rec.upper[names[k]] = fit.ci.at(coef).upper;
  }
  rec.estimate["sigma_u"] = fit.sigma_u;
  rec.se["sigma_u"] = fit.sigma_u * fit.se_log_sigma_u;
  rec.lower["sigma_u"] = fit.ci.at("sigma_u").lower;
  rec.upper["sigma_u"] = fit.ci.at("sigma_u").upper;
  return rec;
}

ArmRecord fit_arm(const std::vector<ClusterData>& clusters, const SimConfig& cfg) {
  glmm::GlmmOptions gopt;
  gopt.max_iterations = cfg.max_fit_iterations;
  gopt.coef_names = {"x1", "x2", "x32", "x33"};
  const glmm::GlmmFit fit = glmm::fit_glmm(clusters, cfg.n_quad, gopt);
  return record_fit(fit, cfg.truth);
}

ReplicateRecord run_replicate(const SimConfig& cfg, int replicate_index) {
  ReplicateRecord rec;
  rec.replicate = replicate_index;

  const std::vector<ClusterData> actual = simulate_dataset(cfg, replicate_index);
  try {
    rec.arms["sim"] = fit_arm(actual, cfg);
  } catch (const Error& e) {
    rec.arms["sim"].error = e.what();
  }

  for (int order : cfg.moment_orders) {
    const std::string arm = "ps" + std::to_string(order);
    try {
      std::vector<ClusterData> pseudo;
      pseudo.reserve(actual.size());
      for (std::size_t c = 0; c < actual.size(); ++c) {
        const moments::SummaryBundle bundle =
            moments::summarize_cluster(actual[c], simulation_variables(), order);
        optim::LmOptions lm;
        lm.seed = derive_seed(cfg.seed, 0x9E0 + static_cast<std::uint64_t>(order),
                              static_cast<std::uint64_t>(replicate_index));
        auto [ps, diag] = pseudogen::generate_cluster(bundle, lm);
        pseudo.push_back(pseudogen::to_original_scale(ps, bundle));
      }
      rec.arms[arm] = fit_arm(pseudo, cfg);
    } catch (const Error& e) {
      rec.arms[arm].error = e.what();
    }
  }
  return rec;
}

}  // namespace

double ExperimentReport::truth_of(const std::string& parameter) const {
  if (parameter == "beta0") return cfg.truth.beta0;
  if (parameter == "beta1") return cfg.truth.beta1;
  if (parameter == "beta2") return cfg.truth.beta2;
  if (parameter == "beta32") return cfg.truth.beta32;
  if (parameter == "beta33") return cfg.truth.beta33;
  if (parameter == "sigma_u") return cfg.truth.sigma_u;
  throw InvalidInputError("unknown parameter '" + parameter + "'");
}

std::vector<double> ExperimentReport::bias_values(const std::string& arm,
                                                  const std::string& parameter) const {
  const double truth = truth_of(parameter);
  std::vector<double> values;
  for (const auto& rep : replicates) {
    const auto it = rep.arms.find(arm);
    if (it == rep.arms.end() || !it->second.usable()) continue;
    values.push_back(it->second.estimate.at(parameter) - truth);
  }
  return values;
}

double ExperimentReport::mean_abs_bias(const std::string& arm, const std::string& parameter) const {
  const std::vector<double> bias = bias_values(arm, parameter);
  if (bias.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double b : bias) acc += std::abs(b);
  return acc / static_cast<double>(bias.size());
}

double ExperimentReport::coverage(const std::string& arm, const std::string& parameter) const {
  const double truth = truth_of(parameter);
  long covered = 0;
  long usable = 0;
  for (const auto& rep : replicates) {
    const auto it = rep.arms.find(arm);
    if (it == rep.arms.end() || !it->second.usable()) continue;
    ++usable;
    if (it->second.lower.at(parameter) <= truth && truth <= it->second.upper.at(parameter))
      ++covered;
  }
  if (usable == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(covered) / static_cast<double>(usable);
}

int ExperimentReport::nonconverged_count(const std::string& arm) const {
  int count = 0;
  for (const auto& rep : replicates) {
    const auto it = rep.arms.find(arm);
    if (it == rep.arms.end() || !it->second.usable()) ++count;
  }
  return count;
}

ExperimentReport run_experiment(const SimConfig& cfg) {
  validate(cfg);
  ExperimentReport report;
  report.cfg = cfg;
  report.arm_names.push_back("sim");
  for (int order : cfg.moment_orders) report.arm_names.push_back("ps" + std::to_string(order));
  report.replicates.resize(static_cast<std::size_t>(cfg.replicates));

  parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t b) {
    report.replicates[b] = run_replicate(cfg, static_cast<int>(b));
  });
  return report;
}

std::pair<double, double> coverage_band(double p, int B) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("coverage_band: p must be in (0,1)");
  if (B < 1) throw ConfigError("coverage_band: B must be >= 1");
  const double half = 2.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(B));
  return {p - half, p + half};
}

}  // namespace momentfit::simlab
