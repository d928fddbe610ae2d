#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "momentfit/glmm.hpp"
#include "momentfit/moments.hpp"

namespace momentfit::simlab {

using moments::ClusterData;

struct Truth {
  double beta0 = -4.16;
  double beta1 = 0.32;
  double beta2 = -0.24;
  double beta32 = 1.20;
  double beta33 = 0.74;
  double sigma_u = 1.195;
};

struct PredictorLaws {
  double normal_mean = 0.0;
  double normal_var = 1.0;
  double poisson_lambda = 1.0;
  std::array<double, 3> multinomial_p = {0.25, 0.55, 0.20};
};

struct SimConfig {
  int m = 50;          // clusters
  int n = 60;          // observations per cluster
  int replicates = 20;
  Truth truth;
  PredictorLaws laws;
  std::vector<int> moment_orders = {2, 3, 4};
  std::uint64_t seed = 1;
  int n_quad = 7;
  int threads = 1;
  int max_fit_iterations = 500;
};

void validate(const SimConfig& cfg);

// Ordered parameter labels shared by reports: beta0..beta33 then sigma_u.
const std::vector<std::string>& parameter_names();

// One replicate of the generative model: X1 normal, X2 Poisson, X3 a
// three-level multinomial dummy-coded against its first level, random
// intercept per cluster. Deterministic in (cfg.seed, replicate_index).
std::vector<ClusterData> simulate_dataset(const SimConfig& cfg, int replicate_index);

// Fit of one arm in one replicate. `error` holds the reason when the arm
// could not produce estimates at all.
struct ArmRecord {
  bool converged = false;
  std::map<std::string, double> estimate;
  std::map<std::string, double> se;
  std::map<std::string, double> lower;
  std::map<std::string, double> upper;
  double aic = 0.0;
  double loglik = 0.0;
  std::string error;

  bool usable() const { return error.empty() && converged; }
};

struct ReplicateRecord {
  int replicate = 0;
  std::map<std::string, ArmRecord> arms;  // "sim", "ps2", "ps3", "ps4"
};

struct ExperimentReport {
  SimConfig cfg;
  std::vector<std::string> arm_names;
  std::vector<ReplicateRecord> replicates;

  double truth_of(const std::string& parameter) const;
  // Mean absolute bias over usable replicates of one arm.
  double mean_abs_bias(const std::string& arm, const std::string& parameter) const;
  // Share of usable replicates whose interval covers the truth.
  double coverage(const std::string& arm, const std::string& parameter) const;
  int nonconverged_count(const std::string& arm) const;
  std::vector<double> bias_values(const std::string& arm, const std::string& parameter) const;
};

// Full protocol: per replicate, fit the simulated data, then for each
// requested order summarize -> generate -> fit the pseudo-data. Replicates
// run in parallel when cfg.threads > 1 with identical results.
ExperimentReport run_experiment(const SimConfig& cfg);

// Nominal coverage acceptance band p +/- 2 sqrt(p(1-p)/B).
std::pair<double, double> coverage_band(double p, int B);

}  // namespace momentfit::simlab
