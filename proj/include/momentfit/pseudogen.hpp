#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "momentfit/moments.hpp"
#include "momentfit/optim.hpp"

namespace momentfit::pseudogen {

using moments::MultiIndex;
using moments::SummaryBundle;

// Per-cluster generated stand-in for the inaccessible data. Columns live on
// the bundle scale (standardization applied); to_original_scale maps them
// back. The response is strictly binary; pseudo-predictors for binary
// variables are generally not.
struct PseudoDataset {
  std::string cluster_id;
  Eigen::VectorXd y_pi;
  Eigen::MatrixXd x_pi;
  Eigen::VectorXd achieved_ssd_per_variable;  // one entry per predictor
  std::uint64_t generation_seed = 0;
};

struct DiagnosticRow {
  MultiIndex index;
  double target = 0.0;
  double achieved = 0.0;
  double abs_difference = 0.0;
};

struct MomentDiagnostics {
  std::vector<DiagnosticRow> rows;  // one per moment target, canonical order
  std::vector<std::string> warnings;

  double worst_abs_difference(int total_order) const;
  double worst_abs_difference() const;
};

// Binary response with exactly round(n * p_bar) ones, positions shuffled
// deterministically by seed.
Eigen::VectorXd generate_response(long n, double p_bar, std::uint64_t seed);

// Moment-consistent random start for predictor j (0-based among predictors):
// a seeded normal draw with the target mean and variance; binary and dummy
// variables start from jittered 0/1 draws so the Jacobian is not singular.
Eigen::VectorXd initialize_predictor(const SummaryBundle& bundle, int j, std::uint64_t seed);

// Least-squares match of every bundle target that involves predictor j and
// only already-generated columns. Appends a warning when the achieved SSD
// stays above 1e-6 (overdetermined small-n regime).
Eigen::VectorXd generate_predictor(const SummaryBundle& bundle, int j,
                                   const Eigen::VectorXd& y_pi, const Eigen::MatrixXd& x_prev,
                                   const optim::LmOptions& opts, double& achieved_ssd,
                                   std::vector<std::string>* warnings);

// Response first, then predictors in bundle order; diagnostics cover every
// moment target. The per-cluster stream is derived from opts.seed and the
// cluster id, so runs are reproducible and order-independent.
std::pair<PseudoDataset, MomentDiagnostics> generate_cluster(const SummaryBundle& bundle,
                                                             const optim::LmOptions& opts = {});

// Pseudo-data as a cluster on the bundle scale.
moments::ClusterData to_cluster_data(const PseudoDataset& ps);

// Pseudo-data with standardized columns mapped back to the original scale
// via the bundle's center/scale.
moments::ClusterData to_original_scale(const PseudoDataset& ps, const SummaryBundle& bundle);

}  // namespace momentfit::pseudogen
