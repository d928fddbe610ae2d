#include "momentfit/pseudogen.hpp"

#include <algorithm>
#include <cmath>

#include "momentfit/rng.hpp"

namespace momentfit::pseudogen {

using moments::MomentSpec;
using moments::VarKind;

double MomentDiagnostics::worst_abs_difference(int total_order) const {
  double worst = 0.0;
  for (const auto& row : rows) {
    if (row.index.total_order() == total_order) worst = std::max(worst, row.abs_difference);
  }
  return worst;
}

double MomentDiagnostics::worst_abs_difference() const {
  double worst = 0.0;
  for (const auto& row : rows) worst = std::max(worst, row.abs_difference);
  return worst;
}

Eigen::VectorXd generate_response(long n, double p_bar, std::uint64_t seed) {
  if (n < 1) throw InvalidInputError("generate_response: n must be >= 1");
  if (!(p_bar >= 0.0 && p_bar <= 1.0))
    throw InvalidInputError("generate_response: p_bar must be in [0,1]");
  const long ones = std::llround(static_cast<double>(n) * p_bar);
  std::vector<double> values(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < ones; ++i) values[static_cast<std::size_t>(i)] = 1.0;
  Rng rng(derive_seed(seed, 0x79, 0));
  rng.shuffle(values);
  Eigen::VectorXd y(n);
  for (long i = 0; i < n; ++i) y[i] = values[static_cast<std::size_t>(i)];
  return y;
}

namespace {

// Bundle targets that involve predictor j (variable position j+1) and only
// columns generated so far.
struct VariableTargets {
  std::vector<MultiIndex> indices;
  std::vector<double> values;
};

VariableTargets targets_for_variable(const SummaryBundle& bundle, int j) {
  const int pos = j + 1;
  VariableTargets out;
  for (const auto& [index, value] : bundle.moments) {
    if (index.orders[static_cast<std::size_t>(pos)] < 1) continue;
    bool later = false;
    for (std::size_t k = static_cast<std::size_t>(pos) + 1; k < index.orders.size(); ++k) {
      if (index.orders[k] != 0) later = true;
    }
    if (later) continue;
    out.indices.push_back(index);
    out.values.push_back(value);
  }
  return out;
}

double target_value(const SummaryBundle& bundle, const MultiIndex& r) {
  const auto it = bundle.moments.find(r);
  if (it == bundle.moments.end())
    throw InvalidInputError("bundle is missing moment " + r.to_string());
  return it->second;
}

MultiIndex unit_index(int var_count, int pos) {
  MultiIndex r;
  r.orders.assign(static_cast<std::size_t>(var_count), 0);
  r.orders[static_cast<std::size_t>(pos)] = 1;
  return r;
}

MultiIndex scaled_index(int var_count, int pos, int order) {
  MultiIndex r;
  r.orders.assign(static_cast<std::size_t>(var_count), 0);
  r.orders[static_cast<std::size_t>(pos)] = order;
  return r;
}

// Residuals and analytic Jacobian of the moment-matching system for one
// unknown column x against fixed centered companion columns.
//
// A target with exponent a on x and companion product w_i contributes
//   t - (1/n) sum_i (x_i - xbar)^a w_i,
// whose derivative in x_l is
//   -(1/n) [ a (x_l - xbar)^{a-1} w_l - (a/n) sum_i (x_i - xbar)^{a-1} w_i ].
class MomentSystem {
public:
  MomentSystem(const VariableTargets& targets, int pos, const Eigen::MatrixXd& known_columns)
      : targets_(targets), pos_(pos) {
    const Eigen::Index n = known_columns.rows();
    Eigen::VectorXd means = known_columns.cols() > 0
                                ? Eigen::VectorXd(known_columns.colwise().mean())
                                : Eigen::VectorXd();
    weights_.reserve(targets_.indices.size());
    exponents_.reserve(targets_.indices.size());
    for (const auto& index : targets_.indices) {
      exponents_.push_back(index.orders[static_cast<std::size_t>(pos_)]);
      Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
      for (Eigen::Index c = 0; c < known_columns.cols(); ++c) {
        const int e = index.orders[static_cast<std::size_t>(c)];
        if (e == 0) continue;
        const auto centered = known_columns.col(c).array() - means[c];
        for (Eigen::Index i = 0; i < n; ++i) w[i] *= std::pow(centered[i], e);
      }
      weights_.push_back(std::move(w));
    }
  }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const {
    const double n = static_cast<double>(x.size());
    const double mean = x.mean();
    Eigen::VectorXd r(static_cast<Eigen::Index>(targets_.indices.size()));
    for (std::size_t t = 0; t < targets_.indices.size(); ++t) {
      const int a = exponents_[t];
      double achieved;
      if (targets_.indices[t].total_order() == 1) {
        achieved = mean;
      } else {
        double acc = 0.0;
        const auto& w = weights_[t];
        for (Eigen::Index i = 0; i < x.size(); ++i) acc += std::pow(x[i] - mean, a) * w[i];
        achieved = acc / n;
      }
      r[static_cast<Eigen::Index>(t)] = targets_.values[t] - achieved;
    }
    return r;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const {
    const Eigen::Index n = x.size();
    const double dn = static_cast<double>(n);
    const double mean = x.mean();
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(targets_.indices.size()), n);
    for (std::size_t t = 0; t < targets_.indices.size(); ++t) {
      if (targets_.indices[t].total_order() == 1) {
        jac.row(static_cast<Eigen::Index>(t)).setConstant(-1.0 / dn);
        continue;
      }
      const int a = exponents_[t];
      const auto& w = weights_[t];
      double mean_term = 0.0;  // (a/n) sum_i (x_i - xbar)^{a-1} w_i
      Eigen::VectorXd point(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double c = a >= 2 ? std::pow(x[i] - mean, a - 1) : 1.0;
        point[i] = a * c * w[i];
        mean_term += point[i];
      }
      mean_term /= dn;
      for (Eigen::Index i = 0; i < n; ++i) {
        jac(static_cast<Eigen::Index>(t), i) = -(point[i] - mean_term) / dn;
      }
    }
    return jac;
  }

private:
  VariableTargets targets_;
  int pos_;
  std::vector<Eigen::VectorXd> weights_;
  std::vector<int> exponents_;
};

}  // namespace

Eigen::VectorXd initialize_predictor(const SummaryBundle& bundle, int j, std::uint64_t seed) {
  const int pos = j + 1;
  const long n = bundle.n;
  const double mean = target_value(bundle, unit_index(bundle.var_count(), pos));
  const double var = target_value(bundle, scaled_index(bundle.var_count(), pos, 2));
  const auto& meta = bundle.variables[static_cast<std::size_t>(pos)];

  Rng rng(derive_seed(seed, 0xA1, static_cast<std::uint64_t>(j)));
  Eigen::VectorXd x(n);
  if (meta.kind == VarKind::binary || meta.kind == VarKind::dummy) {
    for (long i = 0; i < n; ++i) {
      const double base = rng.uniform() < mean ? 1.0 : 0.0;
      x[i] = base + rng.normal(0.0, 0.1);
    }
  } else {
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (long i = 0; i < n; ++i) x[i] = rng.normal(mean, sd);
  }
  return x;
}

Eigen::VectorXd generate_predictor(const SummaryBundle& bundle, int j,
                                   const Eigen::VectorXd& y_pi, const Eigen::MatrixXd& x_prev,
                                   const optim::LmOptions& opts, double& achieved_ssd,
                                   std::vector<std::string>* warnings) {
  const int pos = j + 1;
  if (pos >= bundle.var_count()) throw InvalidInputError("generate_predictor: bad variable index");
  const long n = bundle.n;
  if (y_pi.size() != n || x_prev.rows() != n || x_prev.cols() != j)
    throw InvalidInputError("generate_predictor: shape mismatch with bundle");

  Eigen::MatrixXd known(n, j + 1);
  known.col(0) = y_pi;
  if (j > 0) known.rightCols(j) = x_prev;

  const VariableTargets targets = targets_for_variable(bundle, j);
  MomentSystem system(targets, pos, known);
  const optim::ResidualFn residual_fn = [&system](const Eigen::VectorXd& x) {
    return system.residuals(x);
  };
  const optim::JacobianFn jacobian_fn = [&system](const Eigen::VectorXd& x) {
    return system.jacobian(x);
  };

  optim::LmResult best =
      optim::lm_solve(residual_fn, jacobian_fn, initialize_predictor(bundle, j, opts.seed), opts);

  const bool underdetermined = n > static_cast<long>(targets.indices.size());
  if (best.ssd > 1e-8 && underdetermined) {
    // One restart from a fresh seed; keep the better result.
    optim::LmResult retry = optim::lm_solve(
        residual_fn, jacobian_fn,
        initialize_predictor(bundle, j, derive_seed(opts.seed, 0x5EED, 1)), opts);
    if (retry.ssd < best.ssd) best = std::move(retry);
  }

  achieved_ssd = best.ssd;
  if (best.ssd > 1e-6 && warnings != nullptr) {
    warnings->push_back("cluster '" + bundle.cluster_id + "' variable '" +
                        bundle.variables[static_cast<std::size_t>(pos)].name +
                        "': moment match SSD " + std::to_string(best.ssd) + " above 1e-6 (" +
                        std::to_string(targets.indices.size()) + " targets, n=" +
                        std::to_string(n) + ")");
  }
  return best.solution;
}

std::pair<PseudoDataset, MomentDiagnostics> generate_cluster(const SummaryBundle& bundle,
                                                             const optim::LmOptions& opts) {
  if (bundle.n < 1) throw InvalidInputError("generate_cluster: bundle has no observations");
  const int p = bundle.predictor_count();

  optim::LmOptions local = opts;
  local.seed = derive_seed(opts.seed, fnv1a64(bundle.cluster_id), 0);

  PseudoDataset ps;
  ps.cluster_id = bundle.cluster_id;
  ps.generation_seed = local.seed;
  ps.y_pi = generate_response(bundle.n, bundle.response_mean, local.seed);
  ps.x_pi.resize(bundle.n, p);
  ps.achieved_ssd_per_variable.resize(p);

  MomentDiagnostics diag;
  for (int j = 0; j < p; ++j) {
    optim::LmOptions var_opts = local;
    var_opts.seed = derive_seed(local.seed, 0xC0, static_cast<std::uint64_t>(j));
    double ssd = 0.0;
    ps.x_pi.col(j) = generate_predictor(bundle, j, ps.y_pi, ps.x_pi.leftCols(j), var_opts, ssd,
                                        &diag.warnings);
    ps.achieved_ssd_per_variable[j] = ssd;
  }

  Eigen::MatrixXd all(bundle.n, p + 1);
  all.col(0) = ps.y_pi;
  if (p > 0) all.rightCols(p) = ps.x_pi;
  for (const auto& [index, target] : bundle.moments) {
    DiagnosticRow row;
    row.index = index;
    row.target = target;
    row.achieved = moments::evaluate_moment(all, index);
    row.abs_difference = std::abs(row.target - row.achieved);
    diag.rows.push_back(std::move(row));
  }
  return {std::move(ps), std::move(diag)};
}

moments::ClusterData to_cluster_data(const PseudoDataset& ps) {
  moments::ClusterData data;
  data.cluster_id = ps.cluster_id;
  data.y = ps.y_pi;
  data.x = ps.x_pi;
  return data;
}

moments::ClusterData to_original_scale(const PseudoDataset& ps, const SummaryBundle& bundle) {
  moments::ClusterData data = to_cluster_data(ps);
  for (int j = 0; j < bundle.predictor_count(); ++j) {
    const auto& meta = bundle.variables[static_cast<std::size_t>(j + 1)];
    if (meta.standardized) {
      data.x.col(j) = (data.x.col(j).array() * meta.scale) + meta.center;
    }
  }
  return data;
}

}  // namespace momentfit::pseudogen
