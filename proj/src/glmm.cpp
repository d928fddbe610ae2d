#include "momentfit/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace momentfit::glmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double log1pexp(double eta) {
  if (eta > 0.0) return eta + std::log1p(std::exp(-eta));
  return std::log1p(std::exp(eta));
}

inline double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// Per-cluster workspace: linear predictor without the random intercept,
// plus a warm start for the conditional-mode search.
struct ClusterWork {
  const ClusterData* data = nullptr;
  Eigen::VectorXd eta0;  // x beta + intercept, refreshed per beta
  double mode = 0.0;

  void refresh(const Eigen::VectorXd& beta) {
    const auto& x = data->x;
    eta0 = Eigen::VectorXd::Constant(x.rows(), beta[0]);
    if (x.cols() > 0) eta0 += x * beta.tail(x.cols());
  }

  double cond_loglik(double u) const {
    const auto& y = data->y;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double eta = eta0[i] + u;
      acc += y[i] * eta - log1pexp(eta);
    }
    return acc;
  }

  // First and second derivative of the conditional log-likelihood in u.
  void cond_derivs(double u, double& d1, double& d2) const {
    const auto& y = data->y;
    d1 = 0.0;
    d2 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double pi = sigmoid(eta0[i] + u);
      d1 += y[i] - pi;
      d2 -= pi * (1.0 - pi);
    }
  }

  // Mode of cond_loglik(u) - u^2 / (2 sigma^2); strictly concave, Newton
  // with step halving. Returns the curvature at the mode through `curv`.
  double find_mode(double sigma_u, double& curv) {
    const double inv_var = 1.0 / (sigma_u * sigma_u);
    double u = mode;
    double h = cond_loglik(u) - 0.5 * u * u * inv_var;
    if (!std::isfinite(h)) {
      u = 0.0;
      h = cond_loglik(0.0);
    }
    for (int iter = 0; iter < 80; ++iter) {
      double d1, d2;
      cond_derivs(u, d1, d2);
      d1 -= u * inv_var;
      d2 -= inv_var;
      if (std::abs(d1) < 1e-11 * (1.0 + std::abs(d2))) break;
      double step = -d1 / d2;
      double u_new = u + step;
      double h_new = cond_loglik(u_new) - 0.5 * u_new * u_new * inv_var;
      int halvings = 0;
      while ((!std::isfinite(h_new) || h_new < h) && halvings < 40) {
        step *= 0.5;
        u_new = u + step;
        h_new = cond_loglik(u_new) - 0.5 * u_new * u_new * inv_var;
        ++halvings;
      }
      if (!(h_new >= h)) break;
      u = u_new;
      h = h_new;
      if (std::abs(step) < 1e-12 * (1.0 + std::abs(u))) break;
    }
    double d1, d2;
    cond_derivs(u, d1, d2);
    curv = d2 - inv_var;
    mode = u;
    return u;
  }

  double marginal_loglik(double sigma_u, const optim::QuadratureRule& rule, bool adaptive) {
    if (sigma_u == 0.0) return cond_loglik(0.0);
    const int k = static_cast<int>(rule.nodes.size());
    Eigen::VectorXd terms(k);
    if (!adaptive) {
      for (int q = 0; q < k; ++q)
        terms[q] = std::log(rule.weights[q]) + cond_loglik(sigma_u * rule.nodes[q]);
      const double top = terms.maxCoeff();
      return top + std::log((terms.array() - top).exp().sum());
    }
    double curv = 0.0;
    const double u_hat = find_mode(sigma_u, curv);
    const double tau = 1.0 / std::sqrt(-curv);
    const double inv_var = 1.0 / (sigma_u * sigma_u);
    const double log_prior_norm = -std::log(sigma_u) - 0.5 * kLog2Pi;
    for (int q = 0; q < k; ++q) {
      const double z = rule.nodes[q];
      const double u = u_hat + tau * z;
      const double log_joint =
          cond_loglik(u) - 0.5 * u * u * inv_var + log_prior_norm;
      terms[q] = std::log(rule.weights[q]) + log_joint + 0.5 * z * z + 0.5 * kLog2Pi;
    }
    const double top = terms.maxCoeff();
    return std::log(tau) + top + std::log((terms.array() - top).exp().sum());
  }
};

// Total marginal log-likelihood over theta = (beta, log sigma_u), with
// per-cluster mode caching across evaluations.
class MarginalObjective {
public:
  MarginalObjective(const std::vector<ClusterData>& clusters, const optim::QuadratureRule& rule)
      : rule_(rule) {
    work_.resize(clusters.size());
    for (std::size_t i = 0; i < clusters.size(); ++i) work_[i].data = &clusters[i];
  }

  double operator()(const Eigen::VectorXd& theta) {
    const Eigen::Index p1 = theta.size() - 1;
    const Eigen::VectorXd beta = theta.head(p1);
    const double sigma_u = std::exp(theta[p1]);
    double total = 0.0;
    for (auto& w : work_) {
      w.refresh(beta);
      total += w.marginal_loglik(sigma_u, rule_, true);
    }
    return total;
  }

private:
  optim::QuadratureRule rule_;
  std::vector<ClusterWork> work_;
};

std::array<double, 5> five_number(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double p) {
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = h - std::floor(h);
    return values[lo] + (values[hi] - values[lo]) * frac;
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

}  // namespace

double logistic_loglik(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                       const Eigen::MatrixXd& x_design) {
  if (!x_design.allFinite() || !y.allFinite() || !beta.allFinite())
    throw InvalidInputError("logistic_loglik: non-finite input");
  const Eigen::VectorXd eta = x_design * beta;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) acc += y[i] * eta[i] - log1pexp(eta[i]);
  return acc;
}

Eigen::VectorXd logistic_grad(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x_design) {
  if (!x_design.allFinite() || !y.allFinite() || !beta.allFinite())
    throw InvalidInputError("logistic_grad: non-finite input");
  const Eigen::VectorXd eta = x_design * beta;
  Eigen::VectorXd pi(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) pi[i] = sigmoid(eta[i]);
  return x_design.transpose() * (y - pi);
}

FixedFit fit_logistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& x_design) {
  const Eigen::Index p1 = x_design.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p1);
  double ll = logistic_loglik(beta, y, x_design);
  bool separated = false;

  Eigen::MatrixXd info(p1, p1);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = x_design * beta;
    Eigen::VectorXd pi(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      pi[i] = sigmoid(eta[i]);
      w[i] = pi[i] * (1.0 - pi[i]);
    }
    const Eigen::VectorXd grad = x_design.transpose() * (y - pi);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-12) break;
    info = x_design.transpose() * w.asDiagonal() * x_design;
    Eigen::VectorXd step = info.ldlt().solve(grad);
    if (!step.allFinite()) break;

    double t = 1.0;
    Eigen::VectorXd beta_new = beta + step;
    double ll_new = logistic_loglik(beta_new, y, x_design);
    int halvings = 0;
    while ((!std::isfinite(ll_new) || ll_new < ll) && halvings < 40) {
      t *= 0.5;
      beta_new = beta + t * step;
      ll_new = logistic_loglik(beta_new, y, x_design);
      ++halvings;
    }
    if (!(ll_new >= ll)) break;
    beta = beta_new;
    ll = ll_new;
    if (beta.norm() > 1e3) {  // likelihood unbounded: complete separation
      separated = true;
      break;
    }
  }

  FixedFit fit;
  fit.beta = beta;
  fit.loglik = logistic_loglik(beta, y, x_design);
  const Eigen::VectorXd grad = logistic_grad(beta, y, x_design);
  fit.converged = !separated && grad.lpNorm<Eigen::Infinity>() < 1e-8;

  const Eigen::VectorXd eta = x_design * beta;
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double pi = sigmoid(eta[i]);
    w[i] = pi * (1.0 - pi);
  }
  info = x_design.transpose() * w.asDiagonal() * x_design;
  fit.vcov = info.ldlt().solve(Eigen::MatrixXd::Identity(p1, p1));
  fit.se = fit.vcov.diagonal().array().max(0.0).sqrt();
  return fit;
}

double cluster_marginal_loglik(const Eigen::VectorXd& beta, double sigma_u,
                               const ClusterData& cluster, const optim::QuadratureRule& rule,
                               bool adaptive) {
  if (sigma_u < 0.0) throw InvalidInputError("cluster_marginal_loglik: sigma_u must be >= 0");
  if (rule.nodes.size() < 1) throw ConfigError("cluster_marginal_loglik: empty quadrature rule");
  ClusterWork work;
  work.data = &cluster;
  work.refresh(beta);
  return work.marginal_loglik(sigma_u, rule, adaptive);
}

double aic(double loglik, int n_params) { return -2.0 * loglik + 2.0 * n_params; }
double aic(const GlmmFit& fit) { return aic(fit.loglik, static_cast<int>(fit.beta.size()) + 1); }
double aic(const FixedFit& fit) { return aic(fit.loglik, static_cast<int>(fit.beta.size())); }

GlmmFit fit_glmm(const std::vector<ClusterData>& clusters, int n_quad, const GlmmOptions& opts) {
  if (clusters.size() < 2) throw InvalidInputError("fit_glmm: need at least 2 clusters");
  long n_total = 0;
  const Eigen::Index p = clusters.front().x.cols();
  for (const auto& c : clusters) {
    if (c.x.cols() != p) throw InvalidInputError("fit_glmm: clusters disagree on predictors");
    if (c.y.size() < 1) throw InvalidInputError("fit_glmm: empty cluster");
    n_total += c.y.size();
  }

  // Pooled fixed-effects start.
  Eigen::VectorXd y_all(n_total);
  Eigen::MatrixXd x_all(n_total, p + 1);
  long row = 0;
  for (const auto& c : clusters) {
    const Eigen::Index n = c.y.size();
    y_all.segment(row, n) = c.y;
    x_all.block(row, 0, n, 1).setOnes();
    if (p > 0) x_all.block(row, 1, n, p) = c.x;
    row += n;
  }
  const FixedFit start = fit_logistic(y_all, x_all);

  const optim::QuadratureRule rule = optim::gauss_hermite_rule(n_quad);
  MarginalObjective objective(clusters, rule);

  Eigen::VectorXd theta0(p + 2);
  theta0.head(p + 1) = start.beta;
  theta0[p + 1] = 0.0;  // log sigma_u = 0, i.e. sigma_u = 1

  optim::MaximizeOptions mopt;
  mopt.max_iterations = opts.max_iterations;
  mopt.tol_grad = opts.tol_grad;
  auto f = [&objective](const Eigen::VectorXd& theta) { return objective(theta); };
  const optim::MaximizeResult res = optim::maximize_loglik(f, theta0, mopt);

  GlmmFit fit;
  fit.beta = res.argmax.head(p + 1);
  const double log_sigma = res.argmax[p + 1];
  fit.boundary_sigma_u = log_sigma < -10.0;
  fit.sigma_u = fit.boundary_sigma_u ? 0.0 : std::exp(log_sigma);
  fit.loglik = res.value;
  fit.converged = res.converged;
  fit.n_quad = n_quad;
  fit.n_obs = n_total;
  fit.n_clusters = static_cast<int>(clusters.size());
  fit.aic = aic(fit.loglik, static_cast<int>(p) + 2);
  fit.bic = -2.0 * fit.loglik + (static_cast<double>(p) + 2.0) * std::log(static_cast<double>(n_total));

  fit.coef_names.push_back("(Intercept)");
  for (Eigen::Index j = 0; j < p; ++j) {
    if (static_cast<std::size_t>(j) < opts.coef_names.size())
      fit.coef_names.push_back(opts.coef_names[static_cast<std::size_t>(j)]);
    else
      fit.coef_names.push_back("x" + std::to_string(j + 1));
  }

  // Wald machinery from the observed information over (beta, log sigma_u).
  const Eigen::MatrixXd info = -res.hessian;
  fit.vcov = info.ldlt().solve(Eigen::MatrixXd::Identity(p + 2, p + 2));
  Eigen::VectorXd se_all = fit.vcov.diagonal();
  bool se_ok = true;
  for (Eigen::Index i = 0; i < se_all.size(); ++i) {
    if (!(se_all[i] > 0.0) || !std::isfinite(se_all[i])) se_ok = false;
  }
  se_all = se_all.array().max(0.0).sqrt();
  if (!se_ok) fit.converged = false;
  fit.se_beta = se_all.head(p + 1);
  fit.se_log_sigma_u = se_all[p + 1];

  const double z = normal_quantile(0.5 + opts.ci_level / 2.0);
  for (Eigen::Index j = 0; j < p + 1; ++j) {
    CiEntry e;
    e.lower = fit.beta[j] - z * fit.se_beta[j];
    e.upper = fit.beta[j] + z * fit.se_beta[j];
    e.method = "wald";
    fit.ci[fit.coef_names[static_cast<std::size_t>(j)]] = e;
  }
  {
    CiEntry e;
    e.lower = std::exp(log_sigma - z * fit.se_log_sigma_u);
    e.upper = std::exp(log_sigma + z * fit.se_log_sigma_u);
    if (fit.boundary_sigma_u) e.lower = 0.0;
    e.method = "wald";
    fit.ci["sigma_u"] = e;
  }

  if (opts.profile_ci) {
    for (const auto& name : fit.coef_names) fit.ci[name] = profile_ci(fit, clusters, name, opts.ci_level);
    fit.ci["sigma_u"] = profile_ci(fit, clusters, "sigma_u", opts.ci_level);
  }
  return fit;
}

namespace {

// Profile log-likelihood at a fixed value of parameter `idx` (theta space:
// beta components then log sigma_u), maximizing over the rest.
double profile_value(MarginalObjective& objective, const Eigen::VectorXd& theta_hat,
                     Eigen::Index idx, double value, Eigen::VectorXd& warm, bool& ok) {
  const Eigen::Index d = theta_hat.size();
  auto embed = [&](const Eigen::VectorXd& reduced) {
    Eigen::VectorXd full(d);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i) full[i] = (i == idx) ? value : reduced[k++];
    return full;
  };
  Eigen::VectorXd reduced0(d - 1);
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      if (i != idx) reduced0[k++] = warm[i];
  }
  auto f = [&](const Eigen::VectorXd& reduced) { return objective(embed(reduced)); };
  optim::MaximizeOptions mopt;
  mopt.max_iterations = 200;
  mopt.tol_grad = 1e-4;
  const optim::MaximizeResult res = optim::maximize_loglik(f, reduced0, mopt);
  ok = std::isfinite(res.value);
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      if (i != idx) warm[i] = res.argmax[k++];
  }
  return res.value;
}

}  // namespace

CiEntry profile_ci(const GlmmFit& fit, const std::vector<ClusterData>& clusters,
                   const std::string& param, double level) {
  const Eigen::Index p1 = fit.beta.size();
  Eigen::Index idx = -1;
  for (Eigen::Index j = 0; j < p1; ++j) {
    if (fit.coef_names[static_cast<std::size_t>(j)] == param) idx = j;
  }
  const bool is_sigma = param == "sigma_u";
  if (is_sigma) idx = p1;
  if (idx < 0) throw InvalidInputError("profile_ci: unknown parameter '" + param + "'");

  CiEntry wald = fit.ci.count(param) ? fit.ci.at(param) : CiEntry{};
  wald.method = "wald";

  const double q = [&] {
    const double zq = normal_quantile(0.5 + level / 2.0);
    return zq * zq;
  }();

  try {
    const optim::QuadratureRule rule = optim::gauss_hermite_rule(fit.n_quad);
    MarginalObjective objective(clusters, rule);
    Eigen::VectorXd theta_hat(p1 + 1);
    theta_hat.head(p1) = fit.beta;
    theta_hat[p1] = fit.sigma_u > 0.0 ? std::log(fit.sigma_u) : -10.0;
    const double l_hat = objective(theta_hat);

    const double step0 = is_sigma ? std::max(fit.se_log_sigma_u, 0.05)
                                  : std::max(fit.se_beta[idx], 1e-3);
    const double center = theta_hat[idx];

    auto deviance = [&](double v, Eigen::VectorXd& warm, bool& ok) {
      const double lp = profile_value(objective, theta_hat, idx, v, warm, ok);
      return 2.0 * (l_hat - lp);
    };

    auto search = [&](double direction) -> double {
      Eigen::VectorXd warm = theta_hat;
      double lo = center;
      double hi = center + direction * step0;
      bool ok = true;
      double d_hi = deviance(hi, warm, ok);
      int expansions = 0;
      while (ok && d_hi < q && expansions < 40) {
        lo = hi;
        hi = center + (hi - center) * 1.8;
        d_hi = deviance(hi, warm, ok);
        ++expansions;
      }
      if (!ok || d_hi < q) throw OptimError("profile bound not bracketed");
      for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double d_mid = deviance(mid, warm, ok);
        if (!ok) throw OptimError("profile inner fit failed");
        if (d_mid < q)
          lo = mid;
        else
          hi = mid;
        if (std::abs(hi - lo) < 1e-5 * (1.0 + std::abs(center))) break;
      }
      return 0.5 * (lo + hi);
    };

    double lower = search(-1.0);
    double upper = search(+1.0);
    if (is_sigma) {
      lower = std::exp(lower);
      upper = std::exp(upper);
    }
    if (!(lower < upper)) throw OptimError("profile bounds inverted");
    CiEntry out;
    out.lower = lower;
    out.upper = upper;
    out.method = "profile";
    return out;
  } catch (const Error&) {
    return wald;  // recorded downgrade
  }
}

Eigen::VectorXd conditional_modes(const GlmmFit& fit, const std::vector<ClusterData>& clusters) {
  Eigen::VectorXd modes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(clusters.size()));
  if (fit.sigma_u <= 0.0) return modes;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    ClusterWork work;
    work.data = &clusters[i];
    work.refresh(fit.beta);
    double curv = 0.0;
    modes[static_cast<Eigen::Index>(i)] = work.find_mode(fit.sigma_u, curv);
  }
  return modes;
}

std::array<double, 5> scaled_residual_summary(const GlmmFit& fit,
                                              const std::vector<ClusterData>& clusters) {
  const Eigen::VectorXd modes = conditional_modes(fit, clusters);
  std::vector<double> residuals;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& c = clusters[i];
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(c.y.size(), fit.beta[0] + modes[static_cast<Eigen::Index>(i)]);
    if (c.x.cols() > 0) eta += c.x * fit.beta.tail(c.x.cols());
    for (Eigen::Index j = 0; j < c.y.size(); ++j) {
      const double pi = sigmoid(eta[j]);
      residuals.push_back((c.y[j] - pi) / std::sqrt(pi * (1.0 - pi)));
    }
  }
  return five_number(std::move(residuals));
}

std::array<double, 5> scaled_residual_summary(const FixedFit& fit, const Eigen::VectorXd& y,
                                              const Eigen::MatrixXd& x_design) {
  const Eigen::VectorXd eta = x_design * fit.beta;
  std::vector<double> residuals;
  residuals.reserve(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double pi = sigmoid(eta[i]);
    residuals.push_back((y[i] - pi) / std::sqrt(pi * (1.0 - pi)));
  }
  return five_number(std::move(residuals));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidInputError("normal_quantile: p must be in (0,1)");
  // Acklam's rational approximation, then one Halley refinement.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double u = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double u = p - 0.5;
    const double t = u * u;
    x = (((((a[0] * t + a[1]) * t + a[2]) * t + a[3]) * t + a[4]) * t + a[5]) * u /
        (((((b[0] * t + b[1]) * t + b[2]) * t + b[3]) * t + b[4]) * t + 1.0);
  } else {
    const double u = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  }
  // Halley step against the exact CDF.
  const double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = err * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace momentfit::glmm
