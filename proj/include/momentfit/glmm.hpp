#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "momentfit/moments.hpp"
#include "momentfit/optim.hpp"

namespace momentfit::glmm {

using moments::ClusterData;

struct FixedFit {
  Eigen::VectorXd beta;  // intercept first
  Eigen::VectorXd se;
  double loglik = 0.0;
  bool converged = false;
  Eigen::MatrixXd vcov;
};

struct CiEntry {
  double lower = 0.0;
  double upper = 0.0;
  std::string method;  // "wald" or "profile"
};

struct GlmmFit {
  Eigen::VectorXd beta;  // intercept first
  double sigma_u = 0.0;
  Eigen::VectorXd se_beta;
  double se_log_sigma_u = 0.0;
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  int n_quad = 7;
  bool converged = false;
  bool boundary_sigma_u = false;
  std::vector<std::string> coef_names;  // "(Intercept)", predictors...
  std::map<std::string, CiEntry> ci;    // coefficients plus "sigma_u"
  Eigen::MatrixXd vcov;                 // over (beta, log sigma_u)
  long n_obs = 0;
  int n_clusters = 0;
};

struct GlmmOptions {
  int max_iterations = 500;
  double tol_grad = 1e-6;
  double ci_level = 0.95;
  bool profile_ci = false;
  std::vector<std::string> coef_names;  // optional labels for predictors
};

// Log-likelihood of binary logistic regression on a design matrix that
// already includes the intercept column: sum y*eta - sum log(1+exp(eta)),
// evaluated through log1p for stability.
double logistic_loglik(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                       const Eigen::MatrixXd& x_design);
Eigen::VectorXd logistic_grad(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x_design);

// Newton/IRLS maximum likelihood. Converged when max |grad| < 1e-8; a
// coefficient norm beyond 1e3 is treated as separation and flagged instead.
FixedFit fit_logistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& x_design);

// Marginal log-likelihood of one cluster under a random intercept:
// log integral of g(y | u; beta) phi(u; 0, sigma_u^2) du. Adaptive mode
// recenters and rescales the rule at the cluster's conditional mode using
// the Laplace curvature; sigma_u == 0 reduces exactly to the fixed-effects
// log-likelihood. The cluster's x matrix holds raw predictors (no intercept
// column); beta has the intercept first.
double cluster_marginal_loglik(const Eigen::VectorXd& beta, double sigma_u,
                               const ClusterData& cluster, const optim::QuadratureRule& rule,
                               bool adaptive = true);

// Maximum likelihood for the random-intercept model over (beta, log sigma_u)
// with k-point adaptive quadrature. Starts from the pooled fixed-effects fit
// and sigma_u = 1; Wald intervals by default, profile on request.
GlmmFit fit_glmm(const std::vector<ClusterData>& clusters, int n_quad = 7,
                 const GlmmOptions& opts = {});

// Profile-likelihood interval for one parameter ("(Intercept)", a predictor
// name, or "sigma_u"). Falls back to the Wald interval, tagged "wald", when
// the profile search fails.
CiEntry profile_ci(const GlmmFit& fit, const std::vector<ClusterData>& clusters,
                   const std::string& param, double level = 0.95);

double aic(double loglik, int n_params);
double aic(const GlmmFit& fit);
double aic(const FixedFit& fit);

// Conditional modes of the random intercepts at the fitted parameters.
Eigen::VectorXd conditional_modes(const GlmmFit& fit, const std::vector<ClusterData>& clusters);

// Five-number summary (min, Q1, median, Q3, max) of Pearson residuals at the
// conditional-mode random effects. Type-7 quantiles.
std::array<double, 5> scaled_residual_summary(const GlmmFit& fit,
                                              const std::vector<ClusterData>& clusters);
std::array<double, 5> scaled_residual_summary(const FixedFit& fit, const Eigen::VectorXd& y,
                                              const Eigen::MatrixXd& x_design);

// Standard normal quantile, accurate to ~1e-14 (rational approximation with
// a Halley refinement step).
double normal_quantile(double p);

// Two-sided normal p-value for a z statistic.
double two_sided_p(double z);

}  // namespace momentfit::glmm
