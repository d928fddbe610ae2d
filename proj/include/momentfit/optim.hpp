#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "momentfit/errors.hpp"

namespace momentfit::optim {

struct LmOptions {
  int max_iterations = 0;  // 0 means 400 * dimension
  double tol_ssd = 1e-10;
  double tol_step = 1e-10;
  double tol_grad = 1e-10;
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 0.1;
  std::uint64_t seed = 1;  // consumed by callers that randomize starts
};

enum class LmStop { ssd_floor, step_floor, grad_floor, max_iter };

struct LmResult {
  Eigen::VectorXd solution;
  double ssd = 0.0;
  int iterations = 0;
  LmStop converged_by = LmStop::max_iter;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
using ScalarFn = std::function<double(const Eigen::VectorXd&)>;
using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Levenberg-Marquardt least squares: minimizes |residual(x)|^2 from x0.
// Accepted steps never increase the SSD; rejected steps raise the damping.
// When the unknown count exceeds the residual count the damped step is
// computed in the dual (residual-space) form, so underdetermined moment
// systems cost O(targets^2 * n) instead of O(n^3).
LmResult lm_solve(const ResidualFn& residual_fn, const JacobianFn& jacobian_fn,
                  const Eigen::VectorXd& x0, const LmOptions& opts = {});

// Same, with a forward-difference Jacobian (step 1e-7 * max(1, |x_j|)).
LmResult lm_solve(const ResidualFn& residual_fn, const Eigen::VectorXd& x0,
                  const LmOptions& opts = {});

struct MaximizeOptions {
  int max_iterations = 500;
  double tol_grad = 1e-8;
};

struct MaximizeResult {
  Eigen::VectorXd argmax;
  double value = 0.0;
  bool converged = false;
  Eigen::MatrixXd hessian;  // second derivatives of f at the maximum
};

// BFGS ascent with backtracking line search. If `grad` is empty, central
// differences are used. The returned Hessian is a finite-difference estimate
// of the curvature at the maximum (negative-definite there), from which Wald
// standard errors follow as sqrt(diag((-H)^-1)).
MaximizeResult maximize_loglik(const ScalarFn& f, const GradFn& grad, const Eigen::VectorXd& x0,
                               const MaximizeOptions& opts = {});
MaximizeResult maximize_loglik(const ScalarFn& f, const Eigen::VectorXd& x0,
                               const MaximizeOptions& opts = {});

// Nodes and weights normalized for expectations against the standard normal
// density: sum w_i g(node_i) ~ E[g(Z)], exact for polynomials of degree
// <= 2k-1. Weights sum to one; nodes are symmetric about zero.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

QuadratureRule gauss_hermite_rule(int k);

// Max over coordinates of |analytic - central difference| / (1 + |analytic|).
double check_gradient(const ScalarFn& f, const GradFn& grad, const Eigen::VectorXd& x);

}  // namespace momentfit::optim
