#include "momentfit/optim.hpp"

#include <cmath>
#include <limits>

namespace momentfit::optim {

namespace {

constexpr double kDampingCeiling = 1e12;

Eigen::MatrixXd forward_difference_jacobian(const ResidualFn& residual_fn,
                                            const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& r0) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd jac(r0.size(), n);
  Eigen::VectorXd xh = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = std::max(1e-7, 1e-7 * std::abs(x[j]));
    xh[j] = x[j] + h;
    jac.col(j) = (residual_fn(xh) - r0) / h;
    xh[j] = x[j];
  }
  return jac;
}

// Damped step: argmin |J d + r|^2 + lambda |d|^2. Solved in whichever space
// is smaller; both forms agree for lambda > 0.
Eigen::VectorXd damped_step(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r, double lambda) {
  const Eigen::Index m = jac.rows();
  const Eigen::Index n = jac.cols();
  if (m < n) {
    Eigen::MatrixXd a = jac * jac.transpose();
    a.diagonal().array() += lambda;
    return -jac.transpose() * a.ldlt().solve(r);
  }
  Eigen::MatrixXd a = jac.transpose() * jac;
  a.diagonal().array() += lambda;
  return -a.ldlt().solve(jac.transpose() * r);
}

}  // namespace

LmResult lm_solve(const ResidualFn& residual_fn, const JacobianFn& jacobian_fn,
                  const Eigen::VectorXd& x0, const LmOptions& opts) {
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = residual_fn(x);
  if (!r.allFinite()) throw InvalidInputError("lm_solve: residual is not finite at the start");

  const int max_iter =
      opts.max_iterations > 0 ? opts.max_iterations : 400 * static_cast<int>(std::max<Eigen::Index>(x.size(), 1));
  double ssd = r.squaredNorm();
  double lambda = opts.initial_damping;

  LmResult out;
  out.solution = x;
  out.ssd = ssd;
  out.converged_by = LmStop::max_iter;

  int iter = 0;
  while (iter < max_iter) {
    if (ssd < opts.tol_ssd) {
      out.converged_by = LmStop::ssd_floor;
      break;
    }
    const Eigen::MatrixXd jac = jacobian_fn ? jacobian_fn(x) : forward_difference_jacobian(residual_fn, x, r);
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < opts.tol_grad) {
      out.converged_by = LmStop::grad_floor;
      break;
    }

    bool stepped = false;
    bool saw_nonfinite = false;
    while (true) {
      const Eigen::VectorXd step = damped_step(jac, r, lambda);
      const double step_floor = opts.tol_step * (x.norm() + opts.tol_step);
      Eigen::VectorXd x_try = x + step;
      Eigen::VectorXd r_try = residual_fn(x_try);
      const bool finite = r_try.allFinite();
      if (!finite) saw_nonfinite = true;
      const double ssd_try = finite ? r_try.squaredNorm() : std::numeric_limits<double>::infinity();
      ++iter;
      if (finite && ssd_try <= ssd) {
        x = std::move(x_try);
        r = std::move(r_try);
        ssd = ssd_try;
        lambda = std::max(opts.damping_down * lambda, 1e-14);
        stepped = true;
        if (step.norm() < step_floor) {
          out.converged_by = LmStop::step_floor;
        }
        break;
      }
      lambda *= opts.damping_up;
      if (lambda > kDampingCeiling) {
        if (saw_nonfinite)
          throw OptimError("lm_solve: damping exceeded 1e12 while residuals stayed non-finite");
        // Finite residuals but no improvable direction left.
        out.converged_by = LmStop::step_floor;
        stepped = true;
        break;
      }
      if (step.norm() < step_floor) {
        out.converged_by = LmStop::step_floor;
        stepped = true;
        break;
      }
      if (iter >= max_iter) break;
    }
    if (!stepped) break;  // iteration budget exhausted mid-rejection
    if (out.converged_by == LmStop::step_floor) break;
  }

  out.solution = x;
  out.ssd = ssd;
  out.iterations = iter;
  if (out.converged_by == LmStop::max_iter && ssd < opts.tol_ssd) out.converged_by = LmStop::ssd_floor;
  return out;
}

LmResult lm_solve(const ResidualFn& residual_fn, const Eigen::VectorXd& x0, const LmOptions& opts) {
  return lm_solve(residual_fn, JacobianFn{}, x0, opts);
}

namespace {

Eigen::VectorXd central_difference_grad(const ScalarFn& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xh = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    xh[j] = x[j] + h;
    const double fp = f(xh);
    xh[j] = x[j] - h;
    const double fm = f(xh);
    xh[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd hessian_from_grad(const GradFn& grad, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd xh = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = 1e-5 * std::max(1.0, std::abs(x[j]));
    xh[j] = x[j] + step;
    const Eigen::VectorXd gp = grad(xh);
    xh[j] = x[j] - step;
    const Eigen::VectorXd gm = grad(xh);
    xh[j] = x[j];
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace

MaximizeResult maximize_loglik(const ScalarFn& f, const GradFn& grad, const Eigen::VectorXd& x0,
                               const MaximizeOptions& opts) {
  const GradFn g_eff = grad ? grad : GradFn([&f](const Eigen::VectorXd& v) {
    return central_difference_grad(f, v);
  });

  Eigen::VectorXd x = x0;
  double fx = f(x);
  if (!std::isfinite(fx)) throw InvalidInputError("maximize_loglik: objective not finite at start");
  Eigen::VectorXd g = g_eff(x);

  const Eigen::Index n = x.size();
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool converged = false;
  bool line_search_failed = false;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < opts.tol_grad) {
      converged = true;
      break;
    }
    Eigen::VectorXd direction = hinv * g;
    if (direction.dot(g) <= 0.0) {
      hinv = Eigen::MatrixXd::Identity(n, n);  // curvature reset
      direction = g;
    }

    double t = 1.0;
    const double slope = g.dot(direction);
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 50; ++halvings) {
      x_new = x + t * direction;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      line_search_failed = true;
      break;
    }

    Eigen::VectorXd g_new = g_eff(x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd dy = g_new - g;  // ascent: curvature pair is (s, -dy)
    const double sy = -s.dot(dy);
    if (sy > 1e-12 * s.norm() * dy.norm()) {
      const Eigen::VectorXd hy = hinv * (-dy);
      const double yhy = (-dy).dot(hy);
      hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
      hinv -= (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = std::move(x_new);
    fx = f_new;
    g = std::move(g_new);
  }

  MaximizeResult out;
  out.argmax = x;
  out.value = fx;
  out.converged = converged && !line_search_failed;
  out.hessian = hessian_from_grad(g_eff, x);
  return out;
}

MaximizeResult maximize_loglik(const ScalarFn& f, const Eigen::VectorXd& x0,
                               const MaximizeOptions& opts) {
  return maximize_loglik(f, GradFn{}, x0, opts);
}

QuadratureRule gauss_hermite_rule(int k) {
  if (k < 1 || k > 100) throw ConfigError("gauss_hermite_rule: k must be in [1, 100]");
  QuadratureRule rule;
  rule.nodes = Eigen::VectorXd::Zero(k);
  rule.weights = Eigen::VectorXd::Zero(k);
  if (k == 1) {
    rule.weights[0] = 1.0;
    return rule;
  }

  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
  // recurrence He_{n+1}(x) = x He_n(x) - n He_{n-1}(x): off-diagonals
  // sqrt(n), nodes are eigenvalues, weights the squared first components.
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(k, k);
  for (int i = 1; i < k; ++i) {
    const double b = std::sqrt(static_cast<double>(i));
    j(i, i - 1) = b;
    j(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(j);
  rule.nodes = solver.eigenvalues();
  for (int i = 0; i < k; ++i) {
    const double v = solver.eigenvectors()(0, i);
    rule.weights[i] = v * v;
  }

  // Enforce exact symmetry about zero.
  for (int i = 0; i < k / 2; ++i) {
    const int mirror = k - 1 - i;
    const double node = 0.5 * (rule.nodes[mirror] - rule.nodes[i]);
    rule.nodes[i] = -node;
    rule.nodes[mirror] = node;
    const double w = 0.5 * (rule.weights[i] + rule.weights[mirror]);
    rule.weights[i] = w;
    rule.weights[mirror] = w;
  }
  if (k % 2 == 1) rule.nodes[k / 2] = 0.0;
  rule.weights /= rule.weights.sum();
  return rule;
}

double check_gradient(const ScalarFn& f, const GradFn& grad, const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = grad(x);
  Eigen::VectorXd xh = x;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    xh[j] = x[j] + h;
    const double fp = f(xh);
    xh[j] = x[j] - h;
    const double fm = f(xh);
    xh[j] = x[j];
    const double fd = (fp - fm) / (2.0 * h);
    double err;
    if (!std::isfinite(fd) || !std::isfinite(g[j])) {
      err = std::numeric_limits<double>::infinity();
    } else {
      err = std::abs(g[j] - fd) / (1.0 + std::abs(g[j]));
    }
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace momentfit::optim
