#include <cmath>
#include <limits>
#include <stdexcept>

#include "droughtrisk/numerics.hpp"

namespace droughtrisk::numerics {
namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 50;

struct LineSearchResult {
  bool accepted = false;
  Vector x;
  double f = 0.0;
};

LineSearchResult backtrack(const std::function<double(const Vector&)>& f,
                           const Vector& x, double fx, const Vector& g,
                           const Vector& direction, double step, int& evals) {
  const double slope = g.dot(direction);
  for (int k = 0; k < kMaxBacktracks; ++k) {
    Vector trial = x + step * direction;
    const double ft = f(trial);
    ++evals;
    if (std::isfinite(ft) && ft <= fx + kArmijo * step * slope) {
      return {true, std::move(trial), ft};
    }
    step *= 0.5;
  }
  return {false, x, fx};
}

}  // namespace

double converged_gradient_threshold(double f) {
  return 1e-6 * std::max(1.0, std::abs(f));
}

Vector numerical_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double fx) {
  static const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = base_step * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    const bool ok_p = std::isfinite(fp);
    const bool ok_m = std::isfinite(fm);
    if (ok_p && ok_m) {
      g[i] = (fp - fm) / (2.0 * h);
    } else if (ok_p) {
      g[i] = (fp - fx) / h;
    } else if (ok_m) {
      g[i] = (fx - fm) / h;
    } else {
      g[i] = 0.0;
    }
  }
  return g;
}

MinimizeResult minimize(const Objective& objective, const Vector& x0,
                        const ToleranceConfig& cfg) {
  cfg.validate();
  if (!objective.value) throw std::invalid_argument("minimize: objective has no value function");

  MinimizeResult out;
  int evals = 0;
  const auto n = x0.size();
  auto eval_grad = [&](const Vector& x, double fx) -> Vector {
    if (objective.gradient) return objective.gradient(x);
    evals += 2 * static_cast<int>(n);
    return numerical_gradient(objective.value, x, fx);
  };

  Vector x = x0;
  double fx = objective.value(x);
  ++evals;
  if (!std::isfinite(fx)) {
    throw std::domain_error("minimize: objective is not finite at the starting point");
  }
  Vector g = eval_grad(x, fx);

  Eigen::MatrixXd inv_hess = Eigen::MatrixXd::Identity(n, n);
  bool identity_hess = true;
  int iter = 0;
  std::string message = "maximum iterations reached";

  for (; iter < cfg.max_iter; ++iter) {
    const double gnorm = g.norm();
    if (gnorm <= std::max(cfg.abs_tol, cfg.rel_tol * std::max(1.0, std::abs(fx)))) {
      message = "gradient tolerance reached";
      break;
    }

    Vector direction = -inv_hess * g;
    if (g.dot(direction) >= 0.0) {
      inv_hess.setIdentity();
      identity_hess = true;
      direction = -g;
    }
    // Keep the first steepest-descent step to unit length.
    double step = identity_hess ? std::min(1.0, 1.0 / direction.norm()) : 1.0;
    LineSearchResult ls = backtrack(objective.value, x, fx, g, direction, step, evals);
    if (!ls.accepted && !identity_hess) {
      inv_hess.setIdentity();
      identity_hess = true;
      direction = -g;
      step = std::min(1.0, 1.0 / direction.norm());
      ls = backtrack(objective.value, x, fx, g, direction, step, evals);
    }
    if (!ls.accepted) {
      message = "line search stalled";
      break;
    }

    Vector g_new = eval_grad(ls.x, ls.f);
    const Vector s = ls.x - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (identity_hess) {
        // Rescale the initial approximation before the first update.
        inv_hess *= sy / y.squaredNorm();
      }
      const Vector hy = inv_hess * y;
      const double yhy = y.dot(hy);
      inv_hess += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                  (hy * s.transpose() + s * hy.transpose()) / sy;
      identity_hess = false;
    }
    const double f_prev = fx;
    x = ls.x;
    fx = ls.f;
    g = std::move(g_new);
    if (std::abs(f_prev - fx) <= 1e-16 * std::max(1.0, std::abs(fx)) &&
        g.norm() <= converged_gradient_threshold(fx)) {
      message = "no further progress";
      ++iter;
      break;
    }
  }

  out.x = x;
  out.f = fx;
  out.iterations = iter;
  out.evaluations = evals;
  out.grad_norm = g.norm();
  out.converged = out.grad_norm <= converged_gradient_threshold(fx);
  out.message = message;
  return out;
}

}  // namespace droughtrisk::numerics
