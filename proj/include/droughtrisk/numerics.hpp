#pragma once

#include <functional>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace droughtrisk::numerics {

struct ToleranceConfig {
  double abs_tol = 1e-12;
  double rel_tol = 1e-10;
  int max_iter = 200;

  void validate() const;
};

// Special functions. All throw std::domain_error outside their domain.

/// ln Gamma(x) for x > 0.
double log_gamma_fn(double x);

double digamma(double x);
double trigamma(double x);
/// Second derivative of digamma.
double tetragamma(double x);

/// Regularized lower incomplete gamma P(a, z) = gamma(a, z) / Gamma(a).
///
/// Uses the power series when z < a + 1 and the Legendre continued fraction
/// for Q(a, z) = 1 - P(a, z) otherwise; the crossover keeps both expansions
/// in their fast-converging regimes.
double reg_lower_inc_gamma(double a, double z);

/// Regularized incomplete beta I_x(a, b).
double reg_inc_beta(double a, double b, double x);

double std_normal_pdf(double x);
double std_normal_cdf(double x);
double std_normal_log_cdf(double x);
/// Inverse of std_normal_cdf on (0, 1).
double std_normal_quantile(double p);

double student_t_cdf(double x, double nu);
double student_t_pdf(double x, double nu);
double student_t_log_pdf(double x, double nu);

/// log(1 + e^y) without overflow.
double log1p_exp(double y);

// Unconstrained minimization.

using Vector = Eigen::VectorXd;

struct Objective {
  std::function<double(const Vector&)> value;
  /// Optional analytic gradient; central differences are used when empty.
  std::function<Vector(const Vector&)> gradient;
};

struct MinimizeResult {
  Vector x;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  double grad_norm = 0.0;
  std::string message;
};

/// Central-difference gradient with step cbrt(eps) * max(1, |x_i|).
/// Falls back to a one-sided difference where one side is not finite.
Vector numerical_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double fx);

/// BFGS with a backtracking Armijo line search.
///
/// Non-finite objective values during the search are treated as rejections
/// (the step is shortened). Non-convergence is reported in the result; an
/// exception is thrown only when the objective is not finite at x0.
///
/// The iteration stops when |g| <= max(abs_tol, rel_tol * max(1, |f|)), the
/// line search stalls, or max_iter is reached. `converged` is set when
/// |g| <= 1e-6 * max(1, |f|) at the returned point.
MinimizeResult minimize(const Objective& objective, const Vector& x0,
                        const ToleranceConfig& cfg = {});

/// Convergence threshold reported by minimize().
double converged_gradient_threshold(double f);

}  // namespace droughtrisk::numerics
