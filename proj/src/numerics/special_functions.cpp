#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "droughtrisk/numerics.hpp"

namespace droughtrisk::numerics {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kTiny = 1e-300;
constexpr int kMaxSeriesTerms = 100000;

void require_finite(double x, const char* fn) {
  if (!std::isfinite(x)) {
    throw std::domain_error(std::string(fn) + ": non-finite argument");
  }
}

// Power series for P(a, z); valid for z < a + 1.
double lower_gamma_series(double a, double z) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kMaxSeriesTerms; ++n) {
    ap += 1.0;
    term *= z / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-z + a * std::log(z) - log_gamma_fn(a));
}

// Modified Lentz continued fraction for Q(a, z); valid for z >= a + 1.
double upper_gamma_fraction(double a, double z) {
  double b = z + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxSeriesTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::exp(-z + a * std::log(z) - log_gamma_fn(a)) * h;
}

// Continued fraction for the incomplete beta (Lentz form).
double beta_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < kMaxSeriesTerms; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

// I_x(a, b) with y = 1 - x supplied separately to keep precision near x = 1.
double inc_beta(double a, double b, double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = log_gamma_fn(a + b) - log_gamma_fn(a) -
                           log_gamma_fn(b) + a * std::log(x) +
                           b * std::log(y);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * beta_fraction(b, a, y) / b;
}

// Reduce x upward with the recurrence until the asymptotic series is accurate.
constexpr double kAsymptoticStart = 10.0;

}  // namespace

void ToleranceConfig::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0) || max_iter < 1) {
    throw std::invalid_argument("ToleranceConfig: tolerances must be positive and max_iter >= 1");
  }
}

double log_gamma_fn(double x) {
  require_finite(x, "log_gamma_fn");
  if (x <= 0.0) throw std::domain_error("log_gamma_fn: x must be positive");
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

double digamma(double x) {
  require_finite(x, "digamma");
  if (x <= 0.0) throw std::domain_error("digamma: x must be positive");
  double acc = 0.0;
  while (x < kAsymptoticStart) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  const double series =
      r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (1.0 / 240 - r * (1.0 / 132)))));
  return acc + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
  require_finite(x, "trigamma");
  if (x <= 0.0) throw std::domain_error("trigamma: x must be positive");
  double acc = 0.0;
  while (x < kAsymptoticStart) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  const double series =
      1.0 / x + r / 2.0 +
      r / x * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (1.0 / 30 - r * (5.0 / 66)))));
  return acc + series;
}

double tetragamma(double x) {
  require_finite(x, "tetragamma");
  if (x <= 0.0) throw std::domain_error("tetragamma: x must be positive");
  double acc = 0.0;
  while (x < kAsymptoticStart) {
    acc -= 2.0 / (x * x * x);
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  const double series =
      -r - r / x - r * r * (0.5 - r * (1.0 / 6 - r * (1.0 / 6 - r * (3.0 / 10 - r * (5.0 / 6)))));
  return acc + series;
}

double reg_lower_inc_gamma(double a, double z) {
  if (std::isnan(a) || std::isnan(z) || std::isinf(a)) {
    throw std::domain_error("reg_lower_inc_gamma: non-finite argument");
  }
  if (a <= 0.0) throw std::domain_error("reg_lower_inc_gamma: a must be positive");
  if (z < 0.0) throw std::domain_error("reg_lower_inc_gamma: z must be nonnegative");
  if (z == 0.0) return 0.0;
  if (std::isinf(z)) return 1.0;
  if (z < a + 1.0) return std::min(1.0, lower_gamma_series(a, z));
  return std::max(0.0, 1.0 - upper_gamma_fraction(a, z));
}

double reg_inc_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw std::domain_error("reg_inc_beta: a and b must be positive");
  }
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("reg_inc_beta: x outside [0, 1]");
  return inc_beta(a, b, x, 1.0 - x);
}

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_cdf(double x) {
  if (std::isnan(x)) throw std::domain_error("std_normal_cdf: NaN argument");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double std_normal_log_cdf(double x) {
  if (std::isnan(x)) throw std::domain_error("std_normal_log_cdf: NaN argument");
  if (x > -30.0) return std::log(std_normal_cdf(x));
  // Mills-ratio asymptotic expansion for the far lower tail.
  const double r = 1.0 / (x * x);
  return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-r * (1.0 - 3.0 * r * (1.0 - 5.0 * r)));
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("std_normal_quantile: p must lie in (0, 1)");
  }
  if (p > 0.5) return -std_normal_quantile(1.0 - p);

  // Rational approximation (Acklam), relative error about 1e-9.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  // One Halley step on the cdf.
  const double e = std_normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

double student_t_log_pdf(double x, double nu) {
  if (!(nu > 0.0) || std::isnan(x)) {
    throw std::domain_error("student_t_log_pdf: nu must be positive");
  }
  if (std::isinf(nu)) return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
  double ratio;  // ln Gamma(h + 1/2) - ln Gamma(h), h = nu / 2
  if (nu > 1e5) {
    const double h = 0.5 * nu;
    ratio = 0.5 * std::log(h) - 1.0 / (8.0 * h) + 1.0 / (192.0 * h * h * h);
  } else {
    ratio = log_gamma_fn(0.5 * (nu + 1.0)) - log_gamma_fn(0.5 * nu);
  }
  return ratio - 0.5 * std::log(nu * std::numbers::pi) - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double student_t_pdf(double x, double nu) {
  if (std::isinf(x)) return 0.0;
  return std::exp(student_t_log_pdf(x, nu));
}

double student_t_cdf(double x, double nu) {
  if (!(nu > 0.0) || std::isnan(x)) {
    throw std::domain_error("student_t_cdf: nu must be positive");
  }
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  if (nu > 1e9) return std_normal_cdf(x);
  if (x == 0.0) return 0.5;
  const double t2 = x * x;
  // tail = P(T > |x|) = I_{nu/(nu+t^2)}(nu/2, 1/2) / 2
  const double xb = nu / (nu + t2);
  const double yb = t2 / (nu + t2);
  const double tail = 0.5 * inc_beta(0.5 * nu, 0.5, xb, yb);
  return x > 0 ? 1.0 - tail : tail;
}

double log1p_exp(double y) {
  if (y > 30.0) return y + std::exp(-y);
  if (y < -37.0) return std::exp(y);
  return std::log1p(std::exp(y));
}

}  // namespace droughtrisk::numerics
