#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>

#include <fmt/format.h>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/numerics.hpp"
#include "droughtrisk/tail_risk.hpp"

namespace droughtrisk::tails {
namespace {

constexpr double kGammaZero = 1e-8;
constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_bounded(double gamma) { return gamma <= -kGammaZero; }

// One bracket [1 + g Y(z)]^{1/g} in log form, with the log of its
// derivative in z. valid is false past a finite endpoint.
struct Bracket {
  bool valid = true;
  double log_value = 0.0;
  double log_slope = 0.0;
};

Bracket bracket(double z, double gamma) {
  Bracket b;
  const double u = upsilon(z);
  const double log_up = -numerics::log1p_exp(-z);  // log of the logistic function
  if (std::abs(gamma) < kGammaZero) {
    b.log_value = u;
    b.log_slope = u + log_up;
    return b;
  }
  const double t = gamma * u;
  if (t <= -1.0) {
    b.valid = false;
    return b;
  }
  const double log_a = std::log1p(t);
  b.log_value = log_a / gamma;
  b.log_slope = (1.0 / gamma - 1.0) * log_a + log_up;
  return b;
}

struct Transformed {
  bool inside = true;
  double sign = 1.0;        // sign of H
  double log_abs = -kInf;   // log |H|
  double log_deriv = 0.0;   // log H'
};

double log_diff_exp(double a, double b) {  // log(e^a - e^b) for a > b
  return a + std::log(-std::expm1(b - a));
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Transformed transform(double y, const BatsParams& p) {
  Transformed t;
  const Bracket upper = bracket((y - p.alpha2) / p.beta2, p.gamma2);
  const Bracket lower = bracket((p.alpha1 - y) / p.beta1, p.gamma1);
  if (!upper.valid || !lower.valid) {
    t.inside = false;
    return t;
  }
  if (upper.log_value > lower.log_value) {
    t.sign = 1.0;
    t.log_abs = log_diff_exp(upper.log_value, lower.log_value);
  } else if (upper.log_value < lower.log_value) {
    t.sign = -1.0;
    t.log_abs = log_diff_exp(lower.log_value, upper.log_value);
  }
  t.log_deriv = log_sum_exp(upper.log_slope - std::log(p.beta2), lower.log_slope - std::log(p.beta1));
  return t;
}

double value_of(const Transformed& t) { return t.sign * std::exp(t.log_abs); }

// log t_nu from log|h|, usable when |h| overflows. log_c is the density
// at zero, hoisted so a likelihood pass pays for it once.
double log_t_density(double log_abs_h, double nu, double log_c) {
  if (log_abs_h < 300.0) {
    if (std::isinf(nu)) return log_c - 0.5 * std::exp(2.0 * log_abs_h);
    return log_c - 0.5 * (nu + 1.0) * std::log1p(std::exp(2.0 * log_abs_h) / nu);
  }
  if (std::isinf(nu)) return -kInf;
  return log_c - 0.5 * (nu + 1.0) * (2.0 * log_abs_h - std::log(nu));
}

double log_density_with(double y, const BatsParams& p, double lo, double hi, double log_c) {
  if (!(y > lo && y < hi)) return -kInf;
  const auto t = transform(y, p);
  if (!t.inside) return -kInf;
  return log_t_density(t.log_abs, p.nu, log_c) + t.log_deriv;
}

// Bracket A(z) = [1 + g Y(z)]^{1/g} with the partials the likelihood
// gradient needs.
struct BracketPartials {
  double a = 0.0, a_z = 0.0, a_zz = 0.0, a_g = 0.0, a_zg = 0.0;
};

BracketPartials bracket_partials(double z, double gamma) {
  BracketPartials d;
  const double u = upsilon(z);
  const double s = upsilon_prime(z);
  const bool zero = std::abs(gamma) < kGammaZero;
  const double g = zero ? 0.0 : gamma;
  const double t = g * u;
  const double base = 1.0 + t;
  d.a = std::exp(zero ? u : std::log1p(t) / g);
  d.a_z = d.a * s / base;
  d.a_zz = d.a * (s * s * (1.0 - g) / (base * base) + s * (1.0 - s) / base);
  // d log A / d gamma = (t / (1 + t) - log(1 + t)) / gamma^2
  double dlog;
  if (std::abs(t) < 1e-3) {
    dlog = u * u * (-0.5 + t * (2.0 / 3.0 - t * (0.75 - 0.8 * t)));
  } else {
    dlog = (t / base - std::log1p(t)) / (g * g);
  }
  d.a_g = d.a * dlog;
  d.a_zg = d.a_g * s / base - d.a * s * u / (base * base);
  return d;
}

// nu (d/dnu) of log t_nu at zero.
double log_c_nu_slope(double nu) {
  if (nu > 1e4) return 0.25 / nu - 0.125 / (nu * nu * nu);
  return 0.5 * nu * (numerics::digamma(0.5 * (nu + 1.0)) - numerics::digamma(0.5 * nu)) - 0.5;
}

// nu (d/dnu) of -(nu + 1)/2 log(1 + x / nu), x = h^2.
double kernel_nu_slope(double x, double nu) {
  const double r = x / nu;
  const double gap = std::abs(r) < 1e-3 ? nu * r * r * (0.5 - r * (1.0 / 3.0 - 0.25 * r))
                                        : x - nu * std::log1p(r);
  return 0.5 * (gap + x * (1.0 - x) / (nu + x));
}

BatsParams unpack(const numerics::Vector& x) {
  BatsParams p;
  p.alpha1 = x[0];
  p.alpha2 = x[1];
  p.beta1 = std::exp(x[2]);
  p.beta2 = std::exp(x[3]);
  p.gamma1 = x[4];
  p.gamma2 = x[5];
  p.nu = std::exp(x[6]);
  return p;
}

numerics::Vector pack(const BatsParams& p) {
  numerics::Vector x(7);
  x << p.alpha1, p.alpha2, std::log(p.beta1), std::log(p.beta2), p.gamma1, p.gamma2, std::log(p.nu);
  return x;
}

// Gradient of the log-likelihood in packed coordinates. Empty when some
// term overflows, leaving the caller to difference numerically.
std::optional<numerics::Vector> loglik_gradient(std::span<const double> sample, const BatsParams& p) {
  numerics::Vector g = numerics::Vector::Zero(7);
  const double nu = p.nu;
  const double c_slope = log_c_nu_slope(nu);
  for (double y : sample) {
    const double z2 = (y - p.alpha2) / p.beta2;
    const double z1 = (p.alpha1 - y) / p.beta1;
    const auto up = bracket_partials(z2, p.gamma2);
    const auto lo = bracket_partials(z1, p.gamma1);
    const double h = up.a - lo.a;
    const double hp = up.a_z / p.beta2 + lo.a_z / p.beta1;
    const double psi = -(nu + 1.0) * h / (nu + h * h);
    // d/dtheta of log t(H) + log H', with dH and dH' per parameter
    const double dh[6] = {-lo.a_z / p.beta1, -up.a_z / p.beta2, lo.a_z * z1, -up.a_z * z2, -lo.a_g, up.a_g};
    const double dhp[6] = {lo.a_zz / (p.beta1 * p.beta1),
                           -up.a_zz / (p.beta2 * p.beta2),
                           -(lo.a_zz * z1 + lo.a_z) / p.beta1,
                           -(up.a_zz * z2 + up.a_z) / p.beta2,
                           lo.a_zg / p.beta1,
                           up.a_zg / p.beta2};
    for (int k = 0; k < 6; ++k) g[k] += psi * dh[k] + dhp[k] / hp;
    g[6] += c_slope + kernel_nu_slope(h * h, nu);
  }
  if (!g.allFinite()) return std::nullopt;
  return g;
}

}  // namespace

double upsilon(double y) { return numerics::log1p_exp(y); }

double upsilon_inv(double z) {
  if (!(z > 0.0) || std::isnan(z)) throw std::domain_error("upsilon_inv: argument must be positive");
  if (std::isinf(z)) return z;
  if (z > 1.0) return z + std::log1p(-std::exp(-z));
  return std::log(std::expm1(z));
}

double upsilon_prime(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

std::pair<double, double> bats_support(const BatsParams& p) {
  const double lo = is_bounded(p.gamma1) ? p.alpha1 - p.beta1 * upsilon_inv(-1.0 / p.gamma1) : -kInf;
  const double hi = is_bounded(p.gamma2) ? p.alpha2 + p.beta2 * upsilon_inv(-1.0 / p.gamma2) : kInf;
  return {lo, hi};
}

void BatsParams::validate() const {
  if (!(beta1 > 0.0) || !(beta2 > 0.0) || !(nu > 0.0)) {
    throw std::invalid_argument("BATs: scales and degrees of freedom must be positive");
  }
  for (double v : {alpha1, alpha2, gamma1, gamma2, beta1, beta2, nu}) {
    if (!std::isfinite(v)) throw std::invalid_argument("BATs: non-finite parameter");
  }
  const auto [lo, hi] = bats_support(*this);
  if (!(lo < hi)) throw std::invalid_argument("BATs: empty support (L >= U)");
}

double bats_inner_cdf(double y, const BatsParams& p) {
  p.validate();
  const auto [lo, hi] = bats_support(p);
  if (!(y > lo && y < hi)) throw std::domain_error("bats_inner_cdf: value outside the support");
  const auto t = transform(y, p);
  if (!t.inside) throw std::domain_error("bats_inner_cdf: value outside the support");
  return value_of(t);
}

double bats_inner_derivative(double y, const BatsParams& p) {
  p.validate();
  const auto t = transform(y, p);
  if (!t.inside) throw std::domain_error("bats_inner_derivative: value outside the support");
  return std::exp(t.log_deriv);
}

double bats_cdf(double y, const BatsParams& p) {
  p.validate();
  const auto [lo, hi] = bats_support(p);
  if (y <= lo) return 0.0;
  if (y >= hi) return 1.0;
  const auto t = transform(y, p);
  if (!t.inside) return y < p.alpha1 ? 0.0 : 1.0;
  return numerics::student_t_cdf(value_of(t), p.nu);
}

double bats_log_density(double y, const BatsParams& p) {
  const auto [lo, hi] = bats_support(p);
  return log_density_with(y, p, lo, hi, numerics::student_t_log_pdf(0.0, p.nu));
}

double bats_loglik(std::span<const double> sample, const BatsParams& p) {
  if (!(p.beta1 > 0.0) || !(p.beta2 > 0.0) || !(p.nu > 0.0)) return -kInf;
  const auto [lo, hi] = bats_support(p);
  if (!(lo < hi)) return -kInf;
  const double log_c = numerics::student_t_log_pdf(0.0, p.nu);
  double total = 0.0;
  for (double y : sample) {
    total += log_density_with(y, p, lo, hi, log_c);
    if (!std::isfinite(total)) return -kInf;
  }
  return total;
}

BatsFit bats_fit(std::span<const double> sample) {
  if (sample.size() < kBatsMinSample) {
    throw FitError(fmt::format("BATs: sample of {} is below the minimum {}", sample.size(), kBatsMinSample));
  }
  for (double v : sample) {
    if (!std::isfinite(v)) throw DataError("BATs: non-finite sample value");
  }
  const double q10 = empirical_quantile(sample, 0.10);
  const double q25 = empirical_quantile(sample, 0.25);
  const double q50 = empirical_quantile(sample, 0.50);
  const double q75 = empirical_quantile(sample, 0.75);
  const double q90 = empirical_quantile(sample, 0.90);
  const double half_iqr = std::max(0.5 * (q75 - q25), 1e-6);

  BatsParams base;
  base.alpha1 = q10;
  base.alpha2 = q90;
  base.beta1 = base.beta2 = half_iqr;
  base.gamma1 = base.gamma2 = 0.1;
  base.nu = 5.0;

  std::vector<BatsParams> starts(5, base);
  starts[1].gamma1 = starts[1].gamma2 = 0.3;
  starts[1].nu = 3.0;
  starts[2].gamma1 = starts[2].gamma2 = 0.02;
  starts[2].nu = 15.0;
  starts[3].alpha1 = starts[3].alpha2 = q50;
  starts[3].beta1 = starts[3].beta2 = 2.0 * half_iqr;
  starts[4].beta1 = starts[4].beta2 = 0.5 * half_iqr;
  starts[4].gamma1 = 0.2;
  starts[4].gamma2 = 0.05;
  starts[4].nu = 8.0;

  numerics::Objective obj;
  obj.value = [&](const numerics::Vector& x) {
    const double ll = bats_loglik(sample, unpack(x));
    return std::isfinite(ll) ? -ll : kInf;
  };
  obj.gradient = [&](const numerics::Vector& x) -> numerics::Vector {
    if (auto g = loglik_gradient(sample, unpack(x))) return -*g;
    return numerics::numerical_gradient(obj.value, x, obj.value(x));
  };

  BatsFit out;
  double best = kInf;
  bool best_converged = false;
  for (const auto& s : starts) {
    FitDiagnostics d;
    try {
      const auto res = numerics::minimize(obj, pack(s), {1e-10, 1e-9, 1000});
      d.converged = res.converged;
      d.iterations = res.iterations;
      d.loglik = -res.f;
      d.grad_norm = res.grad_norm;
      d.message = res.message;
      // Converged starts take precedence over merely better ones.
      const bool better = (d.converged && !best_converged) ||
                          (d.converged == best_converged && res.f < best);
      if (std::isfinite(res.f) && better) {
        best = res.f;
        best_converged = d.converged;
        out.params = unpack(res.x);
        out.diagnostics = d;
      }
    } catch (const std::exception& e) {
      d.converged = false;
      d.loglik = -kInf;
      d.message = e.what();
    }
    out.starts.push_back(d);
  }
  if (!std::isfinite(best)) {
    std::string detail;
    for (std::size_t i = 0; i < out.starts.size(); ++i) {
      detail += fmt::format("; start {}: {}", i, out.starts[i].message);
    }
    throw FitError("BATs: all starting points failed" + detail);
  }
  return out;
}

RiskEstimate drought_risk(const BatsParams& p, double u_c) {
  RiskEstimate r;
  r.model = TailModel::bats;
  r.u_c = u_c;
  r.risk = drought_risk([&](double y) { return bats_cdf(y, p); }, u_c);
  return r;
}

}  // namespace droughtrisk::tails
