#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/numerics.hpp"
#include "droughtrisk/tail_risk.hpp"

namespace droughtrisk::tails {
namespace {

constexpr double kXiZero = 1e-8;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// GPD cdf of an exceedance z >= 0, saturating at 1 past a finite endpoint.
double gpd_cdf_excess(double z, double xi, double beta) {
  if (z <= 0.0) return 0.0;
  if (std::abs(xi) < kXiZero) return -std::expm1(-z / beta);
  const double t = xi * z / beta;
  if (t <= -1.0) return 1.0;
  return -std::expm1(-std::log1p(t) / xi);
}

double gpd_log_pdf_excess(double z, double xi, double beta) {
  if (z < 0.0 || !(beta > 0.0)) return kNegInf;
  if (std::abs(xi) < kXiZero) return -std::log(beta) - z / beta;
  const double t = xi * z / beta;
  if (t <= -1.0) return kNegInf;
  return -std::log(beta) - (1.0 / xi + 1.0) * std::log1p(t);
}

// Zero inside (lo, hi), quadratic growth outside.
double soft_bound(double v, double lo, double hi) {
  if (v < lo) return (lo - v) * (lo - v);
  if (v > hi) return (v - hi) * (v - hi);
  return 0.0;
}

GpNgpParams unpack(const numerics::Vector& x, double d_l, double d_r) {
  GpNgpParams p;
  p.mu = x[0];
  p.sigma = std::exp(x[1]);
  p.xi_l = x[2];
  p.beta_l = std::exp(x[3]);
  p.xi_r = x[4];
  p.beta_r = std::exp(x[5]);
  p.d_l = d_l;
  p.d_r = d_r;
  return p;
}

}  // namespace

double empirical_quantile(std::span<const double> sample, double q) {
  if (sample.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::domain_error("empirical_quantile: q must be in [0, 1]");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double gpd_cdf(double y, double xi, double beta, double threshold) {
  if (!(beta > 0.0) || !std::isfinite(xi)) throw std::domain_error("gpd_cdf: beta must be positive");
  const double z = y - threshold;
  if (z < 0.0) throw std::domain_error("gpd_cdf: value below the threshold");
  if (xi < 0.0 && std::abs(xi) >= kXiZero && z > -beta / xi) {
    throw std::domain_error("gpd_cdf: value beyond the upper endpoint");
  }
  return gpd_cdf_excess(z, xi, beta);
}

double gpd_log_pdf(double y, double xi, double beta, double threshold) {
  return gpd_log_pdf_excess(y - threshold, xi, beta);
}

void GpNgpParams::validate() const {
  if (!(sigma > 0.0) || !(beta_l > 0.0) || !(beta_r > 0.0)) {
    throw std::invalid_argument("GP-N-GP: scale parameters must be positive");
  }
  if (!(d_l < d_r)) throw std::invalid_argument("GP-N-GP: thresholds must satisfy d_l < d_r");
  if (!std::isfinite(mu) || !std::isfinite(xi_l) || !std::isfinite(xi_r)) {
    throw std::invalid_argument("GP-N-GP: non-finite parameter");
  }
}

double gpngp_cdf(double y, const GpNgpParams& p) {
  p.validate();
  auto phi = [&](double v) { return numerics::std_normal_cdf((v - p.mu) / p.sigma); };
  if (y <= p.d_l) return phi(p.d_l) * (1.0 - gpd_cdf_excess(-y + p.d_l, p.xi_l, p.beta_l));
  if (y < p.d_r) return phi(y);
  const double at = phi(p.d_r);
  return at + (1.0 - at) * gpd_cdf_excess(y - p.d_r, p.xi_r, p.beta_r);
}

double gpngp_log_density(double y, const GpNgpParams& p) {
  if (y <= p.d_l) {
    return numerics::std_normal_log_cdf((p.d_l - p.mu) / p.sigma) + gpd_log_pdf_excess(p.d_l - y, p.xi_l, p.beta_l);
  }
  if (y < p.d_r) {
    const double z = (y - p.mu) / p.sigma;
    return -0.5 * z * z - 0.5 * std::log(2.0 * M_PI) - std::log(p.sigma);
  }
  return numerics::std_normal_log_cdf(-(p.d_r - p.mu) / p.sigma) + gpd_log_pdf_excess(y - p.d_r, p.xi_r, p.beta_r);
}

double gpngp_loglik(std::span<const double> sample, const GpNgpParams& p) {
  double total = 0.0;
  for (double y : sample) {
    total += gpngp_log_density(y, p);
    if (!std::isfinite(total)) return kNegInf;
  }
  return total;
}

GpNgpFit gpngp_fit(std::span<const double> sample, double q_lo, double q_hi) {
  if (!(q_lo > 0.0 && q_lo < q_hi && q_hi < 1.0)) {
    throw std::invalid_argument("GP-N-GP: need 0 < q_lo < q_hi < 1");
  }
  for (double v : sample) {
    if (!std::isfinite(v)) throw DataError("GP-N-GP: non-finite sample value");
  }
  GpNgpFit out;
  out.n = sample.size();
  if (out.n < kGpNgpMinSample) {
    throw FitError(fmt::format("GP-N-GP: unstable fit, sample of {} is below the minimum {}", out.n,
                               kGpNgpMinSample));
  }
  const double d_l = empirical_quantile(sample, q_lo);
  const double d_r = empirical_quantile(sample, q_hi);
  double excess_l = 0.0;
  double excess_r = 0.0;
  for (double v : sample) {
    if (v <= d_l) {
      ++out.n_lower;
      excess_l += d_l - v;
    }
    if (v >= d_r) {
      ++out.n_upper;
      excess_r += v - d_r;
    }
  }
  if (out.n_lower < kGpNgpMinTail || out.n_upper < kGpNgpMinTail || !(d_l < d_r)) {
    throw FitError(fmt::format("GP-N-GP: unstable fit, {} lower and {} upper tail points (minimum {})",
                               out.n_lower, out.n_upper, kGpNgpMinTail));
  }
  const double n = static_cast<double>(out.n);
  const double mean = std::accumulate(sample.begin(), sample.end(), 0.0) / n;
  double var = 0.0;
  for (double v : sample) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  const double floor = 1e-3 * std::max(sd, 1e-12);

  numerics::Vector x0(6);
  x0 << mean, std::log(std::max(sd, 1e-12)), 0.1,
      std::log(std::max(excess_l / static_cast<double>(out.n_lower), floor)), 0.1,
      std::log(std::max(excess_r / static_cast<double>(out.n_upper), floor));

  numerics::Objective obj;
  obj.value = [&](const numerics::Vector& x) {
    const auto p = unpack(x, d_l, d_r);
    const double ll = gpngp_loglik(sample, p);
    if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();
    return -ll + n * (soft_bound(p.xi_l, -0.5, 1.0) + soft_bound(p.xi_r, -0.5, 1.0));
  };
  // Start with nonpositive shapes excluded from the endpoint check.
  if (!std::isfinite(obj.value(x0))) {
    x0[2] = 0.0;
    x0[4] = 0.0;
  }
  const auto res = numerics::minimize(obj, x0, {1e-10, 1e-9, 500});
  out.params = unpack(res.x, d_l, d_r);
  out.diagnostics.converged = res.converged;
  out.diagnostics.iterations = res.iterations;
  out.diagnostics.loglik = gpngp_loglik(sample, out.params);
  out.diagnostics.grad_norm = res.grad_norm;
  out.diagnostics.message = res.message;
  return out;
}

std::string_view model_name(TailModel m) { return m == TailModel::gpngp ? "gpngp" : "bats"; }

double drought_risk(const std::function<double(double)>& cdf, double u_c) {
  if (std::isnan(u_c)) throw std::domain_error("drought_risk: u_c is NaN");
  if (u_c == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::clamp(cdf(u_c), 0.0, 1.0);
}

RiskEstimate drought_risk(const GpNgpParams& p, double u_c) {
  RiskEstimate r;
  r.model = TailModel::gpngp;
  r.u_c = u_c;
  r.risk = drought_risk([&](double y) { return gpngp_cdf(y, p); }, u_c);
  return r;
}

}  // namespace droughtrisk::tails
