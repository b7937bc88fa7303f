#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "droughtrisk/egpd.hpp"
#include "droughtrisk/errors.hpp"
#include "droughtrisk/numerics.hpp"

namespace droughtrisk::egpd {
namespace {

constexpr double kXiZero = 1e-8;
constexpr double kXiLo = -0.5;
constexpr double kXiHi = 0.5;
constexpr double kInf = std::numeric_limits<double>::infinity();

// log of the GPD cdf 1 - (1 + xi z / sigma)^(-1/xi); 0 past a finite endpoint.
double log_gpd_cdf(double z, double sigma, double xi) {
  if (std::abs(xi) < kXiZero) return std::log(-std::expm1(-z / sigma));
  const double t = xi * z / sigma;
  if (t <= -1.0) return 0.0;
  return std::log(-std::expm1(-std::log1p(t) / xi));
}

EgpdParams unpack(const numerics::Vector& x) { return {std::exp(x[0]), std::exp(x[1]), x[2]}; }

}  // namespace

void EgpdParams::validate() const {
  if (!(kappa > 0.0) || !(sigma > 0.0) || !std::isfinite(kappa) || !std::isfinite(sigma) || !std::isfinite(xi)) {
    throw std::invalid_argument("EGPD: kappa and sigma must be positive, xi finite");
  }
}

TailSplit split_tails(std::span<const double> d) {
  if (d.empty()) throw DataError("split_tails: empty series");
  TailSplit out;
  for (double v : d) {
    if (!std::isfinite(v)) throw DataError("split_tails: non-finite index value");
    if (v > 0.0) {
      out.wet.push_back(v);
    } else if (v < 0.0) {
      out.dry.push_back(-v);
    } else {
      ++out.zeros;
    }
  }
  if (out.wet.empty()) throw DataError("split_tails: empty wet tail");
  if (out.dry.empty()) throw DataError("split_tails: empty dry tail");
  return out;
}

double egpd_cdf(double z, const EgpdParams& p) {
  p.validate();
  if (!(z > 0.0)) {
    if (z == 0.0) return 0.0;
    throw std::domain_error("egpd_cdf: z must be positive");
  }
  if (p.xi <= -kXiZero && z > -p.sigma / p.xi) throw std::domain_error("egpd_cdf: z beyond the upper endpoint");
  return std::exp(p.kappa * log_gpd_cdf(z, p.sigma, p.xi));
}

double egpd_log_pdf(double z, const EgpdParams& p) {
  if (!(z > 0.0) || !(p.kappa > 0.0) || !(p.sigma > 0.0)) return -kInf;
  double log_g;  // log GPD density
  if (std::abs(p.xi) < kXiZero) {
    log_g = -std::log(p.sigma) - z / p.sigma;
  } else {
    const double t = p.xi * z / p.sigma;
    if (t <= -1.0) return -kInf;
    log_g = -std::log(p.sigma) - (1.0 / p.xi + 1.0) * std::log1p(t);
  }
  return std::log(p.kappa) + (p.kappa - 1.0) * log_gpd_cdf(z, p.sigma, p.xi) + log_g;
}

double egpd_pdf(double z, const EgpdParams& p) { return std::exp(egpd_log_pdf(z, p)); }

double egpd_quantile(double prob, const EgpdParams& p) {
  p.validate();
  if (!(prob > 0.0 && prob < 1.0)) throw std::domain_error("egpd_quantile: p must be in (0, 1)");
  // log(1 - p^{1/kappa})
  const double log_tail = std::log(-std::expm1(std::log(prob) / p.kappa));
  if (std::abs(p.xi) < kXiZero) return -p.sigma * log_tail;
  return p.sigma / p.xi * std::expm1(-p.xi * log_tail);
}

EgpdFit egpd_fit(std::span<const double> z) {
  EgpdFit out;
  out.n = z.size();
  if (out.n < kEgpdMinSample) {
    throw FitError(fmt::format("EGPD: sample of {} is below the minimum {}", out.n, kEgpdMinSample));
  }
  for (double v : z) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("EGPD: observations must be positive and finite");
  }
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(out.n);
  const double n = static_cast<double>(out.n);

  numerics::Objective obj;
  obj.value = [&](const numerics::Vector& x) {
    const auto p = unpack(x);
    double ll = 0.0;
    for (double v : z) {
      ll += egpd_log_pdf(v, p);
      if (!std::isfinite(ll)) return kInf;
    }
    double pen = 0.0;
    if (p.xi < kXiLo) pen = (kXiLo - p.xi) * (kXiLo - p.xi);
    if (p.xi > kXiHi) pen = (p.xi - kXiHi) * (p.xi - kXiHi);
    return -ll + n * pen;
  };

  const std::vector<std::array<double, 3>> starts = {
      {0.0, std::log(mean), 0.1}, {std::log(2.0), std::log(0.5 * mean), 0.0}, {std::log(0.7), std::log(mean), -0.1}};
  double best = kInf;
  for (const auto& s : starts) {
    numerics::Vector x0(3);
    x0 << s[0], s[1], s[2];
    if (!std::isfinite(obj.value(x0))) continue;
    const auto res = numerics::minimize(obj, x0, {1e-10, 1e-9, 500});
    const bool better = (res.converged && !out.converged) || (res.converged == out.converged && res.f < best);
    if (std::isfinite(res.f) && better) {
      best = res.f;
      out.params = unpack(res.x);
      out.converged = res.converged;
      out.iterations = res.iterations;
      out.message = res.message;
    }
  }
  if (!std::isfinite(best)) throw FitError("EGPD: no starting point gave a finite likelihood");
  out.loglik = 0.0;
  for (double v : z) out.loglik += egpd_log_pdf(v, out.params);
  out.xi_at_bound = out.params.xi <= kXiLo + 1e-3 || out.params.xi >= kXiHi - 1e-3;
  return out;
}

std::string_view tail_name(Tail t) { return t == Tail::wet ? "wet" : "dry"; }

ReturnLevels return_levels(const EgpdParams& wet, const EgpdParams& dry, std::size_t n_wet, std::size_t n_dry,
                           std::size_t n_total, std::span<const double> T_list, double years_span,
                           std::optional<double> obs_per_year) {
  wet.validate();
  dry.validate();
  if (n_total == 0 || n_wet + n_dry > n_total) {
    throw std::invalid_argument("return_levels: inconsistent counts");
  }
  if (!(years_span > 0.0)) throw std::invalid_argument("return_levels: years_span must be positive");
  ReturnLevels out;
  out.obs_per_year = obs_per_year ? *obs_per_year : static_cast<double>(n_total) / years_span;
  if (!(out.obs_per_year > 0.0)) throw std::invalid_argument("return_levels: observations per year must be positive");

  auto fill = [&](ReturnLevelTable& table, Tail tail, const EgpdParams& p, std::size_t count) {
    table.tail = tail;
    table.annual_rate = static_cast<double>(count) / static_cast<double>(n_total) * out.obs_per_year;
    for (double T : T_list) {
      if (!(T > 0.0)) throw std::invalid_argument("return_levels: return periods must be positive");
      ReturnLevelRow row;
      row.T = T;
      const double events = T * table.annual_rate;
      if (events > 1.0) {
        row.defined = true;
        row.exceed_prob = 1.0 / events;
        const double q = egpd_quantile(1.0 - row.exceed_prob, p);
        row.level = tail == Tail::wet ? q : -q;
      }
      table.rows.push_back(row);
    }
  };
  fill(out.wet, Tail::wet, wet, n_wet);
  fill(out.dry, Tail::dry, dry, n_dry);
  return out;
}

}  // namespace droughtrisk::egpd
