#include <algorithm>
#include <cmath>

#include "droughtrisk/pipeline.hpp"

namespace droughtrisk::pipeline {

std::vector<QQPoint> qq_points(std::span<const double> sample, const std::function<double(double)>& quantile) {
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<QQPoint> out(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out[i].theoretical = quantile((static_cast<double>(i) + 0.5) / n);
    out[i].empirical = sorted[i];
  }
  return out;
}

double invert_cdf(const std::function<double(double)>& cdf, double p, double lo, double hi) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("invert_cdf: p must be in (0, 1)");
  // Widen until the bracket holds p; give up after the range is absurd.
  for (int i = 0; i < 60 && cdf(lo) > p; ++i) lo = lo - (hi - lo);
  for (int i = 0; i < 60 && cdf(hi) < p; ++i) hi = hi + (hi - lo);
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (lo + hi);
    if (m <= lo || m >= hi) break;
    if (cdf(m) < p) {
      lo = m;
    } else {
      hi = m;
    }
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(m))) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace droughtrisk::pipeline
