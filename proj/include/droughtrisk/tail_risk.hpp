#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace droughtrisk::tails {

/// Linear-interpolation sample quantile (type 7) of an unsorted sample.
double empirical_quantile(std::span<const double> sample, double q);

/// Generalized Pareto cdf above `threshold`. Throws std::domain_error when y
/// is below the threshold or beyond the upper endpoint for xi < 0.
double gpd_cdf(double y, double xi, double beta, double threshold);
/// Log density of the generalized Pareto; -inf outside the support.
double gpd_log_pdf(double y, double xi, double beta, double threshold);

struct GpNgpParams {
  double mu = 0.0;
  double sigma = 1.0;
  double xi_l = 0.0;
  double beta_l = 1.0;
  double xi_r = 0.0;
  double beta_r = 1.0;
  double d_l = -1.0;
  double d_r = 1.0;

  void validate() const;
};

/// Three-piece cdf: GPD lower tail below d_l, Gaussian bulk, GPD upper tail
/// above d_r. The tails carry exactly the Gaussian mass beyond each threshold.
double gpngp_cdf(double y, const GpNgpParams& p);
double gpngp_log_density(double y, const GpNgpParams& p);
double gpngp_loglik(std::span<const double> sample, const GpNgpParams& p);

struct FitDiagnostics {
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  double grad_norm = 0.0;
  std::string message;
};

struct GpNgpFit {
  GpNgpParams params;
  FitDiagnostics diagnostics;
  std::size_t n = 0;
  std::size_t n_lower = 0;
  std::size_t n_upper = 0;
};

inline constexpr std::size_t kGpNgpMinSample = 50;
inline constexpr std::size_t kGpNgpMinTail = 10;

/// Thresholds fixed at the empirical q_lo / q_hi quantiles; the remaining
/// six parameters by maximum likelihood. Throws FitError for samples too
/// small to support the tails.
GpNgpFit gpngp_fit(std::span<const double> sample, double q_lo = 0.10, double q_hi = 0.90);

/// log(1 + e^y).
double upsilon(double y);
/// log(e^z - 1) for z > 0.
double upsilon_inv(double z);
/// Logistic function, the derivative of upsilon.
double upsilon_prime(double y);

struct BatsParams {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double beta1 = 1.0;
  double beta2 = 1.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double nu = 5.0;

  /// Positivity of the scales and nu, and a non-empty support.
  void validate() const;
};

/// Interior support (L, U); infinite where the tail index is nonnegative.
std::pair<double, double> bats_support(const BatsParams& p);

/// The monotone transformation H; throws std::domain_error outside (L, U).
double bats_inner_cdf(double y, const BatsParams& p);
/// Derivative of H with respect to y.
double bats_inner_derivative(double y, const BatsParams& p);

/// T_nu(H(y)); 0 at or below L and 1 at or above U.
double bats_cdf(double y, const BatsParams& p);
/// log t_nu(H(y)) + log H'(y); -inf outside the support.
double bats_log_density(double y, const BatsParams& p);
double bats_loglik(std::span<const double> sample, const BatsParams& p);

struct BatsFit {
  BatsParams params;
  FitDiagnostics diagnostics;
  std::vector<FitDiagnostics> starts;
};

inline constexpr std::size_t kBatsMinSample = 100;

/// Maximum likelihood from five deterministic starting points; the best
/// converged start is kept. Throws FitError when every start fails.
BatsFit bats_fit(std::span<const double> sample);

enum class TailModel { gpngp, bats };
std::string_view model_name(TailModel m);

struct RiskEstimate {
  std::string station_id;
  TailModel model = TailModel::gpngp;
  double u_c = -2.0;
  double risk = 0.0;
};

/// Probability that the index falls below u_c under the given cdf.
double drought_risk(const std::function<double(double)>& cdf, double u_c = -2.0);
RiskEstimate drought_risk(const GpNgpParams& p, double u_c = -2.0);
RiskEstimate drought_risk(const BatsParams& p, double u_c = -2.0);

}  // namespace droughtrisk::tails
