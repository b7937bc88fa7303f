#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace droughtrisk::egpd {

/// First-family extended GPD: F(z) = [1 - (1 + xi z / sigma)^(-1/xi)]^kappa.
struct EgpdParams {
  double kappa = 1.0;
  double sigma = 1.0;
  double xi = 0.0;

  void validate() const;
};

struct TailSplit {
  std::vector<double> wet;   // d for d > 0
  std::vector<double> dry;   // -d for d < 0
  std::size_t zeros = 0;
};

/// Splits index values by sign. Throws DataError when either tail is empty.
TailSplit split_tails(std::span<const double> d);

double egpd_cdf(double z, const EgpdParams& p);
double egpd_log_pdf(double z, const EgpdParams& p);
double egpd_pdf(double z, const EgpdParams& p);
double egpd_quantile(double p, const EgpdParams& params);

struct EgpdFit {
  EgpdParams params;
  bool converged = false;
  bool xi_at_bound = false;
  int iterations = 0;
  double loglik = 0.0;
  std::size_t n = 0;
  std::string message;
};

inline constexpr std::size_t kEgpdMinSample = 50;

/// Maximum likelihood on (log kappa, log sigma, xi), xi softly kept in (-0.5, 0.5).
EgpdFit egpd_fit(std::span<const double> z);

enum class Tail { wet, dry };
std::string_view tail_name(Tail t);

struct ReturnLevelRow {
  double T = 0.0;
  bool defined = false;
  double exceed_prob = 0.0;
  double level = 0.0;
};

struct ReturnLevelTable {
  std::string station_id;
  Tail tail = Tail::wet;
  /// Tail events per year used to turn T into an exceedance probability.
  double annual_rate = 0.0;
  std::vector<ReturnLevelRow> rows;
};

struct ReturnLevels {
  ReturnLevelTable wet;
  ReturnLevelTable dry;
  double obs_per_year = 0.0;
};

/// T-year levels on the index scale. Each tail's annual event rate is its
/// per-observation fraction times obs_per_year (default n_total /
/// years_span); the exceedance probability of an event is 1 / (T * rate).
/// Wet levels are Q_wet(1 - p), dry levels -Q_dry(1 - p). Rows with
/// T * rate <= 1 are marked undefined.
ReturnLevels return_levels(const EgpdParams& wet, const EgpdParams& dry, std::size_t n_wet, std::size_t n_dry,
                           std::size_t n_total, std::span<const double> T_list, double years_span,
                           std::optional<double> obs_per_year = std::nullopt);

}  // namespace droughtrisk::egpd
