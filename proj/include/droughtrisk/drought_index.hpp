#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "droughtrisk/gamma_gam.hpp"
#include "droughtrisk/station.hpp"

namespace droughtrisk::spi {

enum class DroughtCategory {
  extremely_wet,
  very_wet,
  wet,
  normal,
  dry,
  very_dry,
  extremely_dry
};

std::string_view category_name(DroughtCategory c);
DroughtCategory parse_category(std::string_view name);

/// Standardized values at or beyond this level are flagged as severe drought.
inline constexpr double kSevereThreshold = -1.5;
inline constexpr double kProbabilityClamp = 1e-10;

struct AccumulatedSeries {
  std::string station_id;
  int m = 1;
  std::vector<std::optional<double>> values;
  std::size_t valid_from = 0;
};

/// Backward rolling sums over m consecutive entries; any window that is
/// incomplete or contains a missing entry is missing.
AccumulatedSeries accumulate(std::span<const std::optional<double>> raw, int m);
AccumulatedSeries accumulate(std::span<const double> raw, int m);

/// One month of a station after accumulation: the window total and the
/// covariates the Gamma model sees for it.
struct WindowRow {
  int year = 0;
  int month = 0;
  double accumulated = 0.0;
  double tmax_mean = 0.0;
};

/// Calendar-aware accumulation for a station. Months missing from the record
/// break windows; only complete windows are returned.
std::vector<WindowRow> accumulate_station(const StationSeries& station, int m);

/// Covariate names used by the default formulas.
inline constexpr const char* kLon = "lon";
inline constexpr const char* kLat = "lat";
inline constexpr const char* kMonth = "month";  // 0..11, cyclic with period 12
inline constexpr const char* kTmax = "tmax";    // window mean of maximum temperature

void append_covariates(splines::CovariateTable& table, const StationSeries& station, const WindowRow& row);

/// P(X <= x) for the Gamma(shape alpha, scale psi) distribution.
double gamma_cdf(double x, double alpha, double psi);
/// Fitted Gamma cdf at one location and month.
double gamma_cdf_at(const gam::GammaGamFit& fit, const std::map<std::string, double>& covariates, double x,
                    bool* extrapolated = nullptr);

struct SpiValue {
  double value = 0.0;
  bool clamped = false;
};

/// Standard-normal quantile of p, with p clamped to [1e-10, 1 - 1e-10].
SpiValue spi_transform(double p);

/// Bands: >= 2 extremely wet; (1.5, 2) very wet; (1, 1.5] wet; [-1, 1]
/// normal; [-1.5, -1) dry; (-2, -1.5) very dry; <= -2 extremely dry.
DroughtCategory classify(double d);

struct DroughtIndexRecord {
  int year = 0;
  int month = 0;
  double accumulated = 0.0;
  double cdf = 0.0;
  double spi = 0.0;
  DroughtCategory category = DroughtCategory::normal;
  bool clamped = false;
  bool severe = false;
  bool extrapolated = false;
};

struct DroughtIndexSeries {
  std::string station_id;
  int m = 1;
  std::vector<DroughtIndexRecord> records;
  std::size_t clamp_count = 0;
  std::size_t zero_excluded = 0;
  std::size_t extrapolated_count = 0;
};

/// accumulate -> fitted cdf -> standard-normal quantile -> classification.
/// Zero window totals are skipped and counted.
DroughtIndexSeries index_pipeline(const StationSeries& station, const gam::GammaGamFit& fit, int m);

void write_index_csv_header(std::ostream& os);
void write_index_csv_rows(std::ostream& os, const DroughtIndexSeries& series);
/// Reads a file written by the two functions above; series keyed by station.
std::map<std::string, DroughtIndexSeries> read_index_csv(std::istream& is);

}  // namespace droughtrisk::spi
