#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droughtrisk/splines.hpp"
#include "droughtrisk/station.hpp"

namespace droughtrisk::pipeline {

/// A stage was asked to run before the stage that produces its input.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or command-line usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scenario { constant, seasonal, trend, spatial_gradient };
Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario s);

struct ScenarioSpec {
  Scenario kind = Scenario::constant;
  int n_stations = 20;
  int n_years = 40;
  int start_year = 1981;
  double alpha = 2.0;
  double psi = 50.0;
  /// Seasonal: psi(t) = exp(log_psi_mean + amplitude * sin(2 pi t / 12)).
  double log_psi_mean = 0.5;
  double amplitude = 0.3;
  /// Trend: log psi changes linearly by this amount over the record.
  double trend = -0.3;
  /// Spatial gradient: log psi changes by this amount across the longitude range.
  double gradient = 0.5;
  double lon_min = 15.0, lon_max = 18.5, lat_min = 40.0, lat_max = 42.0;

  void validate() const;
};

/// Generating Gamma parameters for month `month` (1..12) of `year`.
struct TruthParams {
  double alpha = 0.0;
  double psi = 0.0;
};
TruthParams scenario_truth(const ScenarioSpec& spec, const StationSeries& station, int year, int month);

struct TruthRow {
  std::string station_id;
  int year = 0;
  int month = 0;
  double alpha = 0.0;
  double psi = 0.0;
};

struct Simulation {
  std::vector<StationSeries> stations;
  std::vector<TruthRow> truth;
};

/// Reproducible Gamma draws through the scenario surfaces.
Simulation simulate(const ScenarioSpec& spec, std::uint64_t seed);
void write_truth(std::ostream& os, const std::vector<TruthRow>& truth);

struct QQPoint {
  double theoretical = 0.0;
  double empirical = 0.0;
};

/// Sorted sample paired with model quantiles at (i - 0.5) / n.
std::vector<QQPoint> qq_points(std::span<const double> sample, const std::function<double(double)>& quantile);

/// Inverts a continuous nondecreasing cdf by bracketing and bisection.
double invert_cdf(const std::function<double(double)>& cdf, double p, double lo = -10.0, double hi = 10.0);

struct RunConfig {
  std::string data_path;  // empty: <out_dir>/stations.csv
  std::string out_dir = "out";
  std::vector<int> m_list{1, 3, 6, 12};
  int tps_dim = 40;
  int ccs_dim = 6;
  int ncs_dim = 15;
  std::string scale_formula;  // empty: built from the basis dimensions
  std::string shape_formula;
  double q_lo = 0.10;
  double q_hi = 0.90;
  double u_c = -2.0;
  std::vector<double> T_list{5, 10, 20, 50};
  std::optional<double> obs_per_year;
  std::vector<std::string> validation_stations;
  int validation_count = 0;
  std::uint64_t seed = 20240101;
  int threads = 1;
  std::string stations_filter_path;
  ScenarioSpec scenario;
  std::vector<double> sweep_q_lo{0.05, 0.10, 0.15, 0.20};
  std::vector<double> sweep_q_hi{0.80, 0.85, 0.90, 0.95};

  void validate() const;
  std::string effective_scale_formula() const;
  std::string effective_shape_formula() const;
  /// Sorted key=value lines describing every effective setting.
  std::map<std::string, std::string> echo() const;
};

/// Parses flat key=value text; '#' starts a comment. Unknown keys are errors.
RunConfig parse_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Caps every thin-plate basis dimension at `max_dim`.
std::vector<splines::SmoothSpec> cap_thin_plate(std::vector<splines::SmoothSpec> terms, int max_dim);

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"simulate", "fit-gamma", "spi",    "fit-tails",       "risk",
                                              "fit-egpd", "return-levels", "qq", "sweep-thresholds"};
  return names;
}

/// Runs one stage. Returns the process exit status: 0 success, 1 usage,
/// 2 data or missing-artifact error, 3 fit non-convergence.
int run(const std::string& subcommand, const RunConfig& config, std::ostream& log);

/// Same as run() but lets exceptions escape.
void run_stage(const std::string& subcommand, const RunConfig& config, std::ostream& log);

std::string sha256_file(const std::string& path);

}  // namespace droughtrisk::pipeline
