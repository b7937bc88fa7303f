#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "droughtrisk/pipeline.hpp"

namespace droughtrisk::pipeline {
namespace {

// Distinct stream for the station layout so that changing the record
// length does not move the stations.
constexpr std::uint64_t kLayoutStream = 0x5354415449ULL;

double mid(double a, double b) { return 0.5 * (a + b); }

}  // namespace

Scenario parse_scenario(const std::string& name) {
  if (name == "constant") return Scenario::constant;
  if (name == "seasonal") return Scenario::seasonal;
  if (name == "trend") return Scenario::trend;
  if (name == "spatial-gradient") return Scenario::spatial_gradient;
  throw UsageError("unknown scenario '" + name + "' (constant, seasonal, trend, spatial-gradient)");
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::constant: return "constant";
    case Scenario::seasonal: return "seasonal";
    case Scenario::trend: return "trend";
    case Scenario::spatial_gradient: return "spatial-gradient";
  }
  return "constant";
}

void ScenarioSpec::validate() const {
  if (n_stations < 1) throw UsageError("scenario: n_stations must be >= 1");
  if (n_years < 1) throw UsageError("scenario: n_years must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw UsageError("scenario: alpha must be positive");
  if (!(psi > 0.0) || !std::isfinite(psi)) throw UsageError("scenario: psi must be positive");
  for (double v : {log_psi_mean, amplitude, trend, gradient}) {
    if (!std::isfinite(v)) throw UsageError("scenario: surface coefficients must be finite");
  }
  if (!(lon_min < lon_max) || !(lat_min < lat_max)) throw UsageError("scenario: empty bounding box");
}

TruthParams scenario_truth(const ScenarioSpec& spec, const StationSeries& station, int year, int month) {
  TruthParams t{spec.alpha, spec.psi};
  switch (spec.kind) {
    case Scenario::constant:
      break;
    case Scenario::seasonal:
      t.psi = std::exp(spec.log_psi_mean + spec.amplitude * std::sin(2.0 * std::numbers::pi * month / 12.0));
      break;
    case Scenario::trend: {
      const double span = std::max(1, spec.n_years - 1);
      t.psi = spec.psi * std::exp(spec.trend * (year - spec.start_year) / span);
      break;
    }
    case Scenario::spatial_gradient: {
      const double u = (station.lon - mid(spec.lon_min, spec.lon_max)) / (spec.lon_max - spec.lon_min);
      const double v = (station.lat - mid(spec.lat_min, spec.lat_max)) / (spec.lat_max - spec.lat_min);
      t.psi = spec.psi * std::exp(spec.gradient * u);
      t.alpha = spec.alpha * std::exp(0.25 * v);
      break;
    }
  }
  return t;
}

Simulation simulate(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Simulation sim;
  std::seed_seq layout_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                           static_cast<std::uint32_t>(kLayoutStream)};
  std::mt19937_64 layout(layout_seq);
  std::uniform_real_distribution<double> ulon(spec.lon_min, spec.lon_max);
  std::uniform_real_distribution<double> ulat(spec.lat_min, spec.lat_max);
  std::uniform_real_distribution<double> uelev(0.0, 1500.0);

  for (int s = 0; s < spec.n_stations; ++s) {
    StationSeries st;
    st.station_id = fmt::format("S{:03d}", s + 1);
    // Rounded so the CSV carries them exactly.
    st.lon = std::round(ulon(layout) * 1e4) / 1e4;
    st.lat = std::round(ulat(layout) * 1e4) / 1e4;
    st.elevation = std::round(uelev(layout));

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.5);
    for (int y = 0; y < spec.n_years; ++y) {
      const int year = spec.start_year + y;
      for (int month = 1; month <= 12; ++month) {
        const auto truth = scenario_truth(spec, st, year, month);
        std::gamma_distribution<double> g(truth.alpha, truth.psi);
        MonthRecord r;
        r.year = year;
        r.month = month;
        r.precip_mm = g(rng);
        r.tmax_c = 20.0 + 8.0 * std::sin(2.0 * std::numbers::pi * (month - 4) / 12.0) - 0.006 * st.elevation +
                   noise(rng);
        st.months.push_back(r);
        sim.truth.push_back({st.station_id, year, month, truth.alpha, truth.psi});
      }
    }
    sim.stations.push_back(std::move(st));
  }
  return sim;
}

void write_truth(std::ostream& os, const std::vector<TruthRow>& truth) {
  os << "station_id,year,month,alpha,psi\n";
  for (const auto& t : truth) os << fmt::format("{},{},{},{},{}\n", t.station_id, t.year, t.month, t.alpha, t.psi);
}

}  // namespace droughtrisk::pipeline
