#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "droughtrisk/drought_index.hpp"
#include "droughtrisk/errors.hpp"
#include "droughtrisk/numerics.hpp"

namespace droughtrisk::spi {

std::string_view category_name(DroughtCategory c) {
  switch (c) {
    case DroughtCategory::extremely_wet: return "Extremely wet";
    case DroughtCategory::very_wet: return "Very wet";
    case DroughtCategory::wet: return "Wet";
    case DroughtCategory::normal: return "Normal";
    case DroughtCategory::dry: return "Dry";
    case DroughtCategory::very_dry: return "Very dry";
    case DroughtCategory::extremely_dry: return "Extremely dry";
  }
  return "Normal";
}

DroughtCategory parse_category(std::string_view name) {
  for (auto c : {DroughtCategory::extremely_wet, DroughtCategory::very_wet, DroughtCategory::wet,
                 DroughtCategory::normal, DroughtCategory::dry, DroughtCategory::very_dry,
                 DroughtCategory::extremely_dry}) {
    if (category_name(c) == name) return c;
  }
  throw DataError("unknown drought category '" + std::string(name) + "'");
}

AccumulatedSeries accumulate(std::span<const std::optional<double>> raw, int m) {
  if (m < 1) throw std::invalid_argument("accumulation period must be >= 1");
  if (static_cast<std::size_t>(m) > raw.size()) {
    throw std::invalid_argument(fmt::format("accumulation period {} exceeds series length {}", m, raw.size()));
  }
  AccumulatedSeries out;
  out.m = m;
  out.valid_from = static_cast<std::size_t>(m - 1);
  out.values.resize(raw.size());
  for (std::size_t t = out.valid_from; t < raw.size(); ++t) {
    double sum = 0.0;
    bool ok = true;
    for (int i = 0; i < m && ok; ++i) {
      const auto& v = raw[t - static_cast<std::size_t>(i)];
      if (!v || !std::isfinite(*v)) {
        ok = false;
      } else {
        sum += *v;
      }
    }
    if (ok) out.values[t] = sum;
  }
  return out;
}

AccumulatedSeries accumulate(std::span<const double> raw, int m) {
  std::vector<std::optional<double>> wrapped;
  wrapped.reserve(raw.size());
  for (double v : raw) {
    wrapped.push_back(std::isfinite(v) ? std::optional<double>(v) : std::nullopt);
  }
  return accumulate(std::span<const std::optional<double>>(wrapped), m);
}

std::vector<WindowRow> accumulate_station(const StationSeries& station, int m) {
  if (m < 1) throw std::invalid_argument("accumulation period must be >= 1");
  std::vector<WindowRow> out;
  const auto& ms = station.months;
  for (std::size_t t = 0; t < ms.size(); ++t) {
    if (t + 1 < static_cast<std::size_t>(m)) continue;
    const std::size_t first = t + 1 - static_cast<std::size_t>(m);
    // A complete window spans exactly m consecutive calendar months.
    if (month_index(ms[t].year, ms[t].month) - month_index(ms[first].year, ms[first].month) != m - 1) continue;
    WindowRow row{ms[t].year, ms[t].month, 0.0, 0.0};
    for (std::size_t i = first; i <= t; ++i) {
      row.accumulated += ms[i].precip_mm;
      row.tmax_mean += ms[i].tmax_c;
    }
    row.tmax_mean /= m;
    out.push_back(row);
  }
  return out;
}

void append_covariates(splines::CovariateTable& table, const StationSeries& station, const WindowRow& row) {
  table[kLon].push_back(station.lon);
  table[kLat].push_back(station.lat);
  table[kMonth].push_back(static_cast<double>(row.month - 1));
  table[kTmax].push_back(row.tmax_mean);
}

double gamma_cdf(double x, double alpha, double psi) {
  if (!(alpha > 0.0) || !(psi > 0.0)) throw std::domain_error("gamma_cdf: parameters must be positive");
  if (!(x > 0.0)) return 0.0;
  return numerics::reg_lower_inc_gamma(alpha, x / psi);
}

double gamma_cdf_at(const gam::GammaGamFit& fit, const std::map<std::string, double>& covariates, double x,
                    bool* extrapolated) {
  const auto p = gam::predict(fit, covariates);
  if (extrapolated) *extrapolated = p.extrapolated;
  return gamma_cdf(x, p.alpha, p.psi);
}

SpiValue spi_transform(double p) {
  if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw std::domain_error("spi_transform: p must be in [0, 1]");
  SpiValue out;
  if (p < kProbabilityClamp) {
    p = kProbabilityClamp;
    out.clamped = true;
  } else if (p > 1.0 - kProbabilityClamp) {
    p = 1.0 - kProbabilityClamp;
    out.clamped = true;
  }
  out.value = numerics::std_normal_quantile(p);
  return out;
}

DroughtCategory classify(double d) {
  if (!std::isfinite(d)) throw std::domain_error("classify: non-finite index value");
  if (d >= 2.0) return DroughtCategory::extremely_wet;
  if (d > 1.5) return DroughtCategory::very_wet;
  if (d > 1.0) return DroughtCategory::wet;
  if (d >= -1.0) return DroughtCategory::normal;
  if (d >= -1.5) return DroughtCategory::dry;
  if (d > -2.0) return DroughtCategory::very_dry;
  return DroughtCategory::extremely_dry;
}

DroughtIndexSeries index_pipeline(const StationSeries& station, const gam::GammaGamFit& fit, int m) {
  if (fit.structure.spec().accumulation_m != m) {
    throw std::invalid_argument(fmt::format("fit was trained at m = {}, index requested at m = {}",
                                            fit.structure.spec().accumulation_m, m));
  }
  DroughtIndexSeries out;
  out.station_id = station.station_id;
  out.m = m;
  const auto rows = accumulate_station(station, m);
  splines::CovariateTable cov;
  std::vector<const WindowRow*> kept;
  for (const auto& r : rows) {
    if (r.accumulated <= 0.0) {
      ++out.zero_excluded;
      continue;
    }
    append_covariates(cov, station, r);
    kept.push_back(&r);
  }
  if (kept.empty()) return out;
  const auto pred = gam::predict(fit, cov);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& r = *kept[i];
    DroughtIndexRecord rec;
    rec.year = r.year;
    rec.month = r.month;
    rec.accumulated = r.accumulated;
    rec.cdf = gamma_cdf(r.accumulated, pred[i].alpha, pred[i].psi);
    const auto s = spi_transform(rec.cdf);
    rec.spi = s.value;
    rec.clamped = s.clamped;
    rec.category = classify(rec.spi);
    rec.severe = rec.spi < kSevereThreshold;
    rec.extrapolated = pred[i].extrapolated;
    if (rec.clamped) ++out.clamp_count;
    if (rec.extrapolated) ++out.extrapolated_count;
    out.records.push_back(rec);
  }
  return out;
}

void write_index_csv_header(std::ostream& os) {
  os << "station_id,date,m,accumulated_mm,gamma_cdf,spi,category,clamped\n";
}

void write_index_csv_rows(std::ostream& os, const DroughtIndexSeries& series) {
  for (const auto& r : series.records) {
    os << fmt::format("{},{:04d}-{:02d},{},{:.17g},{:.17g},{:.17g},{},{}\n", series.station_id, r.year, r.month,
                      series.m, r.accumulated, r.cdf, r.spi, category_name(r.category), r.clamped ? 1 : 0);
  }
}

std::map<std::string, DroughtIndexSeries> read_index_csv(std::istream& is) {
  std::map<std::string, DroughtIndexSeries> out;
  std::string line;
  if (!std::getline(is, line)) throw DataError("index file is empty");
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8 || f[1].size() != 7 || f[1][4] != '-') {
      throw DataError(fmt::format("index file line {}: malformed row", line_no));
    }
    try {
      auto& s = out[f[0]];
      s.station_id = f[0];
      s.m = std::stoi(f[2]);
      DroughtIndexRecord r;
      r.year = std::stoi(f[1].substr(0, 4));
      r.month = std::stoi(f[1].substr(5, 2));
      r.accumulated = std::stod(f[3]);
      r.cdf = std::stod(f[4]);
      r.spi = std::stod(f[5]);
      r.category = parse_category(f[6]);
      r.clamped = f[7] == "1";
      r.severe = r.spi < kSevereThreshold;
      if (r.clamped) ++s.clamp_count;
      s.records.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("index file line {}: bad number", line_no));
    }
  }
  return out;
}

}  // namespace droughtrisk::spi
