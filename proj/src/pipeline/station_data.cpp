#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/station.hpp"

namespace droughtrisk {
namespace {

const std::vector<std::string> kColumns{"station_id", "lon",   "lat",       "elevation_m",
                                        "year",       "month", "precip_mm", "tmax_c"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where, const char* column) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size() || !std::isfinite(v)) {
    throw DataError(fmt::format("{}: bad {} value '{}'", where, column, s));
  }
  return v;
}

int parse_int(const std::string& s, const std::string& where, const char* column) {
  const double v = parse_number(s, where, column);
  if (v != std::floor(v) || std::abs(v) > 1e6) throw DataError(fmt::format("{}: bad {} value '{}'", where, column, s));
  return static_cast<int>(v);
}

}  // namespace

void StationSeries::validate() const {
  if (station_id.empty()) throw DataError("station with an empty id");
  for (std::size_t i = 0; i < months.size(); ++i) {
    const auto& r = months[i];
    if (r.month < 1 || r.month > 12) throw DataError(fmt::format("station {}: month {} out of range", station_id, r.month));
    if (!(r.precip_mm >= 0.0) || !std::isfinite(r.precip_mm)) {
      throw DataError(fmt::format("station {}: negative or invalid precipitation in {:04d}-{:02d}", station_id,
                                  r.year, r.month));
    }
    if (i > 0) {
      const int prev = month_index(months[i - 1].year, months[i - 1].month);
      const int cur = month_index(r.year, r.month);
      if (cur == prev) {
        throw DataError(fmt::format("station {}: duplicate month {:04d}-{:02d}", station_id, r.year, r.month));
      }
      if (cur < prev) throw DataError(fmt::format("station {}: months out of order", station_id));
    }
  }
}

std::vector<StationSeries> ingest_stream(std::istream& is, const std::string& source, std::vector<GapReport>* gaps) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!trim(line).empty() && trim(line)[0] != '#') break;
  }
  if (split(line) != kColumns) {
    throw DataError(fmt::format("{}:{}: expected header '{}'", source, line_no,
                                fmt::format("{}", fmt::join(kColumns, ","))));
  }
  std::map<std::string, StationSeries> by_id;
  std::map<std::string, std::size_t> first_line;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto where = fmt::format("{}:{}", source, line_no);
    const auto f = split(t);
    if (f.size() != kColumns.size()) {
      throw DataError(fmt::format("{}: expected {} fields, found {}", where, kColumns.size(), f.size()));
    }
    if (f[0].empty()) throw DataError(where + ": empty station_id");
    const double lon = parse_number(f[1], where, "lon");
    const double lat = parse_number(f[2], where, "lat");
    const double elev = parse_number(f[3], where, "elevation_m");
    MonthRecord r;
    r.year = parse_int(f[4], where, "year");
    r.month = parse_int(f[5], where, "month");
    r.precip_mm = parse_number(f[6], where, "precip_mm");
    r.tmax_c = parse_number(f[7], where, "tmax_c");
    if (r.month < 1 || r.month > 12) throw DataError(fmt::format("{}: month {} out of range", where, r.month));
    if (r.precip_mm < 0.0) throw DataError(fmt::format("{}: negative precipitation {}", where, f[6]));
    auto [it, inserted] = by_id.try_emplace(f[0]);
    auto& s = it->second;
    if (inserted) {
      s.station_id = f[0];
      s.lon = lon;
      s.lat = lat;
      s.elevation = elev;
      first_line[f[0]] = line_no;
    } else if (s.lon != lon || s.lat != lat || s.elevation != elev) {
      throw DataError(fmt::format("{}: station {} changes coordinates (first seen on line {})", where, f[0],
                                  first_line[f[0]]));
    }
    s.months.push_back(r);
  }
  std::vector<StationSeries> out;
  for (auto& [id, s] : by_id) {
    std::stable_sort(s.months.begin(), s.months.end(), [](const MonthRecord& a, const MonthRecord& b) {
      return month_index(a.year, a.month) < month_index(b.year, b.month);
    });
    s.validate();
    if (gaps) {
      GapReport g;
      g.station_id = id;
      for (std::size_t i = 1; i < s.months.size(); ++i) {
        const int d = month_index(s.months[i].year, s.months[i].month) -
                      month_index(s.months[i - 1].year, s.months[i - 1].month);
        if (d > 1) {
          g.missing_months += d - 1;
          g.gap_ends.emplace_back(s.months[i].year, s.months[i].month);
        }
      }
      gaps->push_back(std::move(g));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<StationSeries> ingest(const std::string& path, std::vector<GapReport>* gaps) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open station file '" + path + "'");
  return ingest_stream(in, path, gaps);
}

void write_stations(std::ostream& os, const std::vector<StationSeries>& stations) {
  os << fmt::format("{}\n", fmt::join(kColumns, ","));
  for (const auto& s : stations) {
    for (const auto& r : s.months) {
      os << fmt::format("{},{},{},{},{},{},{},{}\n", s.station_id, s.lon, s.lat, s.elevation, r.year, r.month,
                        r.precip_mm, r.tmax_c);
    }
  }
}

}  // namespace droughtrisk
