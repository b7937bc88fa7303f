#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace droughtrisk {

struct MonthRecord {
  int year = 0;
  int month = 0;  // 1..12
  double precip_mm = 0.0;
  double tmax_c = 0.0;
};

/// Monthly record of one station, sorted by (year, month) without duplicates.
struct StationSeries {
  std::string station_id;
  double lon = 0.0;
  double lat = 0.0;
  double elevation = 0.0;
  std::vector<MonthRecord> months;

  /// Throws DataError on unsorted or duplicated months or negative precipitation.
  void validate() const;
};

/// Months since year 0; consecutive calendar months differ by one.
inline int month_index(int year, int month) { return year * 12 + (month - 1); }

struct GapReport {
  std::string station_id;
  int missing_months = 0;
  /// (year, month) of the first month after each gap.
  std::vector<std::pair<int, int>> gap_ends;
};

/// Reads the station CSV (station_id, lon, lat, elevation_m, year, month,
/// precip_mm, tmax_c). Rows may appear in any order; stations are returned
/// sorted by id and months sorted in time. Errors carry line numbers.
std::vector<StationSeries> ingest(const std::string& path, std::vector<GapReport>* gaps = nullptr);
std::vector<StationSeries> ingest_stream(std::istream& is, const std::string& source = "<stream>",
                                         std::vector<GapReport>* gaps = nullptr);

/// Writes stations in the ingest schema using round-trip number formatting.
void write_stations(std::ostream& os, const std::vector<StationSeries>& stations);

}  // namespace droughtrisk
