#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/pipeline.hpp"

namespace dr = droughtrisk;
namespace dp = droughtrisk::pipeline;
namespace fs = std::filesystem;
using doctest::Approx;

#ifndef DROUGHTRISK_CLI
#error "DROUGHTRISK_CLI must name the command-line binary"
#endif

namespace {

const char* kTwoStations =
    "station_id,lon,lat,elevation_m,year,month,precip_mm,tmax_c\n"
    "B,16.5,41.0,120,2000,2,10.25,13.5\n"
    "A,15.0,40.5,300,2000,1,55.5,9.0\n"
    "A,15.0,40.5,300,2000,2,0,11.0\n"
    "B,16.5,41.0,120,2000,1,31.125,12.0\n"
    "A,15.0,40.5,300,2000,3,72.75,14.25\n";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("droughtrisk_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DROUGHTRISK_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
#ifdef WEXITSTATUS
  return WEXITSTATUS(status);
#else
  return status;
#endif
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small enough for seconds per stage, large enough for the tail-fit minimums.
const char* kSmallConfig =
    "sim_n_stations = 5\n"
    "sim_n_years = 20\n"
    "m_list = 1,3\n"
    "tps_dim = 5\n"
    "ccs_dim = 5\n"
    "ncs_dim = 5\n"
    "sweep_q_lo = 0.10\n"
    "sweep_q_hi = 0.90\n"
    "seed = 7\n";

int run_all(const fs::path& dir) {
  write_file(dir / "run.cfg", kSmallConfig);
  for (const auto& stage : dp::subcommands()) {
    const int rc = cli("--config \"" + (dir / "run.cfg").string() + "\" --out \"" + dir.string() + "\" " + stage,
                       dir / (stage + ".log"));
    if (rc != 0) {
      MESSAGE(stage, " exited ", rc, ": ", slurp(dir / (stage + ".log")));
      return rc;
    }
  }
  return 0;
}

}  // namespace

TEST_CASE("ingest a two-station file") {
  std::istringstream in(kTwoStations);
  std::vector<dr::GapReport> gaps;
  const auto s = dr::ingest_stream(in, "two", &gaps);
  REQUIRE(s.size() == 2);
  CHECK(s[0].station_id == "A");
  CHECK(s[1].station_id == "B");
  REQUIRE(s[0].months.size() == 3);
  CHECK(s[0].months[2].precip_mm == 72.75);
  CHECK(s[0].months[1].precip_mm == 0.0);
  CHECK(s[1].months[0].month == 1);
  CHECK(s[1].elevation == 120.0);
  for (const auto& g : gaps) CHECK(g.missing_months == 0);
}

TEST_CASE("ingest reports gaps") {
  std::istringstream in(
      "station_id,lon,lat,elevation_m,year,month,precip_mm,tmax_c\n"
      "A,15,40,3,2000,1,5,9\nA,15,40,3,2000,4,5,9\nA,15,40,3,2000,5,5,9\n");
  std::vector<dr::GapReport> gaps;
  dr::ingest_stream(in, "gap", &gaps);
  REQUIRE(gaps.size() == 1);
  CHECK(gaps[0].missing_months == 2);
  REQUIRE(gaps[0].gap_ends.size() == 1);
  CHECK(gaps[0].gap_ends[0] == std::pair{2000, 4});
}

TEST_CASE("ingest rejects bad rows") {
  std::istringstream dup(std::string(kTwoStations) + "A,15.0,40.5,300,2000,2,3,11.0\n");
  try {
    dr::ingest_stream(dup, "dup");
    FAIL("duplicate month accepted");
  } catch (const dr::DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("A") != std::string::npos);
    CHECK(msg.find("2000-02") != std::string::npos);
  }
  std::istringstream neg(std::string(kTwoStations) + "A,15.0,40.5,300,2000,4,-1,11.0\n");
  CHECK_THROWS_AS(dr::ingest_stream(neg, "neg"), dr::DataError);
  std::istringstream bad_month(std::string(kTwoStations) + "A,15.0,40.5,300,2000,13,1,11.0\n");
  CHECK_THROWS_AS(dr::ingest_stream(bad_month, "m13"), dr::DataError);
  std::istringstream short_row(std::string(kTwoStations) + "A,15.0,40.5\n");
  CHECK_THROWS_AS(dr::ingest_stream(short_row, "short"), dr::DataError);
  std::istringstream moved(std::string(kTwoStations) + "A,15.5,40.5,300,2000,5,1,11.0\n");
  CHECK_THROWS_AS(dr::ingest_stream(moved, "moved"), dr::DataError);
}

TEST_CASE("ingest and emit round trip exactly") {
  dp::ScenarioSpec spec;
  spec.n_stations = 3;
  spec.n_years = 2;
  const auto sim = dp::simulate(spec, 91);
  std::stringstream ss;
  dr::write_stations(ss, sim.stations);
  const auto back = dr::ingest_stream(ss);
  REQUIRE(back.size() == sim.stations.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].station_id == sim.stations[i].station_id);
    CHECK(back[i].lon == sim.stations[i].lon);
    CHECK(back[i].lat == sim.stations[i].lat);
    CHECK(back[i].elevation == sim.stations[i].elevation);
    REQUIRE(back[i].months.size() == sim.stations[i].months.size());
    for (std::size_t k = 0; k < back[i].months.size(); ++k) {
      CHECK(back[i].months[k].precip_mm == sim.stations[i].months[k].precip_mm);
      CHECK(back[i].months[k].tmax_c == sim.stations[i].months[k].tmax_c);
    }
  }
}

TEST_CASE("configuration parsing") {
  std::istringstream ok("# comment\nm_list = 1, 6\nq_lo=0.05\nobs_per_year = auto\nscenario = seasonal\n");
  const auto c = dp::parse_config(ok);
  CHECK(c.m_list == std::vector<int>{1, 6});
  CHECK(c.q_lo == 0.05);
  CHECK_FALSE(c.obs_per_year.has_value());
  CHECK(c.scenario.kind == dp::Scenario::seasonal);
  CHECK(c.echo().at("m_list") == "1,6");
  CHECK(c.effective_scale_formula().find("cc(month;6;12)") != std::string::npos);

  std::istringstream unknown("nope = 1\n");
  CHECK_THROWS_AS(dp::parse_config(unknown), dp::UsageError);
  std::istringstream no_eq("m_list\n");
  CHECK_THROWS_AS(dp::parse_config(no_eq), dp::UsageError);
  std::istringstream bad_num("q_lo = abc\n");
  CHECK_THROWS_AS(dp::parse_config(bad_num), dp::UsageError);
  std::istringstream twice("q_lo = 0.1\nq_lo = 0.2\n");
  CHECK_THROWS_AS(dp::parse_config(twice), dp::UsageError);
  // Cross-field checks run once command-line overrides are applied.
  std::istringstream order("q_lo = 0.9\nq_hi = 0.1\n");
  CHECK_THROWS_AS(dp::parse_config(order).validate(), dp::UsageError);
  std::istringstream big_m("m_list = 60\n");
  CHECK_THROWS_AS(dp::parse_config(big_m).validate(), dp::UsageError);
  std::istringstream bad_formula("scale_formula = te(\n");
  CHECK_THROWS_AS(dp::parse_config(bad_formula).validate(), dp::UsageError);
  CHECK_NOTHROW(dp::RunConfig{}.validate());
  CHECK_THROWS(dp::parse_scenario("sideways"));
}

TEST_CASE("simulation is reproducible") {
  dp::ScenarioSpec spec;
  spec.n_stations = 4;
  spec.n_years = 3;
  const auto a = dp::simulate(spec, 92);
  const auto b = dp::simulate(spec, 92);
  const auto c = dp::simulate(spec, 93);
  std::stringstream sa, sb, sc;
  dr::write_stations(sa, a.stations);
  dr::write_stations(sb, b.stations);
  dr::write_stations(sc, c.stations);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str() != sc.str());
  CHECK(a.truth.size() == 4u * 36u);
}

TEST_CASE("constant scenario moments") {
  dp::ScenarioSpec spec;
  const auto sim = dp::simulate(spec, 94);
  std::vector<double> x;
  for (const auto& s : sim.stations)
    for (const auto& m : s.months) x.push_back(m.precip_mm);
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n - 1.0;
  const double mu = spec.alpha * spec.psi, sigma2 = spec.alpha * spec.psi * spec.psi;
  CHECK(std::abs(mean - mu) <= 3.0 * std::sqrt(sigma2 / n));
  // Var of the sample variance is (mu4 - sigma^4) / n with mu4 = sigma^4 (3 + 6 / alpha).
  CHECK(std::abs(var - sigma2) <= 3.0 * sigma2 * std::sqrt((2.0 + 6.0 / spec.alpha) / n));
  for (const auto& t : sim.truth) {
    CHECK(t.alpha == spec.alpha);
    CHECK(t.psi == spec.psi);
  }
}

TEST_CASE("seasonal scenario peaks at the annual frequency") {
  dp::ScenarioSpec spec;
  spec.kind = dp::Scenario::seasonal;
  const auto sim = dp::simulate(spec, 95);
  const std::size_t n = sim.stations.front().months.size();
  std::vector<double> avg(n, 0.0);
  for (const auto& s : sim.stations)
    for (std::size_t i = 0; i < n; ++i) avg[i] += s.months[i].precip_mm / sim.stations.size();
  double mean = 0.0;
  for (double v : avg) mean += v / n;
  std::size_t best = 0;
  double best_power = -1.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += (avg[t] - mean) * std::polar(1.0, -2.0 * M_PI * k * t / n);
    if (std::norm(acc) > best_power) {
      best_power = std::norm(acc);
      best = k;
    }
  }
  CHECK(best * 12 == n);
}

TEST_CASE("qq plotting positions") {
  std::vector<double> u{0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0};
  const auto pts = dp::qq_points(u, [](double p) { return p; });
  REQUIRE(pts.size() == 10);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(pts[i].theoretical == Approx(0.05 + 0.1 * i));
    if (i > 0) CHECK(pts[i].empirical >= pts[i - 1].empirical);
  }
  CHECK(pts.front().empirical == 0.0);
  CHECK(pts.back().empirical == 0.9);
}

TEST_CASE("qq against the generating model hugs the identity") {
  std::vector<double> z(2000);
  std::mt19937_64 rng(96);
  std::normal_distribution<double> g;
  for (auto& v : z) v = g(rng);
  auto cdf = [](double y) { return 0.5 * std::erfc(-y / std::sqrt(2.0)); };
  const auto pts = dp::qq_points(z, [&](double p) { return dp::invert_cdf(cdf, p); });
  double worst = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double pos = (static_cast<double>(i) + 0.5) / pts.size();
    worst = std::max(worst, std::abs(cdf(pts[i].empirical) - pos));
  }
  CHECK(worst <= 1.63 / std::sqrt(2000.0));
}

TEST_CASE("cdf inversion") {
  auto cdf = [](double y) { return 0.5 * std::erfc(-y / std::sqrt(2.0)); };
  CHECK(dp::invert_cdf(cdf, 0.5) == Approx(0.0).scale(1.0).epsilon(1e-10));
  CHECK(dp::invert_cdf(cdf, 0.02275) == Approx(-2.0).epsilon(1e-3));
  // Brackets widen when the quantile lies outside the initial interval.
  auto wide = [](double y) { return 1.0 / (1.0 + std::exp(-y / 10.0)); };
  CHECK(dp::invert_cdf(wide, 0.9999) == Approx(10.0 * std::log(0.9999 / 0.0001)).epsilon(1e-8));
}

TEST_CASE("command line usage errors") {
  const auto dir = fresh_dir("usage");
  CHECK(cli("", dir / "none.log") == 1);
  CHECK(cli("frobnicate", dir / "bad.log") == 1);
  write_file(dir / "bad.cfg", "nonsense_key = 3\n");
  CHECK(cli("--config \"" + (dir / "bad.cfg").string() + "\" simulate", dir / "cfg.log") == 1);
}

TEST_CASE("risk before fit-tails is a missing artifact") {
  const auto dir = fresh_dir("missing");
  write_file(dir / "run.cfg", kSmallConfig);
  const std::string base = "--config \"" + (dir / "run.cfg").string() + "\" --out \"" + dir.string() + "\" ";
  REQUIRE(cli(base + "simulate", dir / "sim.log") == 0);
  CHECK(cli(base + "risk", dir / "risk.log") == 2);
  CHECK(cli(base + "spi", dir / "spi.log") == 2);
}

TEST_CASE("end to end, manifest and rerun determinism") {
  const auto a = fresh_dir("e2e_a");
  const auto b = fresh_dir("e2e_b");
  REQUIRE(run_all(a) == 0);
  REQUIRE(run_all(b) == 0);

  std::vector<std::string> expected{"stations.csv", "truth.csv"};
  for (int m : {1, 3})
    for (const char* stem : {"gamma_fit_m", "edf_m", "spi_m", "tails_m", "risk_m", "egpd_m", "return_levels_m", "qq_m"})
      expected.push_back(stem + std::to_string(m) + (std::string(stem) == "gamma_fit_m" ? ".txt" : ".csv"));
  for (const auto& f : expected) CHECK_MESSAGE(fs::exists(a / f), f);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  for (const auto& f : expected) {
    REQUIRE_MESSAGE(manifest["files"].contains(f), f);
    CHECK(manifest["files"][f]["sha256"].get<std::string>() == dp::sha256_file((a / f).string()));
  }

  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    if (entry.path().extension() != ".csv") continue;
    const auto name = entry.path().filename();
    REQUIRE(fs::exists(b / name));
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b / name), name.string());
    ++compared;
  }
  CHECK(compared >= expected.size());

  const std::string risk = slurp(a / "risk_m1.csv");
  CHECK(risk.rfind("station_id,lon,lat,m,model,u_c,risk\n", 0) == 0);
  fs::remove_all(a);
  fs::remove_all(b);
}
