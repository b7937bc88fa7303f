#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "droughtrisk/drought_index.hpp"
#include "droughtrisk/egpd.hpp"
#include "droughtrisk/errors.hpp"
#include "droughtrisk/gamma_gam.hpp"
#include "droughtrisk/pipeline.hpp"
#include "droughtrisk/tail_risk.hpp"

namespace droughtrisk::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kNA = "NA";

std::string num(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------- files

struct OutputRecord {
  std::string path;  // relative to out_dir
  std::string sha256;
  std::uintmax_t bytes = 0;
};

class Context {
 public:
  Context(const RunConfig& cfg, std::ostream& log) : cfg(cfg), log(log), out(cfg.out_dir) {}

  const RunConfig& cfg;
  std::ostream& log;
  fs::path out;
  std::vector<OutputRecord> outputs;

  fs::path artifact(const std::string& name) const { return out / name; }

  /// Fails with a message naming the subcommand that produces `name`.
  fs::path require(const std::string& name, const std::string& producer) const {
    const auto p = artifact(name);
    if (!fs::exists(p)) {
      throw ArtifactError(fmt::format("missing artifact {}; run 'droughtrisk {}' first", p.string(), producer));
    }
    return p;
  }

  /// Writes through a temporary file and renames it into place.
  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const auto target = artifact(name);
    const auto tmp = fs::path(target.string() + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw DataError("cannot write " + tmp.string());
      body(os);
      os.flush();
      if (!os) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
    record(name);
  }

  void record(const std::string& name) {
    const auto p = artifact(name);
    outputs.push_back({name, sha256_file(p.string()), fs::file_size(p)});
  }
};

// Comma-separated table with a header; '#' lines are comments.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("table lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} fields, found {}", path.string(), line_no, t.header.size(),
                                  cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw DataError(path.string() + ": empty table");
  return t;
}

double cell_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw DataError("bad number '" + s + "'");
  return v;
}

// ---------------------------------------------------------------- work pool

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// stored by index so that output order does not depend on scheduling.
/// The exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto k = static_cast<std::size_t>(std::max(1, threads));
  if (k == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(k, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------- stations

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open station list '" + path + "'");
  std::vector<std::string> ids;
  std::string tok;
  while (std::getline(in, tok)) {
    for (auto& c : tok) {
      if (c == ',' || c == '\t' || c == '\r') c = ' ';
    }
    std::stringstream ss(tok);
    std::string id;
    while (ss >> id) {
      if (id[0] == '#') break;
      ids.push_back(id);
    }
  }
  return ids;
}

std::vector<StationSeries> load_stations(const Context& ctx) {
  fs::path path;
  if (ctx.cfg.data_path.empty()) {
    path = ctx.require("stations.csv", "simulate");
  } else {
    path = ctx.cfg.data_path;
    if (!fs::exists(path)) throw DataError("station data file '" + path.string() + "' does not exist");
  }
  std::vector<GapReport> gaps;
  auto stations = ingest(path.string(), &gaps);
  for (const auto& g : gaps) {
    if (g.missing_months > 0) {
      ctx.log << fmt::format("station {}: {} missing months in {} gaps\n", g.station_id, g.missing_months,
                             g.gap_ends.size());
    }
  }
  if (!ctx.cfg.stations_filter_path.empty()) {
    const auto ids = read_id_list(ctx.cfg.stations_filter_path);
    const std::set<std::string> keep(ids.begin(), ids.end());
    for (const auto& id : keep) {
      const bool found = std::any_of(stations.begin(), stations.end(), [&](const auto& s) { return s.station_id == id; });
      if (!found) throw DataError("station filter names unknown station '" + id + "'");
    }
    std::erase_if(stations, [&](const StationSeries& s) { return !keep.count(s.station_id); });
  }
  if (stations.empty()) throw DataError("no stations to process");
  return stations;
}

/// Configured validation ids plus validation_count ids drawn with the run seed.
std::set<std::string> validation_set(const RunConfig& cfg, const std::vector<StationSeries>& stations) {
  std::set<std::string> v;
  std::vector<std::string> ids;
  for (const auto& s : stations) ids.push_back(s.station_id);
  for (const auto& id : cfg.validation_stations) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      throw DataError("validation station '" + id + "' is not in the data");
    }
    v.insert(id);
  }
  if (cfg.validation_count > 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x76616cu};
    std::mt19937_64 rng(seq);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      if (static_cast<int>(v.size()) >= static_cast<int>(cfg.validation_stations.size()) + cfg.validation_count) break;
      v.insert(id);
    }
  }
  if (v.size() >= stations.size()) throw UsageError("every station is a validation station; nothing left to fit");
  return v;
}

const StationSeries* find_station(const std::vector<StationSeries>& stations, const std::string& id) {
  for (const auto& s : stations) {
    if (s.station_id == id) return &s;
  }
  return nullptr;
}

std::string fit_name(int m) { return fmt::format("gamma_fit_m{}.txt", m); }
std::string spi_name(int m) { return fmt::format("spi_m{}.csv", m); }
std::string tails_name(int m) { return fmt::format("tails_m{}.csv", m); }
std::string egpd_name(int m) { return fmt::format("egpd_m{}.csv", m); }

std::string predictor_name(gam::Predictor p) { return p == gam::Predictor::scale ? "scale" : "shape"; }

std::map<std::string, spi::DroughtIndexSeries> load_spi(const Context& ctx, int m) {
  const auto path = ctx.require(spi_name(m), "spi");
  std::ifstream in(path);
  return spi::read_index_csv(in);
}

std::vector<double> spi_values(const spi::DroughtIndexSeries& s) {
  std::vector<double> v;
  v.reserve(s.records.size());
  for (const auto& r : s.records) v.push_back(r.spi);
  return v;
}

double years_span(const spi::DroughtIndexSeries& s) {
  if (s.records.empty()) return 0.0;
  const auto& a = s.records.front();
  const auto& b = s.records.back();
  return (month_index(b.year, b.month) - month_index(a.year, a.month) + 1) / 12.0;
}

// ---------------------------------------------------------------- stages

void stage_simulate(Context& ctx) {
  fs::create_directories(ctx.out);
  const auto sim = simulate(ctx.cfg.scenario, ctx.cfg.seed);
  ctx.write("stations.csv", [&](std::ostream& os) { write_stations(os, sim.stations); });
  ctx.write("truth.csv", [&](std::ostream& os) { write_truth(os, sim.truth); });
  ctx.log << fmt::format("simulated {} stations x {} years ({})\n", sim.stations.size(), ctx.cfg.scenario.n_years,
                         scenario_name(ctx.cfg.scenario.kind));
}

void stage_fit_gamma(Context& ctx) {
  const auto stations = load_stations(ctx);
  const auto held_out = validation_set(ctx.cfg, stations);
  std::set<std::pair<double, double>> sites;
  for (const auto& s : stations) {
    if (!held_out.count(s.station_id)) sites.insert({s.lon, s.lat});
  }
  gam::GammaGamSpec base;
  base.scale_formula = cap_thin_plate(splines::parse_formula(ctx.cfg.effective_scale_formula()),
                                      static_cast<int>(sites.size()));
  base.shape_formula = cap_thin_plate(splines::parse_formula(ctx.cfg.effective_shape_formula()),
                                      static_cast<int>(sites.size()));

  const auto& ms = ctx.cfg.m_list;
  std::vector<std::optional<gam::GammaGamFit>> fits(ms.size());
  std::vector<std::string> failures(ms.size());
  parallel_for(ms.size(), ctx.cfg.threads, [&](std::size_t k) {
    gam::GammaData data;
    for (const auto& s : stations) {
      if (held_out.count(s.station_id)) continue;
      for (const auto& row : spi::accumulate_station(s, ms[k])) {
        data.x.push_back(row.accumulated);
        spi::append_covariates(data.covariates, s, row);
      }
    }
    auto spec = base;
    spec.accumulation_m = ms[k];
    try {
      fits[k] = gam::fit(data, spec);
    } catch (const FitError& e) {
      failures[k] = e.what();
    }
  });

  std::string failed;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    if (!fits[k]) {
      failed += fmt::format(" m={}: {};", ms[k], failures[k]);
      continue;
    }
    const auto& f = *fits[k];
    ctx.write(fit_name(ms[k]), [&](std::ostream& os) { gam::write_fit(os, f); });
    ctx.write(fmt::format("edf_m{}.csv", ms[k]), [&](std::ostream& os) {
      os << "m,predictor,term,smooth,lambda_count,edf,max_edf,null_space_dim\n";
      const auto& layout = f.structure.layout();
      for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& t = f.structure.term(layout[i]);
        os << fmt::format("{},{},{},{},{},{},{},{}\n", ms[k], predictor_name(layout[i].predictor),
                          layout[i].term_index, t.spec().to_string(), layout[i].n_lambda, f.edf_per_smooth[i],
                          t.max_edf(), t.null_space_dim());
      }
    });
    ctx.log << fmt::format("m={}: {} observations ({} zero totals excluded), REML {} after {} outer iterations\n",
                           ms[k], f.n_obs, f.n_zero_excluded, f.reml_value, f.outer_iterations);
  }
  if (!failed.empty()) throw FitError("Gamma GAM did not converge:" + failed);
}

void stage_spi(Context& ctx) {
  const auto stations = load_stations(ctx);
  for (int m : ctx.cfg.m_list) {
    const auto path = ctx.require(fit_name(m), "fit-gamma");
    std::ifstream in(path);
    const auto fit = gam::read_fit(in);
    std::vector<spi::DroughtIndexSeries> series(stations.size());
    parallel_for(stations.size(), ctx.cfg.threads,
                 [&](std::size_t i) { series[i] = spi::index_pipeline(stations[i], fit, m); });
    std::size_t clamped = 0, zeros = 0, extrapolated = 0;
    ctx.write(spi_name(m), [&](std::ostream& os) {
      spi::write_index_csv_header(os);
      for (const auto& s : series) {
        spi::write_index_csv_rows(os, s);
        clamped += s.clamp_count;
        zeros += s.zero_excluded;
        extrapolated += s.extrapolated_count;
      }
    });
    ctx.log << fmt::format("m={}: {} stations indexed; {} clamped, {} zero totals skipped, {} extrapolated\n", m,
                           series.size(), clamped, zeros, extrapolated);
  }
}

const std::vector<std::string> kTailColumns{
    "station_id", "model", "status", "n",      "n_lower", "n_upper", "loglik", "converged",
    "mu",         "sigma", "xi_l",   "beta_l", "xi_r",    "beta_r",  "d_l",    "d_r",
    "alpha1",     "alpha2", "beta1", "beta2",  "gamma1",  "gamma2",  "nu"};

struct TailRow {
  std::map<std::string, std::string> cells;

  std::string line() const {
    std::vector<std::string> out;
    for (const auto& c : kTailColumns) {
      const auto it = cells.find(c);
      out.push_back(it == cells.end() ? "" : it->second);
    }
    return fmt::format("{}\n", fmt::join(out, ","));
  }
};

TailRow gpngp_row(const std::string& id, const tails::GpNgpFit& f) {
  const auto& p = f.params;
  return {{{"station_id", id},
           {"model", "gpngp"},
           {"status", "ok"},
           {"n", std::to_string(f.n)},
           {"n_lower", std::to_string(f.n_lower)},
           {"n_upper", std::to_string(f.n_upper)},
           {"loglik", num(f.diagnostics.loglik)},
           {"converged", f.diagnostics.converged ? "1" : "0"},
           {"mu", num(p.mu)},
           {"sigma", num(p.sigma)},
           {"xi_l", num(p.xi_l)},
           {"beta_l", num(p.beta_l)},
           {"xi_r", num(p.xi_r)},
           {"beta_r", num(p.beta_r)},
           {"d_l", num(p.d_l)},
           {"d_r", num(p.d_r)}}};
}

TailRow bats_row(const std::string& id, std::size_t n, const tails::BatsFit& f) {
  const auto& p = f.params;
  return {{{"station_id", id},
           {"model", "bats"},
           {"status", "ok"},
           {"n", std::to_string(n)},
           {"loglik", num(f.diagnostics.loglik)},
           {"converged", f.diagnostics.converged ? "1" : "0"},
           {"alpha1", num(p.alpha1)},
           {"alpha2", num(p.alpha2)},
           {"beta1", num(p.beta1)},
           {"beta2", num(p.beta2)},
           {"gamma1", num(p.gamma1)},
           {"gamma2", num(p.gamma2)},
           {"nu", num(p.nu)}}};
}

TailRow failed_row(const std::string& id, const char* model, std::size_t n) {
  return {{{"station_id", id}, {"model", model}, {"status", "failed"}, {"n", std::to_string(n)}}};
}

void stage_fit_tails(Context& ctx) {
  const auto stations = load_stations(ctx);
  const auto held_out = validation_set(ctx.cfg, stations);
  std::string failed;
  for (int m : ctx.cfg.m_list) {
    const auto index = load_spi(ctx, m);
    std::vector<const spi::DroughtIndexSeries*> todo;
    for (const auto& s : stations) {
      if (held_out.count(s.station_id)) continue;
      const auto it = index.find(s.station_id);
      if (it == index.end()) throw DataError(fmt::format("{} has no rows for station {}", spi_name(m), s.station_id));
      todo.push_back(&it->second);
    }
    std::vector<std::array<TailRow, 2>> rows(todo.size());
    std::vector<std::string> errors(todo.size());
    parallel_for(todo.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto& id = todo[i]->station_id;
      const auto d = spi_values(*todo[i]);
      try {
        rows[i][0] = gpngp_row(id, tails::gpngp_fit(d, ctx.cfg.q_lo, ctx.cfg.q_hi));
      } catch (const FitError& e) {
        rows[i][0] = failed_row(id, "gpngp", d.size());
        errors[i] += fmt::format(" {} gpngp: {};", id, e.what());
      }
      try {
        rows[i][1] = bats_row(id, d.size(), tails::bats_fit(d));
      } catch (const FitError& e) {
        rows[i][1] = failed_row(id, "bats", d.size());
        errors[i] += fmt::format(" {} bats: {};", id, e.what());
      }
    });
    ctx.write(tails_name(m), [&](std::ostream& os) {
      os << fmt::format("{}\n", fmt::join(kTailColumns, ","));
      for (const auto& r : rows) os << r[0].line() << r[1].line();
    });
    for (const auto& e : errors) {
      if (!e.empty()) failed += fmt::format(" m={}:{}", m, e);
    }
    ctx.log << fmt::format("m={}: tail models fitted at {} stations\n", m, todo.size());
  }
  if (!failed.empty()) throw FitError("tail fits failed:" + failed);
}

tails::GpNgpParams gpngp_row(const Table& t, const std::vector<std::string>& r) {
  auto v = [&](const char* c) { return cell_double(r[t.col(c)]); };
  return {v("mu"), v("sigma"), v("xi_l"), v("beta_l"), v("xi_r"), v("beta_r"), v("d_l"), v("d_r")};
}

tails::BatsParams bats_row(const Table& t, const std::vector<std::string>& r) {
  auto v = [&](const char* c) { return cell_double(r[t.col(c)]); };
  return {v("alpha1"), v("alpha2"), v("beta1"), v("beta2"), v("gamma1"), v("gamma2"), v("nu")};
}

void stage_risk(Context& ctx) {
  const auto stations = load_stations(ctx);
  for (int m : ctx.cfg.m_list) {
    const auto t = read_table(ctx.require(tails_name(m), "fit-tails"));
    std::vector<std::string> lines(t.rows.size());
    parallel_for(t.rows.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto& r = t.rows[i];
      if (r[t.col("status")] != "ok") return;
      const auto& id = r[t.col("station_id")];
      const auto* st = find_station(stations, id);
      if (!st) throw DataError(fmt::format("{}: station {} is not in the data", tails_name(m), id));
      const auto est = r[t.col("model")] == "gpngp" ? tails::drought_risk(gpngp_row(t, r), ctx.cfg.u_c)
                                                     : tails::drought_risk(bats_row(t, r), ctx.cfg.u_c);
      lines[i] = fmt::format("{},{},{},{},{},{},{}\n", id, st->lon, st->lat, m, tails::model_name(est.model),
                             ctx.cfg.u_c, est.risk);
    });
    ctx.write(fmt::format("risk_m{}.csv", m), [&](std::ostream& os) {
      os << "station_id,lon,lat,m,model,u_c,risk\n";
      for (const auto& l : lines) os << l;
    });
  }
}

const std::vector<std::string> kEgpdColumns{"station_id", "tail",  "status", "n_tail",    "n_total",
                                            "years_span", "kappa", "sigma",  "xi",        "converged",
                                            "xi_at_bound", "loglik"};

void stage_fit_egpd(Context& ctx) {
  const auto stations = load_stations(ctx);
  const auto held_out = validation_set(ctx.cfg, stations);
  std::string failed;
  for (int m : ctx.cfg.m_list) {
    const auto index = load_spi(ctx, m);
    std::vector<const spi::DroughtIndexSeries*> todo;
    for (const auto& s : stations) {
      if (held_out.count(s.station_id)) continue;
      const auto it = index.find(s.station_id);
      if (it == index.end()) throw DataError(fmt::format("{} has no rows for station {}", spi_name(m), s.station_id));
      todo.push_back(&it->second);
    }
    std::vector<std::string> lines(todo.size());
    std::vector<std::string> errors(todo.size());
    parallel_for(todo.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto& s = *todo[i];
      const auto d = spi_values(s);
      const auto split = egpd::split_tails(d);
      const double span = years_span(s);
      for (auto tail : {egpd::Tail::wet, egpd::Tail::dry}) {
        const auto& z = tail == egpd::Tail::wet ? split.wet : split.dry;
        const auto prefix = fmt::format("{},{}", s.station_id, egpd::tail_name(tail));
        try {
          const auto f = egpd::egpd_fit(z);
          lines[i] += fmt::format("{},ok,{},{},{},{},{},{},{},{},{}\n", prefix, z.size(), d.size(), span,
                                  f.params.kappa, f.params.sigma, f.params.xi, f.converged ? 1 : 0,
                                  f.xi_at_bound ? 1 : 0, f.loglik);
        } catch (const FitError& e) {
          lines[i] += fmt::format("{},failed,{},{},{},,,,,,\n", prefix, z.size(), d.size(), span);
          errors[i] += fmt::format(" {} {}: {};", s.station_id, egpd::tail_name(tail), e.what());
        }
      }
    });
    ctx.write(egpd_name(m), [&](std::ostream& os) {
      os << fmt::format("{}\n", fmt::join(kEgpdColumns, ","));
      for (const auto& l : lines) os << l;
    });
    for (const auto& e : errors) {
      if (!e.empty()) failed += fmt::format(" m={}:{}", m, e);
    }
  }
  if (!failed.empty()) throw FitError("EGPD fits failed:" + failed);
}

void stage_return_levels(Context& ctx) {
  const auto stations = load_stations(ctx);
  for (int m : ctx.cfg.m_list) {
    const auto t = read_table(ctx.require(egpd_name(m), "fit-egpd"));
    // station -> (wet row, dry row)
    std::map<std::string, std::array<const std::vector<std::string>*, 2>> by_station;
    std::vector<std::string> order;
    for (const auto& r : t.rows) {
      const auto& id = r[t.col("station_id")];
      if (!by_station.count(id)) order.push_back(id);
      by_station[id][r[t.col("tail")] == "wet" ? 0 : 1] = &r;
    }
    std::vector<std::string> lines(order.size());
    parallel_for(order.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto& id = order[i];
      const auto& pair = by_station.at(id);
      if (!pair[0] || !pair[1]) throw DataError(fmt::format("{}: station {} lacks a tail row", egpd_name(m), id));
      if ((*pair[0])[t.col("status")] != "ok" || (*pair[1])[t.col("status")] != "ok") return;
      const auto* st = find_station(stations, id);
      if (!st) throw DataError(fmt::format("{}: station {} is not in the data", egpd_name(m), id));
      auto v = [&](int k, const char* c) { return cell_double((*pair[k])[t.col(c)]); };
      const egpd::EgpdParams wet{v(0, "kappa"), v(0, "sigma"), v(0, "xi")};
      const egpd::EgpdParams dry{v(1, "kappa"), v(1, "sigma"), v(1, "xi")};
      const auto levels = egpd::return_levels(
          wet, dry, static_cast<std::size_t>(v(0, "n_tail")), static_cast<std::size_t>(v(1, "n_tail")),
          static_cast<std::size_t>(v(0, "n_total")), ctx.cfg.T_list, v(0, "years_span"), ctx.cfg.obs_per_year);
      for (const auto* table : {&levels.wet, &levels.dry}) {
        for (const auto& row : table->rows) {
          lines[i] += fmt::format("{},{},{},{},{},{},{},{}\n", id, st->lon, st->lat, m, egpd::tail_name(table->tail),
                                  row.T, row.defined ? num(row.exceed_prob) : kNA,
                                  row.defined ? num(row.level) : kNA);
        }
      }
    });
    ctx.write(fmt::format("return_levels_m{}.csv", m), [&](std::ostream& os) {
      os << "# exceed_prob = 1 / (T_years * annual_rate); annual_rate = n_tail / n_total * obs_per_year (obs_per_year="
         << (ctx.cfg.obs_per_year ? num(*ctx.cfg.obs_per_year) : std::string("n_total / years_span")) << ")\n";
      os << "station_id,lon,lat,m,tail,T_years,exceed_prob,level\n";
      for (const auto& l : lines) os << l;
    });
  }
}

void stage_qq(Context& ctx) {
  const auto stations = load_stations(ctx);
  auto targets = validation_set(ctx.cfg, stations);
  if (targets.empty()) {
    ctx.log << "qq: no validation stations configured; using every station\n";
    for (const auto& s : stations) targets.insert(s.station_id);
  }
  const std::vector<std::string> ids(targets.begin(), targets.end());
  for (int m : ctx.cfg.m_list) {
    const auto index = load_spi(ctx, m);
    // Stations already fitted by fit-tails are reused; the fits are
    // deterministic, so refitting would reproduce the same parameters.
    std::map<std::string, tails::GpNgpParams> stored_gpngp;
    std::map<std::string, tails::BatsParams> stored_bats;
    if (fs::exists(ctx.out / tails_name(m))) {
      const auto t = read_table(ctx.out / tails_name(m));
      for (const auto& r : t.rows) {
        if (r[t.col("status")] != "ok") continue;
        const auto& id = r[t.col("station_id")];
        if (r[t.col("model")] == "gpngp") {
          stored_gpngp.emplace(id, gpngp_row(t, r));
        } else {
          stored_bats.emplace(id, bats_row(t, r));
        }
      }
    }
    std::vector<std::string> lines(ids.size());
    parallel_for(ids.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto it = index.find(ids[i]);
      if (it == index.end()) throw DataError(fmt::format("{} has no rows for station {}", spi_name(m), ids[i]));
      const auto d = spi_values(it->second);
      const auto sg = stored_gpngp.find(ids[i]);
      const auto sb = stored_bats.find(ids[i]);
      auto emit = [&](const char* model, std::span<const double> sample, const std::function<double(double)>& q) {
        const auto pts = qq_points(sample, q);
        for (std::size_t k = 0; k < pts.size(); ++k) {
          lines[i] += fmt::format("{},{},{},{},{},{}\n", ids[i], m, model, k + 1, pts[k].theoretical, pts[k].empirical);
        }
      };
      emit("gamma", d, [](double p) { return numerics::std_normal_quantile(p); });
      // Tail models are fitted to this station for the diagnostic only.
      try {
        const auto g = sg != stored_gpngp.end() ? sg->second : tails::gpngp_fit(d, ctx.cfg.q_lo, ctx.cfg.q_hi).params;
        emit("gpngp", d, [&](double p) { return invert_cdf([&](double y) { return tails::gpngp_cdf(y, g); }, p); });
      } catch (const FitError& e) {
        ctx.log << fmt::format("qq: {} gpngp skipped: {}\n", ids[i], e.what());
      }
      try {
        const auto b = sb != stored_bats.end() ? sb->second : tails::bats_fit(d).params;
        emit("bats", d, [&](double p) { return invert_cdf([&](double y) { return tails::bats_cdf(y, b); }, p); });
      } catch (const FitError& e) {
        ctx.log << fmt::format("qq: {} bats skipped: {}\n", ids[i], e.what());
      }
      try {
        const auto split = egpd::split_tails(d);
        const auto w = egpd::egpd_fit(split.wet);
        emit("egpd_wet", split.wet, [&](double p) { return egpd::egpd_quantile(p, w.params); });
        const auto dr = egpd::egpd_fit(split.dry);
        emit("egpd_dry", split.dry, [&](double p) { return egpd::egpd_quantile(p, dr.params); });
      } catch (const std::runtime_error& e) {
        ctx.log << fmt::format("qq: {} egpd skipped: {}\n", ids[i], e.what());
      }
    });
    ctx.write(fmt::format("qq_m{}.csv", m), [&](std::ostream& os) {
      os << "station_id,m,model,i,theoretical,empirical\n";
      for (const auto& l : lines) os << l;
    });
  }
}

void stage_sweep(Context& ctx) {
  const auto stations = load_stations(ctx);
  const auto held_out = validation_set(ctx.cfg, stations);
  for (int m : ctx.cfg.m_list) {
    const auto index = load_spi(ctx, m);
    std::vector<const spi::DroughtIndexSeries*> todo;
    for (const auto& s : stations) {
      if (held_out.count(s.station_id)) continue;
      const auto it = index.find(s.station_id);
      if (it == index.end()) throw DataError(fmt::format("{} has no rows for station {}", spi_name(m), s.station_id));
      todo.push_back(&it->second);
    }
    std::vector<std::string> bodies(todo.size());
    parallel_for(todo.size(), ctx.cfg.threads, [&](std::size_t i) {
      const auto d = spi_values(*todo[i]);
      for (double lo : ctx.cfg.sweep_q_lo) {
        for (double hi : ctx.cfg.sweep_q_hi) {
          try {
            const auto f = tails::gpngp_fit(d, lo, hi);
            const auto r = tails::drought_risk(f.params, ctx.cfg.u_c);
            bodies[i] += fmt::format("{},{},{},{},{},{}\n", lo, hi, f.params.xi_l, f.params.xi_r, r.risk,
                                     f.diagnostics.converged ? 1 : 0);
          } catch (const FitError&) {
            bodies[i] += fmt::format("{},{},{},{},{},0\n", lo, hi, kNA, kNA, kNA);
          }
        }
      }
    });
    for (std::size_t i = 0; i < todo.size(); ++i) {
      ctx.write(fmt::format("sweep_m{}_{}.csv", m, todo[i]->station_id), [&](std::ostream& os) {
        os << "q_lo,q_hi,xi_l,xi_r,risk,converged\n" << bodies[i];
      });
    }
  }
}

// ---------------------------------------------------------------- manifest

void write_manifest(const Context& ctx, const std::string& subcommand, double seconds, const std::string& status) {
  const auto path = ctx.artifact("manifest.json");
  json doc = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      doc = json::parse(in);
    } catch (const json::exception&) {
      doc = json::object();
    }
  }
  doc["tool"] = "droughtrisk";
  doc["versions"] = {{"droughtrisk", kVersion},
                     {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                     {"fmt", FMT_VERSION},
                     {"compiler", __VERSION__}};
  json stage;
  stage["seed"] = ctx.cfg.seed;
  stage["status"] = status;
  stage["elapsed_seconds"] = seconds;
  stage["config"] = ctx.cfg.echo();
  json outs = json::array();
  for (const auto& o : ctx.outputs) {
    outs.push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
    doc["files"][o.path] = {{"sha256", o.sha256}, {"bytes", o.bytes}, {"stage", subcommand}};
  }
  stage["outputs"] = outs;
  doc["stages"][subcommand] = stage;
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << doc.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash " + path);
  EVP_MD_CTX* md = EVP_MD_CTX_new();
  EVP_DigestInit_ex(md, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(md, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(md, digest, &len);
  EVP_MD_CTX_free(md);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void run_stage(const std::string& subcommand, const RunConfig& config, std::ostream& log) {
  static const std::map<std::string, std::function<void(Context&)>> stages{
      {"simulate", stage_simulate},     {"fit-gamma", stage_fit_gamma},
      {"spi", stage_spi},               {"fit-tails", stage_fit_tails},
      {"risk", stage_risk},             {"fit-egpd", stage_fit_egpd},
      {"return-levels", stage_return_levels}, {"qq", stage_qq},
      {"sweep-thresholds", stage_sweep}};
  const auto it = stages.find(subcommand);
  if (it == stages.end()) {
    throw UsageError(fmt::format("unknown subcommand '{}' (one of {})", subcommand, fmt::join(subcommands(), ", ")));
  }
  config.validate();
  Context ctx(config, log);
  if (subcommand != "simulate" && !fs::is_directory(ctx.out)) {
    throw ArtifactError(fmt::format("output directory {} does not exist; run 'droughtrisk simulate' or 'droughtrisk "
                                    "fit-gamma' with --out first",
                                    ctx.out.string()));
  }
  fs::create_directories(ctx.out);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  try {
    it->second(ctx);
  } catch (const FitError&) {
    // Partial outputs were written; record them before reporting.
    write_manifest(ctx, subcommand, elapsed(), "non-convergence");
    throw;
  }
  write_manifest(ctx, subcommand, elapsed(), "ok");
}

int run(const std::string& subcommand, const RunConfig& config, std::ostream& log) {
  try {
    run_stage(subcommand, config, log);
    return 0;
  } catch (const UsageError& e) {
    log << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ArtifactError& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  } catch (const FitError& e) {
    log << "fit error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    log << "data error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace droughtrisk::pipeline
