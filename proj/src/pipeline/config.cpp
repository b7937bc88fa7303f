#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "droughtrisk/pipeline.hpp"

namespace droughtrisk::pipeline {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(v);
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size() || !std::isfinite(x)) throw UsageError(fmt::format("{}: bad number '{}'", key, v));
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw UsageError(fmt::format("{}: bad integer '{}'", key, v));
  return x;
}

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(fmt::format("{}", x));
  return fmt::format("{}", fmt::join(parts, ","));
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

std::map<std::string, Setter> setters() {
  auto dbl = [](double RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = to_double(k, v); });
  };
  auto integer = [](int RunConfig::*f) {
    return Setter(
        [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = static_cast<int>(to_int(k, v)); });
  };
  auto str = [](std::string RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; });
  };
  auto dbl_list = [](std::vector<double> RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) {
      (c.*f).clear();
      for (const auto& s : split_list(v)) (c.*f).push_back(to_double(k, s));
    });
  };
  auto sim_dbl = [](double ScenarioSpec::*f) {
    return Setter(
        [f](RunConfig& c, const std::string& k, const std::string& v) { c.scenario.*f = to_double(k, v); });
  };
  auto sim_int = [](int ScenarioSpec::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) {
      c.scenario.*f = static_cast<int>(to_int(k, v));
    });
  };

  std::map<std::string, Setter> s;
  s["data"] = str(&RunConfig::data_path);
  s["out_dir"] = str(&RunConfig::out_dir);
  s["m_list"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    c.m_list.clear();
    for (const auto& x : split_list(v)) c.m_list.push_back(static_cast<int>(to_int(k, x)));
  };
  s["tps_dim"] = integer(&RunConfig::tps_dim);
  s["ccs_dim"] = integer(&RunConfig::ccs_dim);
  s["ncs_dim"] = integer(&RunConfig::ncs_dim);
  s["scale_formula"] = str(&RunConfig::scale_formula);
  s["shape_formula"] = str(&RunConfig::shape_formula);
  s["q_lo"] = dbl(&RunConfig::q_lo);
  s["q_hi"] = dbl(&RunConfig::q_hi);
  s["u_c"] = dbl(&RunConfig::u_c);
  s["T_list"] = dbl_list(&RunConfig::T_list);
  s["obs_per_year"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    if (v == "auto") {
      c.obs_per_year.reset();
    } else {
      c.obs_per_year = to_double(k, v);
    }
  };
  s["validation_stations"] = [](RunConfig& c, const std::string&, const std::string& v) {
    c.validation_stations = split_list(v);
  };
  s["validation_count"] = integer(&RunConfig::validation_count);
  s["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
    const auto x = to_int(k, v);
    if (x < 0) throw UsageError("seed must be nonnegative");
    c.seed = static_cast<std::uint64_t>(x);
  };
  s["threads"] = integer(&RunConfig::threads);
  s["stations"] = str(&RunConfig::stations_filter_path);
  s["scenario"] = [](RunConfig& c, const std::string&, const std::string& v) { c.scenario.kind = parse_scenario(v); };
  s["sim_n_stations"] = sim_int(&ScenarioSpec::n_stations);
  s["sim_n_years"] = sim_int(&ScenarioSpec::n_years);
  s["sim_start_year"] = sim_int(&ScenarioSpec::start_year);
  s["sim_alpha"] = sim_dbl(&ScenarioSpec::alpha);
  s["sim_psi"] = sim_dbl(&ScenarioSpec::psi);
  s["sim_log_psi_mean"] = sim_dbl(&ScenarioSpec::log_psi_mean);
  s["sim_amplitude"] = sim_dbl(&ScenarioSpec::amplitude);
  s["sim_trend"] = sim_dbl(&ScenarioSpec::trend);
  s["sim_gradient"] = sim_dbl(&ScenarioSpec::gradient);
  s["sim_lon_min"] = sim_dbl(&ScenarioSpec::lon_min);
  s["sim_lon_max"] = sim_dbl(&ScenarioSpec::lon_max);
  s["sim_lat_min"] = sim_dbl(&ScenarioSpec::lat_min);
  s["sim_lat_max"] = sim_dbl(&ScenarioSpec::lat_max);
  s["sweep_q_lo"] = dbl_list(&RunConfig::sweep_q_lo);
  s["sweep_q_hi"] = dbl_list(&RunConfig::sweep_q_hi);
  return s;
}

}  // namespace

void RunConfig::validate() const {
  if (out_dir.empty()) throw UsageError("out_dir must not be empty");
  if (m_list.empty()) throw UsageError("m_list must not be empty");
  for (int m : m_list) {
    if (m < 1 || m > 48) throw UsageError(fmt::format("accumulation period {} outside 1..48", m));
  }
  if (tps_dim < 3) throw UsageError("tps_dim must be >= 3");
  if (ccs_dim < 4) throw UsageError("ccs_dim must be >= 4");
  if (ncs_dim < 3) throw UsageError("ncs_dim must be >= 3");
  if (!(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0)) throw UsageError("need 0 < q_lo < q_hi < 1");
  if (T_list.empty()) throw UsageError("T_list must not be empty");
  for (double T : T_list) {
    if (!(T > 0.0)) throw UsageError("T_list entries must be positive");
  }
  if (obs_per_year && !(*obs_per_year > 0.0)) throw UsageError("obs_per_year must be positive or 'auto'");
  if (validation_count < 0) throw UsageError("validation_count must be >= 0");
  if (threads < 1) throw UsageError("threads must be >= 1");
  for (double q : sweep_q_lo) {
    if (!(q > 0.0 && q < 0.5)) throw UsageError("sweep_q_lo entries must be in (0, 0.5)");
  }
  for (double q : sweep_q_hi) {
    if (!(q > 0.5 && q < 1.0)) throw UsageError("sweep_q_hi entries must be in (0.5, 1)");
  }
  scenario.validate();
  try {
    splines::parse_formula(effective_scale_formula());
    splines::parse_formula(effective_shape_formula());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("formula: ") + e.what());
  }
}

std::string RunConfig::effective_scale_formula() const {
  if (!scale_formula.empty()) return scale_formula;
  return fmt::format("te(tps(lon,lat;{}),cc(month;{};12)) + cr(tmax;{})", tps_dim, ccs_dim, ncs_dim);
}

std::string RunConfig::effective_shape_formula() const {
  if (!shape_formula.empty()) return shape_formula;
  return fmt::format("te(tps(lon,lat;{}),cc(month;{};12))", tps_dim, ccs_dim);
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> e;
  e["data"] = data_path;
  e["out_dir"] = out_dir;
  e["m_list"] = fmt::format("{}", fmt::join(m_list, ","));
  e["tps_dim"] = std::to_string(tps_dim);
  e["ccs_dim"] = std::to_string(ccs_dim);
  e["ncs_dim"] = std::to_string(ncs_dim);
  e["scale_formula"] = effective_scale_formula();
  e["shape_formula"] = effective_shape_formula();
  e["q_lo"] = fmt::format("{}", q_lo);
  e["q_hi"] = fmt::format("{}", q_hi);
  e["u_c"] = fmt::format("{}", u_c);
  e["T_list"] = join_doubles(T_list);
  e["obs_per_year"] = obs_per_year ? fmt::format("{}", *obs_per_year) : "auto";
  e["validation_stations"] = fmt::format("{}", fmt::join(validation_stations, ","));
  e["validation_count"] = std::to_string(validation_count);
  e["seed"] = std::to_string(seed);
  e["threads"] = std::to_string(threads);
  e["stations"] = stations_filter_path;
  e["scenario"] = scenario_name(scenario.kind);
  e["sim_n_stations"] = std::to_string(scenario.n_stations);
  e["sim_n_years"] = std::to_string(scenario.n_years);
  e["sim_start_year"] = std::to_string(scenario.start_year);
  e["sim_alpha"] = fmt::format("{}", scenario.alpha);
  e["sim_psi"] = fmt::format("{}", scenario.psi);
  e["sim_log_psi_mean"] = fmt::format("{}", scenario.log_psi_mean);
  e["sim_amplitude"] = fmt::format("{}", scenario.amplitude);
  e["sim_trend"] = fmt::format("{}", scenario.trend);
  e["sim_gradient"] = fmt::format("{}", scenario.gradient);
  e["sim_lon_min"] = fmt::format("{}", scenario.lon_min);
  e["sim_lon_max"] = fmt::format("{}", scenario.lon_max);
  e["sim_lat_min"] = fmt::format("{}", scenario.lat_min);
  e["sim_lat_max"] = fmt::format("{}", scenario.lat_max);
  e["sweep_q_lo"] = join_doubles(sweep_q_lo);
  e["sweep_q_hi"] = join_doubles(sweep_q_hi);
  return e;
}

RunConfig parse_config(std::istream& is, const std::string& source) {
  static const auto table = setters();
  RunConfig c;
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(fmt::format("{}:{}: expected key=value", source, line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw UsageError(fmt::format("{}:{}: unknown key '{}'", source, line_no, key));
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw UsageError(fmt::format("{}:{}: '{}' already set on line {}", source, line_no, key, prev->second));
    }
    seen[key] = line_no;
    try {
      it->second(c, key, value);
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("{}:{}: {}", source, line_no, e.what()));
    }
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

std::vector<splines::SmoothSpec> cap_thin_plate(std::vector<splines::SmoothSpec> terms, int max_dim) {
  std::function<void(splines::SmoothSpec&)> cap = [&](splines::SmoothSpec& s) {
    if (s.kind == splines::SmoothKind::thin_plate_2d) s.basis_dim = std::min(s.basis_dim, std::max(3, max_dim));
    if (s.kind == splines::SmoothKind::tensor_product) {
      s.basis_dim = 1;
      for (auto& c : s.child_specs) {
        cap(c);
        s.basis_dim *= c.basis_dim;
      }
    }
  };
  for (auto& t : terms) cap(t);
  return terms;
}

}  // namespace droughtrisk::pipeline
