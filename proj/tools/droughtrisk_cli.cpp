// Command-line front end: one subcommand per pipeline stage.

#include <iostream>

#include <CLI11.hpp>

#include "droughtrisk/pipeline.hpp"

namespace dp = droughtrisk::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Drought index and tail-risk pipeline"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<int> m_list;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string stations;
  std::optional<int> threads;

  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--m", m_list, "accumulation period in months (repeatable)")->check(CLI::Range(1, 48));
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out_dir, "artifact directory");
  app.add_option("--stations", stations, "file listing the station ids to process");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.fallthrough();

  for (const auto& name : dp::subcommands()) app.add_subcommand(name, "run the " + name + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  dp::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = dp::load_config(config_path);
  } catch (const dp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  }
  if (!m_list.empty()) cfg.m_list = m_list;
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (!stations.empty()) cfg.stations_filter_path = stations;
  if (threads) cfg.threads = *threads;

  return dp::run(app.get_subcommands().front()->get_name(), cfg, std::cerr);
}
