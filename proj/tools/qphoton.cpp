// Command-line front end: run an experiment from a config file, run the
// built-in self test, or re-render the summary of a finished run.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qphoton/run.hpp"
#include "qphoton/selftest.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int cmd_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file " << path << '\n';
    return kExitConfig;
  }
  std::stringstream text;
  text << in.rdbuf();
  qphoton::RunConfig config;
  int workers = 1;
  try {
    std::istringstream parse(text.str());
    config = qphoton::parse_config(parse, std::filesystem::path(path).parent_path());
    workers = qphoton::worker_count();
  } catch (const qphoton::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    qphoton::run_experiment(config, text.str(), workers, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  std::cout << "artifacts written to " << config.output_dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Itinerant-photon tomography simulator"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a key=value config file");
  run->add_option("config", config_path, "Config file")->required();

  std::string cache_dir = ".qphoton_cache";
  auto* selftest = app.add_subcommand("selftest", "Run the reduced-scale invariant suites");
  selftest->add_option("--cache-dir", cache_dir, "Vacuum reference cache directory");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Recompute summary.csv from a run directory");
  report->add_option("run-dir", run_dir, "Output directory of a previous run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run) return cmd_run(config_path);
  if (*selftest) {
    try {
      return qphoton::run_selftest(cache_dir, std::cout) == 0 ? 0 : kExitRuntime;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  try {
    qphoton::report_run(run_dir, std::cout);
  } catch (const qphoton::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
