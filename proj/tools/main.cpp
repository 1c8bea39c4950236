#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "commands.hpp"
#include "fmue/errors.hpp"

namespace {

using namespace fmue::cli;

struct Subcommand {
  const char* name;
  const char* help;
  void (*run)(const RunConfig&);
};

constexpr Subcommand kCommands[] = {
    {"synth", "generate the synthetic dataset", cmd_synth},
    {"split", "patient-level train/val/test split", cmd_split},
    {"train", "fine-tune with the evidential loss", cmd_train},
    {"calibrate", "search the uncertainty threshold on validation data", cmd_calibrate},
    {"evaluate", "raw and thresholded metrics, coverage curve, odds ratio", cmd_evaluate},
    {"ood", "uncertainty and detection rate on OOD manifests", cmd_ood},
    {"explain", "Grad-CAM heatmaps", cmd_explain},
    {"plot", "render density, coverage and overlay images", cmd_plot},
};

void log_run(const std::filesystem::path& out, const std::string& command, int code) {
  std::ofstream log(out / "run.log", std::ios::app);
  if (!log) return;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  log << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << command << " exit=" << code << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidential uncertainty pipeline for layered-scan classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool no_threshold = false;
  std::map<std::string, std::string> overrides;

  for (const auto& cmd : kCommands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--seed", seed, "seed for data generation, splitting, initialisation and shuffling");
    sub->add_option("--out", out_dir, "output directory");
    if (std::string(cmd.name) == "evaluate") sub->add_flag("--no-threshold", no_threshold, "report raw metrics only");
    for (const auto& key : known_keys()) {
      sub->add_option_function<std::string>(
          "--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; }, key.help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const Subcommand* chosen = nullptr;
  for (const auto& cmd : kCommands) {
    if (app.got_subcommand(cmd.name)) chosen = &cmd;
  }

  int code = 0;
  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw fmue::ConfigError("cannot read config file " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg.apply(parse_config_text(ss.str()));
    }
    cfg.apply(overrides);
    if (no_threshold) cfg.apply({{"evaluate.no_threshold", "true"}});
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    std::filesystem::create_directories(cfg.out_dir);
    chosen->run(cfg);
  } catch (...) {
    code = exit_code_for_current_exception();
    try {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "fmue " << chosen->name << ": " << e.what() << '\n';
    }
  }
  if (std::filesystem::is_directory(out_dir)) log_run(out_dir, chosen->name, code);
  return code;
}
