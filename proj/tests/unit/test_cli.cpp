#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmue/errors.hpp"
#include "fmue/reports.hpp"
#include "run_config.hpp"

using namespace fmue;
namespace fs = std::filesystem;

namespace {

int run_tool(const std::string& args) {
  const std::string cmd = std::string(FMUE_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config text") {
  auto kv = cli::parse_config_text("# comment\nlora.rank = 8\n\ntrain.epochs=3\n");
  CHECK(kv.at("lora.rank") == "8");
  CHECK(kv.at("train.epochs") == "3");
  CHECK_THROWS_AS(cli::parse_config_text("lora.rank=2\nlora.rank=3\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config_text("no equals sign\n"), ConfigError);

  cli::RunConfig cfg;
  CHECK_THROWS_AS(cfg.apply({{"lora.colour", "red"}}), ConfigError);
  cfg.apply(kv);
  CHECK(cfg.lora().rank == 8);
  CHECK(cfg.train().epochs == 3);
  CHECK(cfg.integer("train.batch_size") == 16);
  cfg.apply({{"train.epochs", "three"}});
  CHECK_THROWS_AS(cfg.train(), ConfigError);
}

TEST_CASE("command exit codes and artifacts") {
  const fs::path dir = fs::temp_directory_path() / "fmue_unit_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string out = " --out " + dir.string();
  const std::string small = " --synth.samples_per_class 8 --synth.patients_per_class 4 --synth.ood_samples_per_def 4";
  const std::string model =
      " --model.image_size 16 --model.patch_size 4 --model.embed_dim 8 --model.depth 1 --model.heads 2 --train.epochs 1";

  std::ofstream(dir / "bad_spec.txt") << "samples_per_class=0\n";
  CHECK(run_tool("synth --synth.spec " + (dir / "bad_spec.txt").string() + out) == 2);
  CHECK(run_tool("synth --lora.rank" + out) == 2);
  CHECK(run_tool("train --config " + (dir / "absent.cfg").string() + out) == 2);
  CHECK(run_tool("split" + out) == 3);

  REQUIRE(run_tool("synth --seed 4" + small + out) == 0);
  const std::string first = slurp(dir / "manifest.csv");
  REQUIRE(run_tool("synth --seed 4" + small + out) == 0);
  CHECK(slurp(dir / "manifest.csv") == first);

  REQUIRE(run_tool("split --seed 4" + out) == 0);
  REQUIRE(run_tool("train --seed 4" + model + out) == 0);
  CHECK(run_tool("evaluate" + model + out) == 3);
  CHECK(run_tool("evaluate --no-threshold" + model + out) == 0);
  REQUIRE(run_tool("calibrate" + model + out) == 0);
  CHECK(run_tool("evaluate" + model + out) == 0);
  auto ev = read_json(dir / "evaluation.json");
  CHECK(ev.contains("raw"));
  CHECK(ev.contains("thresholded"));
  CHECK(ev.contains("coverage"));

  REQUIRE(run_tool("ood" + model + out) == 0);
  bool found = false;
  for (auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("ood_") && name.ends_with(".json")) {
      auto j = read_json(e.path());
      const double rate = j["detection_rate"];
      CHECK(rate >= 0.0);
      CHECK(rate <= 1.0);
      found = true;
    }
  }
  CHECK(found);

  CHECK(run_tool("explain --explain.limit 2" + model + out) == 0);
  CHECK(run_tool("plot" + model + out) == 0);
  CHECK(fs::exists(dir / "plots" / "uncertainty_density.ppm"));
  CHECK(fs::exists(dir / "run.log"));
}
