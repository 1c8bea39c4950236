#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fmue/image.hpp"
#include "fmue/model.hpp"
#include "fmue/synthetic.hpp"
#include "fmue/trainer.hpp"

namespace fmue::cli {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every recognised config key with its default.
const std::vector<KeySpec>& known_keys();

// Flat key=value text; '#' starts a comment line. Unknown keys and repeated
// keys are config errors.
std::map<std::string, std::string> parse_config_text(const std::string& text);

class RunConfig {
 public:
  RunConfig();

  // Layers `values` over the current ones; unknown keys throw ConfigError.
  void apply(const std::map<std::string, std::string>& values);

  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  // Empty values fall back to out_dir / fallback.
  std::filesystem::path path_or(const std::string& key, const std::string& fallback) const;

  EncoderConfig encoder() const;
  LoRAConfig lora() const;
  TrainConfig train() const;
  PreprocessConfig preprocess() const;

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fmue::cli
