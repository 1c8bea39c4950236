#include "run_config.hpp"

#include <charconv>
#include <sstream>

#include "fmue/errors.hpp"

namespace fmue::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"synth.spec", "", "pattern spec file (built-in 4-class spec when empty)"},
      {"synth.samples_per_class", "", "override images per class"},
      {"synth.patients_per_class", "", "override patients per class"},
      {"synth.ood_samples_per_def", "", "override images per OOD pattern"},
      {"synth.noise_sigma", "", "override Gaussian noise level"},
      {"data.manifest", "", "dataset manifest (default OUT/manifest.csv)"},
      {"data.vocabulary", "", "class list (default classes.txt beside the manifest)"},
      {"data.split", "", "patient split file (default OUT/split.csv)"},
      {"data.ood_manifests", "", "comma-separated OOD manifests (default OUT/ood_manifest.csv)"},
      {"data.mean", "0.5", "normalisation mean"},
      {"data.std", "0.5", "normalisation standard deviation"},
      {"split.ratios", "6,2,2", "train,val,test ratios"},
      {"split.small_strata_to_train", "true", "send classes with < 3 patients to train"},
      {"model.image_size", "64", ""},
      {"model.patch_size", "8", ""},
      {"model.embed_dim", "64", ""},
      {"model.depth", "6", ""},
      {"model.heads", "4", ""},
      {"model.mlp_ratio", "4", ""},
      {"model.pretrained", "", "encoder checkpoint loaded before adaptation"},
      {"model.checkpoint", "", "trained model (default OUT/model.fmue)"},
      {"model.freeze_base", "true", "freeze non-LoRA encoder parameters"},
      {"model.export_encoder", "false", "also write OUT/encoder.fmue after training"},
      {"lora.enabled", "true", ""},
      {"lora.rank", "4", ""},
      {"lora.scaling", "8", ""},
      {"lora.targets", "query,value", "any of query,key,value,out,fc1,fc2"},
      {"lora.all_blocks", "true", "adapt every block (false: last block only)"},
      {"lora.init_std", "0.02", ""},
      {"train.epochs", "30", ""},
      {"train.batch_size", "16", ""},
      {"train.learning_rate", "0.001", ""},
      {"train.weight_decay", "0.0001", ""},
      {"train.anneal_horizon", "10", "epochs until the KL weight reaches 1"},
      {"train.selection_metric", "macro_f1", "macro_f1 or accuracy"},
      {"train.horizontal_flip", "false", ""},
      {"calibrate.normal_class", "normal", "class counted as non-disease"},
      {"calibrate.rule", "initial", "initial or previous"},
      {"calibrate.split", "val", ""},
      {"evaluate.split", "test", ""},
      {"evaluate.calibration", "", "calibration report (default OUT/calibration.json)"},
      {"evaluate.no_threshold", "false", "skip thresholded metrics"},
      {"evaluate.coverage_min", "0.1", "smallest retained fraction on the coverage curve"},
      {"ood.bins", "50", "histogram bins over [0, 1]"},
      {"explain.split", "test", ""},
      {"explain.label", "", "only explain images with this label"},
      {"explain.class", "predicted", "predicted, label, or a class name"},
      {"explain.block", "-1", "source block (-1 = last)"},
      {"explain.limit", "8", "maximum number of heatmaps"},
  };
  return keys;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

RunConfig::RunConfig() {
  for (const auto& k : known_keys()) values_[k.name] = k.default_value;
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) {
    const auto it = values_.find(k);
    if (it == values_.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second = v;
  }
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("unregistered config key " + key);
  return it->second;
}

long RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(str(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path RunConfig::path_or(const std::string& key, const std::string& fallback) const {
  const std::string& s = str(key);
  return s.empty() ? out_dir / fallback : std::filesystem::path(s);
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c;
  c.image_size = static_cast<int>(integer("model.image_size"));
  c.patch_size = static_cast<int>(integer("model.patch_size"));
  c.embed_dim = static_cast<int>(integer("model.embed_dim"));
  c.depth = static_cast<int>(integer("model.depth"));
  c.heads = static_cast<int>(integer("model.heads"));
  c.mlp_ratio = real("model.mlp_ratio");
  c.validate();
  return c;
}

LoRAConfig RunConfig::lora() const {
  LoRAConfig c;
  c.rank = static_cast<int>(integer("lora.rank"));
  c.scaling = real("lora.scaling");
  c.targets = list("lora.targets");
  c.adapt_all_blocks = flag("lora.all_blocks");
  c.init_std = real("lora.init_std");
  c.seed = seed;
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.epochs = static_cast<int>(integer("train.epochs"));
  c.batch_size = static_cast<int>(integer("train.batch_size"));
  c.learning_rate = real("train.learning_rate");
  c.weight_decay = real("train.weight_decay");
  c.anneal_horizon = static_cast<int>(integer("train.anneal_horizon"));
  c.seed = seed;
  const std::string& metric = str("train.selection_metric");
  if (metric == "macro_f1") {
    c.selection_metric = SelectionMetric::MacroF1;
  } else if (metric == "accuracy") {
    c.selection_metric = SelectionMetric::Accuracy;
  } else {
    throw ConfigError("train.selection_metric must be macro_f1 or accuracy");
  }
  c.horizontal_flip = flag("train.horizontal_flip");
  c.validate();
  return c;
}

PreprocessConfig RunConfig::preprocess() const {
  PreprocessConfig c;
  c.image_size = static_cast<int>(integer("model.image_size"));
  const double mean = real("data.mean");
  const double sd = real("data.std");
  if (!(sd > 0.0)) throw ConfigError("data.std must be > 0");
  c.mean = {mean, mean, mean};
  c.stddev = {sd, sd, sd};
  return c;
}

}  // namespace fmue::cli
