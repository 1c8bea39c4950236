#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "fmue/calibration.hpp"
#include "fmue/checkpoint.hpp"
#include "fmue/errors.hpp"
#include "fmue/evaluation.hpp"
#include "fmue/explain.hpp"
#include "fmue/plot.hpp"
#include "fmue/reports.hpp"
#include "fmue/synthetic.hpp"
#include "fmue/trainer.hpp"

namespace fmue::cli {

namespace fs = std::filesystem;

namespace {

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingArtifact(what + " not found: " + p.string());
}

std::string num(double v) { return ojson(v).dump(); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<fs::path> vocabulary_path(const RunConfig& cfg) {
  if (cfg.str("data.vocabulary").empty()) return std::nullopt;
  return fs::path(cfg.str("data.vocabulary"));
}

DatasetManifest load_main_manifest(const RunConfig& cfg) {
  const fs::path path = cfg.path_or("data.manifest", "manifest.csv");
  require(path, "manifest");
  if (auto v = vocabulary_path(cfg)) require(*v, "vocabulary");
  return load_manifest(path, vocabulary_path(cfg));
}

SplitAssignment load_split(const RunConfig& cfg) {
  const fs::path path = cfg.path_or("data.split", "split.csv");
  require(path, "split file (run `fmue split` first)");
  return parse_split_file(path);
}

fs::path model_path(const RunConfig& cfg) { return cfg.path_or("model.checkpoint", "model.fmue"); }

ModelBundle load_trained_model(const RunConfig& cfg) {
  const fs::path path = model_path(cfg);
  require(path, "model checkpoint (run `fmue train` first)");
  return load_checkpoint(path);
}

CalibrationReport load_calibration(const RunConfig& cfg) {
  const fs::path path = cfg.path_or("evaluate.calibration", "calibration.json");
  require(path, "calibration report (run `fmue calibrate` first or pass --no-threshold)");
  return calibration_from_json(read_json(path));
}

struct Scored {
  std::vector<Prediction> predictions;
  std::vector<double> uncertainty;
};

Scored score(const ModelBundle& model, const LabeledImages& set) {
  Scored s;
  s.predictions = predict_dataset(model, set.images);
  for (const auto& p : s.predictions) s.uncertainty.push_back(p.opinion.uncertainty);
  return s;
}

void check_classes(const ModelBundle& model, const DatasetManifest& manifest) {
  if (static_cast<int>(manifest.class_vocabulary.size()) != model.class_count) {
    throw ConfigError("vocabulary has " + std::to_string(manifest.class_vocabulary.size()) +
                      " classes but the model predicts " + std::to_string(model.class_count));
  }
}

std::string predictions_csv(const LabeledImages& set, const Scored& s, const std::vector<std::string>& classes) {
  std::ostringstream out;
  out << "image_path,label,predicted,uncertainty";
  for (const auto& c : classes) out << ",belief_" << c;
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& p = s.predictions[i];
    out << set.paths[i] << ',' << (set.labels[i] >= 0 ? classes[static_cast<std::size_t>(set.labels[i])] : "ood") << ','
        << classes[static_cast<std::size_t>(p.predicted_class)] << ',' << num(p.opinion.uncertainty);
    for (double b : p.opinion.belief) out << ',' << num(b);
    out << '\n';
  }
  return out.str();
}

EvaluationReport metrics_for(const LabeledImages& set, const Scored& s, int class_count,
                             const std::vector<bool>& keep) {
  std::vector<int> preds, labels;
  std::vector<std::vector<double>> beliefs;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!keep[i]) continue;
    preds.push_back(s.predictions[i].predicted_class);
    labels.push_back(set.labels[i]);
    beliefs.push_back(s.predictions[i].opinion.belief);
  }
  return compute_metrics(preds, labels, beliefs, class_count);
}

std::string stem_of(const fs::path& p) { return p.stem().string(); }

}  // namespace

void cmd_synth(const RunConfig& cfg) {
  SyntheticSpec spec = SyntheticSpec::default_spec();
  if (!cfg.str("synth.spec").empty()) {
    require(cfg.str("synth.spec"), "synthetic spec");
    spec = parse_synthetic_spec(read_file(cfg.str("synth.spec")));
  }
  if (!cfg.str("synth.samples_per_class").empty()) spec.samples_per_class = static_cast<int>(cfg.integer("synth.samples_per_class"));
  if (!cfg.str("synth.patients_per_class").empty()) spec.patients_per_class = static_cast<int>(cfg.integer("synth.patients_per_class"));
  if (!cfg.str("synth.ood_samples_per_def").empty()) spec.ood_samples_per_def = static_cast<int>(cfg.integer("synth.ood_samples_per_def"));
  if (!cfg.str("synth.noise_sigma").empty()) spec.noise_sigma = cfg.real("synth.noise_sigma");
  generate_synthetic(spec, cfg.seed, cfg.out_dir);
}

void cmd_split(const RunConfig& cfg) {
  const DatasetManifest manifest = load_main_manifest(cfg);
  SplitOptions opt;
  const auto ratios = cfg.list("split.ratios");
  if (ratios.size() != 3) throw ConfigError("split.ratios needs three comma-separated values");
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      opt.ratios[i] = std::stod(ratios[i]);
    } catch (const std::exception&) {
      throw ConfigError("split.ratios: bad number '" + ratios[i] + "'");
    }
    if (!(opt.ratios[i] > 0.0)) throw ConfigError("split.ratios must be positive");
  }
  opt.seed = cfg.seed;
  opt.small_strata_to_train = cfg.flag("split.small_strata_to_train");
  const SplitAssignment s = patient_split(manifest, opt);
  write_text(cfg.out_dir / "split.csv", format_split(s));
  write_json(cfg.out_dir / "split_report.json", report_json(s, manifest));
}

void cmd_train(const RunConfig& cfg) {
  const DatasetManifest manifest = load_main_manifest(cfg);
  const SplitAssignment split = load_split(cfg);
  const EncoderConfig enc = cfg.encoder();
  const TrainConfig tc_base = cfg.train();
  const PreprocessConfig pre = cfg.preprocess();

  ModelBundle model = build_model(enc, static_cast<int>(manifest.class_vocabulary.size()), cfg.seed);
  ojson summary;
  if (!cfg.str("model.pretrained").empty()) {
    require(cfg.str("model.pretrained"), "pretrained encoder");
    summary["pretrained"] = report_json(load_pretrained_encoder(model, cfg.str("model.pretrained")));
  }
  if (cfg.flag("lora.enabled")) inject_lora(model, cfg.lora());
  if (cfg.flag("model.freeze_base")) freeze_base(model);

  const LabeledImages train_set = load_images(subset(manifest, split, Split::Train), pre);
  const LabeledImages val_set = load_images(subset(manifest, split, Split::Val), pre);
  TrainConfig tc = tc_base;
  tc.checkpoint_path = model_path(cfg);
  TrainReport report = train(model, train_set, val_set, tc);
  // Keep reports free of machine-specific paths.
  report.best_checkpoint_path = tc.checkpoint_path.filename().string();
  save_checkpoint(model, tc.checkpoint_path);
  if (cfg.flag("model.export_encoder")) save_encoder(model, cfg.out_dir / "encoder.fmue");

  ojson j = report_json(report);
  if (summary.contains("pretrained")) j["pretrained"] = summary["pretrained"];
  j["train_images"] = train_set.size();
  j["val_images"] = val_set.size();
  write_json(cfg.out_dir / "train_report.json", j);
}

void cmd_calibrate(const RunConfig& cfg) {
  const DatasetManifest manifest = load_main_manifest(cfg);
  const SplitAssignment split = load_split(cfg);
  const ModelBundle model = load_trained_model(cfg);
  check_classes(model, manifest);

  const auto& vocab = manifest.class_vocabulary;
  const std::string& normal = cfg.str("calibrate.normal_class");
  const auto it = std::find(vocab.begin(), vocab.end(), normal);
  if (it == vocab.end()) throw ConfigError("calibrate.normal_class '" + normal + "' is not in the vocabulary");
  const int normal_index = static_cast<int>(it - vocab.begin());

  CalibrationOptions opt;
  const std::string& rule = cfg.str("calibrate.rule");
  if (rule == "initial") {
    opt.rule = StopRule::InitialLevel;
  } else if (rule == "previous") {
    opt.rule = StopRule::PreviousStep;
  } else {
    throw ConfigError("calibrate.rule must be initial or previous");
  }

  const LabeledImages set = load_images(subset(manifest, split, parse_split(cfg.str("calibrate.split"))), cfg.preprocess());
  const Scored s = score(model, set);
  CalibrationInput in;
  in.uncertainty = s.uncertainty;
  for (std::size_t i = 0; i < set.size(); ++i) {
    in.correct.push_back(s.predictions[i].predicted_class == set.labels[i]);
    in.abnormal.push_back(set.labels[i] != normal_index);
  }
  ojson j = report_json(calibrate_threshold(in, opt));
  j["normal_class"] = normal;
  j["rule"] = rule;
  j["samples"] = set.size();
  write_json(cfg.out_dir / "calibration.json", j);
  write_text(cfg.out_dir / ("predictions_" + cfg.str("calibrate.split") + ".csv"), predictions_csv(set, s, vocab));
}

void cmd_evaluate(const RunConfig& cfg) {
  const bool thresholded = !cfg.flag("evaluate.no_threshold");
  std::optional<CalibrationReport> cal;
  if (thresholded) cal = load_calibration(cfg);
  const DatasetManifest manifest = load_main_manifest(cfg);
  const SplitAssignment split = load_split(cfg);
  const ModelBundle model = load_trained_model(cfg);
  check_classes(model, manifest);
  const auto& vocab = manifest.class_vocabulary;

  const std::string split_name_str = cfg.str("evaluate.split");
  const LabeledImages set = load_images(subset(manifest, split, parse_split(split_name_str)), cfg.preprocess());
  if (set.size() == 0) throw DomainError("evaluation split '" + split_name_str + "' is empty");
  const Scored s = score(model, set);
  std::vector<bool> correct;
  for (std::size_t i = 0; i < set.size(); ++i) correct.push_back(s.predictions[i].predicted_class == set.labels[i]);

  ojson j;
  j["split"] = split_name_str;
  const EvaluationReport raw = metrics_for(set, s, model.class_count, std::vector<bool>(set.size(), true));
  j["raw"] = report_json(raw, vocab);
  const OODReport id_hist = ood_detection_rate(s.uncertainty, cal ? cal->theta : 1.0, static_cast<int>(cfg.integer("ood.bins")));
  j["mean_uncertainty"] = id_hist.mean_uncertainty;

  if (cal) {
    std::vector<bool> keep, high, wrong;
    for (std::size_t i = 0; i < set.size(); ++i) {
      high.push_back(s.uncertainty[i] >= cal->theta);
      keep.push_back(!high.back());
      wrong.push_back(!correct[i]);
    }
    ThresholdedEvaluation t;
    t.theta = cal->theta;
    t.excluded = static_cast<std::size_t>(std::count(high.begin(), high.end(), true));
    t.excluded_fraction = static_cast<double>(t.excluded) / static_cast<double>(set.size());
    if (t.excluded < set.size()) {
      t.report = metrics_for(set, s, model.class_count, keep);
      j["thresholded"] = report_json(t, vocab);
      write_text(cfg.out_dir / "confusion_thresholded.csv", confusion_csv(t.report, vocab));
    } else {
      j["thresholded"] = nullptr;
    }
    j["association"] = report_json(misclassification_association(high, wrong));
  }
  const CoverageCurve curve = coverage_curve(s.uncertainty, correct, cfg.real("evaluate.coverage_min"));
  j["coverage"] = report_json(curve);
  write_json(cfg.out_dir / "evaluation.json", j);
  write_text(cfg.out_dir / "confusion.csv", confusion_csv(raw, vocab));
  write_text(cfg.out_dir / "coverage.csv", coverage_csv(curve));
  write_text(cfg.out_dir / "uncertainty_histogram.csv", histogram_csv(id_hist));
  write_text(cfg.out_dir / ("predictions_" + split_name_str + ".csv"), predictions_csv(set, s, vocab));
}

void cmd_ood(const RunConfig& cfg) {
  const CalibrationReport cal = load_calibration(cfg);
  const ModelBundle model = load_trained_model(cfg);
  const int bins = static_cast<int>(cfg.integer("ood.bins"));
  std::vector<fs::path> manifests;
  for (const auto& p : cfg.list("data.ood_manifests")) manifests.emplace_back(p);
  if (manifests.empty()) manifests.push_back(cfg.out_dir / "ood_manifest.csv");

  for (const auto& path : manifests) {
    require(path, "OOD manifest");
    const DatasetManifest manifest = load_manifest(path, vocabulary_path(cfg));
    const LabeledImages set = load_images(manifest, cfg.preprocess());
    if (set.size() == 0) throw DomainError("OOD manifest " + path.string() + " has no records");
    const Scored s = score(model, set);

    ojson j = report_json(ood_detection_rate(s.uncertainty, cal.theta, bins));
    // Per-label breakdown, in order of first appearance.
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> groups;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::string& label = manifest.records[i].label;
      if (!groups.count(label)) order.push_back(label);
      groups[label].push_back(s.uncertainty[i]);
    }
    ojson g = ojson::array();
    for (const auto& label : order) {
      const OODReport r = ood_detection_rate(groups[label], cal.theta, bins);
      g.push_back({{"label", label},
                   {"count", r.count},
                   {"detected", r.detected},
                   {"detection_rate", r.detection_rate},
                   {"mean_uncertainty", r.mean_uncertainty}});
    }
    j["groups"] = std::move(g);
    const std::string stem = stem_of(path);
    write_json(cfg.out_dir / ("ood_" + stem + ".json"), j);
    write_text(cfg.out_dir / ("ood_" + stem + "_histogram.csv"),
               histogram_csv(ood_detection_rate(s.uncertainty, cal.theta, bins)));
    write_text(cfg.out_dir / ("predictions_ood_" + stem + ".csv"),
               predictions_csv(set, s, manifest.class_vocabulary));
  }
}

void cmd_explain(const RunConfig& cfg) {
  const DatasetManifest manifest = load_main_manifest(cfg);
  const SplitAssignment split = load_split(cfg);
  const ModelBundle model = load_trained_model(cfg);
  check_classes(model, manifest);
  const auto& vocab = manifest.class_vocabulary;

  DatasetManifest chosen = subset(manifest, split, parse_split(cfg.str("explain.split")));
  const std::string& only = cfg.str("explain.label");
  if (!only.empty()) {
    if (std::find(vocab.begin(), vocab.end(), only) == vocab.end()) {
      throw ConfigError("explain.label '" + only + "' is not in the vocabulary");
    }
    std::erase_if(chosen.records, [&](const SampleRecord& r) { return r.label != only; });
  }
  const long limit = cfg.integer("explain.limit");
  if (limit < 1) throw ConfigError("explain.limit must be >= 1");
  if (static_cast<long>(chosen.records.size()) > limit) chosen.records.resize(static_cast<std::size_t>(limit));

  const std::string& target = cfg.str("explain.class");
  std::optional<int> fixed_target;
  if (target != "predicted" && target != "label") {
    const auto it = std::find(vocab.begin(), vocab.end(), target);
    if (it == vocab.end()) throw ConfigError("explain.class '" + target + "' is not predicted/label or a class name");
    fixed_target = static_cast<int>(it - vocab.begin());
  }
  const int block = static_cast<int>(cfg.integer("explain.block"));

  const fs::path dir = cfg.out_dir / "heatmaps";
  fs::create_directories(dir);
  const LabeledImages set = load_images(chosen, cfg.preprocess());
  std::ostringstream index;
  index << "image_path,heatmap,label,predicted,target_class\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const RowVector logits = forward(model, set.images[i]);
    const std::vector<double> l(logits.data(), logits.data() + logits.size());
    const auto predicted = static_cast<int>(opinion_from_evidence(evidence_from_logits(l)).predicted_class());
    const int cls = fixed_target ? *fixed_target : (target == "label" ? set.labels[i] : predicted);
    const Heatmap h = grad_cam(model, set.images[i], cls, block);
    const std::string name = fs::path(set.paths[i]).stem().string();
    write_heatmap(h, dir / name);
    index << set.paths[i] << ",heatmaps/" << name << ".pgm," << vocab[static_cast<std::size_t>(set.labels[i])] << ','
          << vocab[static_cast<std::size_t>(predicted)] << ',' << vocab[static_cast<std::size_t>(cls)] << '\n';
  }
  write_text(dir / "index.csv", index.str());
}

void cmd_plot(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir / "plots";
  fs::create_directories(dir);
  bool drew = false;

  // Uncertainty densities: in-distribution in blue, each OOD set in a warm colour.
  const fs::path id_json = cfg.out_dir / "evaluation.json";
  std::vector<Series> hist;
  auto histogram_series = [](const fs::path& csv, const Color& color) {
    Series s;
    s.color = color;
    std::istringstream in(read_file(csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      s.x.push_back(std::stod(line.substr(0, comma)));
      s.y.push_back(std::stod(line.substr(comma + 1)));
    }
    if (!s.x.empty()) s.x.push_back(s.x.back() + (s.x.size() > 1 ? s.x[1] - s.x[0] : 1.0));
    return s;
  };
  if (fs::exists(cfg.out_dir / "uncertainty_histogram.csv")) {
    hist.push_back(histogram_series(cfg.out_dir / "uncertainty_histogram.csv", {0.1, 0.3, 0.9}));
  }
  const std::vector<Color> warm = {{0.9, 0.2, 0.1}, {0.95, 0.6, 0.0}, {0.6, 0.1, 0.6}, {0.2, 0.6, 0.2}};
  std::vector<fs::path> ood_files;
  for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
    const std::string n = e.path().filename().string();
    if (n.starts_with("ood_") && n.ends_with("_histogram.csv")) ood_files.push_back(e.path());
  }
  std::sort(ood_files.begin(), ood_files.end());
  for (std::size_t i = 0; i < ood_files.size(); ++i) hist.push_back(histogram_series(ood_files[i], warm[i % warm.size()]));
  if (!hist.empty()) {
    write_pnm(dir / "uncertainty_density.ppm", render_histograms(PlotFrame{}, hist));
    drew = true;
  }

  if (fs::exists(id_json)) {
    const auto j = read_json(id_json);
    Series s;
    s.color = {0.1, 0.3, 0.9};
    for (const auto& p : j.at("coverage").at("points")) {
      s.x.push_back(p.at("retained_fraction").get<double>());
      s.y.push_back(p.at("accuracy").get<double>());
    }
    std::reverse(s.x.begin(), s.x.end());
    std::reverse(s.y.begin(), s.y.end());
    double lo = 1.0;
    for (double v : s.y) lo = std::min(lo, v);
    PlotFrame f;
    f.y_min = std::max(0.0, std::floor(lo * 10.0) / 10.0 - 0.1);
    f.y_max = 1.0;
    write_pnm(dir / "coverage_curve.ppm", render_lines(f, {s}));
    drew = true;
  }

  const fs::path index = cfg.out_dir / "heatmaps" / "index.csv";
  if (fs::exists(index)) {
    const DatasetManifest manifest = load_main_manifest(cfg);
    std::istringstream in(read_file(index));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const std::string image_path = line.substr(0, c1);
      const std::string heat_path = line.substr(c1 + 1, c2 - c1 - 1);
      const ImageArray source = read_pnm(manifest.base_dir / image_path);
      const ImageArray heat = read_pnm(cfg.out_dir / heat_path);
      const ImageArray gray = resize_bilinear(source, heat.height, heat.width);
      write_pnm(dir / ("overlay_" + fs::path(heat_path).stem().string() + ".ppm"), render_overlay(gray, heat));
    }
    drew = true;
  }
  if (!drew) throw MissingArtifact("nothing to plot in " + cfg.out_dir.string() + " (run evaluate, ood or explain first)");
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return 2;
  } catch (const ParseError&) {
    return 2;
  } catch (const MissingArtifact&) {
    return 3;
  } catch (const IoError&) {
    return 3;
  } catch (const std::exception&) {
    return 4;
  }
}

}  // namespace fmue::cli
