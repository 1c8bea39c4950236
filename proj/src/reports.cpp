#include "fmue/reports.hpp"

#include <fstream>
#include <sstream>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::string format_double(double v) {
  // Same shortest round-trip form as the JSON writer.
  return ojson(v).dump();
}

}  // namespace

ojson report_json(const TrainReport& r) {
  ojson j;
  j["best_epoch"] = r.best_epoch;
  j["best_metric"] = r.best_metric;
  j["best_checkpoint_path"] = r.best_checkpoint_path;
  j["trainable_parameters"] = r.trainable_parameters;
  j["total_parameters"] = r.total_parameters;
  std::ostringstream digest;
  digest << std::hex << r.frozen_digest;
  j["frozen_digest"] = digest.str();
  ojson epochs = ojson::array();
  for (const auto& e : r.epochs) {
    ojson ej;
    ej["epoch"] = e.epoch;
    ej["learning_rate"] = e.learning_rate;
    ej["loss"] = {{"expected_ce", e.mean_loss.expected_ce},
                  {"kl_term", e.mean_loss.kl_term},
                  {"lambda", e.mean_loss.lambda},
                  {"total", e.mean_loss.total}};
    ej["val_accuracy"] = e.val_accuracy;
    ej["val_macro_f1"] = e.val_macro_f1;
    epochs.push_back(std::move(ej));
  }
  j["epochs"] = std::move(epochs);
  return j;
}

ojson report_json(const CalibrationReport& r) {
  ojson j;
  j["theta"] = r.theta;
  j["excluded_count"] = r.excluded_count;
  j["stop_reason"] = stop_reason_name(r.stop_reason);
  j["initial_accuracy"] = r.initial_accuracy;
  j["initial_incidence"] = r.initial_incidence;
  j["accuracy_trace"] = r.accuracy_trace;
  j["incidence_trace"] = r.incidence_trace;
  j["excluded_indices"] = r.excluded_indices;
  return j;
}

CalibrationReport calibration_from_json(const nlohmann::json& j) {
  CalibrationReport r;
  try {
    r.theta = j.at("theta").get<double>();
    r.excluded_count = j.at("excluded_count").get<std::size_t>();
    const auto reason = j.at("stop_reason").get<std::string>();
    if (reason == "accuracy_drop") {
      r.stop_reason = StopReason::AccuracyDrop;
    } else if (reason == "incidence_drop") {
      r.stop_reason = StopReason::IncidenceDrop;
    } else if (reason == "exhausted") {
      r.stop_reason = StopReason::Exhausted;
    } else {
      throw ConfigError("unknown stop_reason '" + reason + "'");
    }
    r.initial_accuracy = j.at("initial_accuracy").get<double>();
    r.initial_incidence = j.at("initial_incidence").get<double>();
    r.accuracy_trace = j.at("accuracy_trace").get<std::vector<double>>();
    r.incidence_trace = j.at("incidence_trace").get<std::vector<double>>();
    r.excluded_indices = j.value("excluded_indices", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed calibration report: ") + e.what());
  }
  if (!(r.theta > 0.0 && r.theta <= 1.0)) throw ConfigError("calibration theta outside (0, 1]");
  return r;
}

ojson report_json(const EvaluationReport& r, const std::vector<std::string>& class_names) {
  ojson j;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_sensitivity"] = r.macro_sensitivity;
  j["macro_f1"] = r.macro_f1;
  j["macro_auc"] = optional_number(r.macro_auc);
  ojson per_class = ojson::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const ClassMetrics& m = r.per_class[k];
    ojson c;
    c["class"] = k < class_names.size() ? class_names[k] : std::to_string(k);
    c["support"] = m.support;
    c["precision"] = m.precision;
    c["sensitivity"] = m.sensitivity;
    c["f1"] = m.f1;
    c["auc"] = optional_number(m.auc);
    c["precision_undefined"] = m.precision_undefined;
    c["sensitivity_undefined"] = m.sensitivity_undefined;
    per_class.push_back(std::move(c));
  }
  j["per_class"] = std::move(per_class);
  j["confusion"] = r.confusion;
  return j;
}

ojson report_json(const ThresholdedEvaluation& t, const std::vector<std::string>& class_names) {
  ojson j = report_json(t.report, class_names);
  j["theta"] = t.theta;
  j["excluded"] = t.excluded;
  j["excluded_fraction"] = t.excluded_fraction;
  return j;
}

ojson report_json(const CoverageCurve& c) {
  ojson j;
  j["auc"] = c.auc;
  j["min_fraction"] = c.min_fraction;
  ojson pts = ojson::array();
  for (const auto& p : c.points) pts.push_back({{"retained_fraction", p.retained_fraction}, {"accuracy", p.accuracy}});
  j["points"] = std::move(pts);
  return j;
}

ojson report_json(const OODReport& r) {
  ojson j;
  j["theta"] = r.theta;
  j["count"] = r.count;
  j["detected"] = r.detected;
  j["detection_rate"] = r.detection_rate;
  j["mean_uncertainty"] = r.mean_uncertainty;
  j["bin_edges"] = r.bin_edges;
  j["densities"] = r.densities;
  return j;
}

ojson report_json(const AssociationReport& r) {
  ojson j;
  j["table"] = {{"high_wrong", r.a}, {"high_right", r.b}, {"low_wrong", r.c}, {"low_right", r.d}};
  j["corrected"] = r.corrected;
  j["degenerate"] = r.degenerate;
  j["warning"] = r.warning;
  j["odds_ratio"] = r.odds_ratio;
  j["log_odds_ratio"] = r.log_odds_ratio;
  j["standard_error"] = r.standard_error;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["z"] = r.z;
  j["p_value"] = r.p_value;
  return j;
}

ojson report_json(const LoadReport& r) {
  ojson j;
  j["loaded"] = r.loaded;
  j["skipped"] = r.skipped;
  j["retained"] = r.retained;
  return j;
}

ojson report_json(const SplitAssignment& s, const DatasetManifest& manifest) {
  ojson j;
  ojson counts;
  const auto image_counts = s.image_counts(manifest);
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    counts[split_name(sp)] = image_counts.at(static_cast<std::size_t>(sp));
  }
  j["image_counts"] = std::move(counts);
  j["patients"] = s.patients.size();
  j["warnings"] = s.warnings;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const std::filesystem::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string confusion_csv(const EvaluationReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& name : class_names) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out << (t < class_names.size() ? class_names[t] : std::to_string(t));
    for (std::size_t c : r.confusion[t]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

std::string histogram_csv(const OODReport& r) {
  std::ostringstream out;
  out << "bin_left,density\n";
  for (std::size_t i = 0; i < r.densities.size(); ++i) {
    out << format_double(r.bin_edges[i]) << ',' << format_double(r.densities[i]) << '\n';
  }
  return out.str();
}

std::string coverage_csv(const CoverageCurve& c) {
  std::ostringstream out;
  out << "retained_fraction,accuracy\n";
  for (const auto& p : c.points) out << format_double(p.retained_fraction) << ',' << format_double(p.accuracy) << '\n';
  return out.str();
}

}  // namespace fmue
