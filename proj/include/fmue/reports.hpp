#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmue/calibration.hpp"
#include "fmue/checkpoint.hpp"
#include "fmue/data.hpp"
#include "fmue/evaluation.hpp"
#include "fmue/trainer.hpp"

namespace fmue {

using ojson = nlohmann::ordered_json;

ojson report_json(const TrainReport& r);
ojson report_json(const CalibrationReport& r);
ojson report_json(const EvaluationReport& r, const std::vector<std::string>& class_names);
ojson report_json(const CoverageCurve& c);
ojson report_json(const OODReport& r);
ojson report_json(const AssociationReport& r);
ojson report_json(const LoadReport& r);
ojson report_json(const SplitAssignment& s, const DatasetManifest& manifest);

CalibrationReport calibration_from_json(const nlohmann::json& j);

// Metrics after dropping samples with u >= theta.
struct ThresholdedEvaluation {
  EvaluationReport report;
  double theta = 1.0;
  std::size_t excluded = 0;
  double excluded_fraction = 0.0;
};
ojson report_json(const ThresholdedEvaluation& t, const std::vector<std::string>& class_names);

// Pretty JSON with a trailing newline; IoError when the file cannot be written.
void write_json(const std::filesystem::path& path, const ojson& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Header row plus one row per true class.
std::string confusion_csv(const EvaluationReport& r, const std::vector<std::string>& class_names);
// bin_left,density
std::string histogram_csv(const OODReport& r);
// retained_fraction,accuracy
std::string coverage_csv(const CoverageCurve& c);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fmue
