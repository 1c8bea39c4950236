#pragma once

#include <string>
#include <vector>

namespace fmue {

struct CalibrationInput {
  std::vector<double> uncertainty;
  std::vector<bool> correct;
  std::vector<bool> abnormal;  // label is not the normal class
};

enum class StopReason { AccuracyDrop, IncidenceDrop, Exhausted };
const char* stop_reason_name(StopReason r);

// Which level a candidate exclusion is compared against.
enum class StopRule { InitialLevel, PreviousStep };

struct CalibrationOptions {
  StopRule rule = StopRule::InitialLevel;
};

struct CalibrationReport {
  double theta = 1.0;
  std::size_t excluded_count = 0;
  // Entry j holds the indicators after excluding j samples. A tie block of m
  // samples is removed in one step, so its m entries repeat the post-block value.
  std::vector<double> accuracy_trace;
  std::vector<double> incidence_trace;
  StopReason stop_reason = StopReason::Exhausted;
  double initial_accuracy = 0.0;
  double initial_incidence = 0.0;
  std::vector<std::size_t> excluded_indices;  // ascending

  bool operator==(const CalibrationReport&) const = default;
};

// Excludes the most uncertain validation samples one block at a time until the
// next block would push accuracy or disease incidence strictly below the
// reference level, or would leave no sample. theta is the uncertainty of the
// last excluded block (1.0 when nothing was excluded).
CalibrationReport calibrate_threshold(const CalibrationInput& input, const CalibrationOptions& options = {});

}  // namespace fmue
