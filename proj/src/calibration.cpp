#include "fmue/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmue/errors.hpp"

namespace fmue {

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::AccuracyDrop:
      return "accuracy_drop";
    case StopReason::IncidenceDrop:
      return "incidence_drop";
    case StopReason::Exhausted:
      return "exhausted";
  }
  return "?";
}

namespace {

// count/total as an exact rational for comparisons.
struct Ratio {
  std::size_t count;
  std::size_t total;
  bool less_than(const Ratio& o) const { return count * o.total < o.count * total; }
  double value() const { return static_cast<double>(count) / static_cast<double>(total); }
};

}  // namespace

CalibrationReport calibrate_threshold(const CalibrationInput& input, const CalibrationOptions& options) {
  const std::size_t n = input.uncertainty.size();
  if (n == 0) throw DomainError("calibrate_threshold: empty input");
  if (input.correct.size() != n || input.abnormal.size() != n) {
    throw DomainError("calibrate_threshold: input sequences differ in length");
  }
  for (double u : input.uncertainty) {
    if (!(u > 0.0 && u <= 1.0)) throw DomainError("calibrate_threshold: uncertainty outside (0, 1]");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return input.uncertainty[i] > input.uncertainty[j]; });

  Ratio accuracy{static_cast<std::size_t>(std::count(input.correct.begin(), input.correct.end(), true)), n};
  Ratio incidence{static_cast<std::size_t>(std::count(input.abnormal.begin(), input.abnormal.end(), true)), n};
  const Ratio initial_accuracy = accuracy;
  const Ratio initial_incidence = incidence;

  CalibrationReport r;
  r.initial_accuracy = accuracy.value();
  r.initial_incidence = incidence.value();
  r.accuracy_trace.push_back(r.initial_accuracy);
  r.incidence_trace.push_back(r.initial_incidence);

  std::size_t pos = 0;
  while (true) {
    std::size_t end = pos;
    std::size_t block_correct = 0;
    std::size_t block_abnormal = 0;
    while (end < n && input.uncertainty[order[end]] == input.uncertainty[order[pos]]) {
      block_correct += input.correct[order[end]] ? 1 : 0;
      block_abnormal += input.abnormal[order[end]] ? 1 : 0;
      ++end;
    }
    const std::size_t block = end - pos;
    const std::size_t remaining = accuracy.total;
    if (remaining <= block) {
      r.stop_reason = StopReason::Exhausted;
      break;
    }
    const Ratio next_accuracy{accuracy.count - block_correct, remaining - block};
    const Ratio next_incidence{incidence.count - block_abnormal, remaining - block};
    const bool from_initial = options.rule == StopRule::InitialLevel;
    if (next_accuracy.less_than(from_initial ? initial_accuracy : accuracy)) {
      r.stop_reason = StopReason::AccuracyDrop;
      break;
    }
    if (next_incidence.less_than(from_initial ? initial_incidence : incidence)) {
      r.stop_reason = StopReason::IncidenceDrop;
      break;
    }

    accuracy = next_accuracy;
    incidence = next_incidence;
    for (std::size_t k = pos; k < end; ++k) {
      r.excluded_indices.push_back(order[k]);
      r.accuracy_trace.push_back(accuracy.value());
      r.incidence_trace.push_back(incidence.value());
    }
    r.excluded_count += block;
    r.theta = input.uncertainty[order[pos]];
    pos = end;
  }
  if (r.excluded_count == 0) r.theta = 1.0;
  std::sort(r.excluded_indices.begin(), r.excluded_indices.end());
  return r;
}

}  // namespace fmue
