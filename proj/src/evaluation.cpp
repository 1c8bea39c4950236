#include "fmue/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

std::vector<std::size_t> order_by_uncertainty(std::span<const double> u) {
  std::vector<std::size_t> idx(u.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return u[i] > u[j]; });
  return idx;
}

}  // namespace

std::optional<double> rank_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DomainError("rank_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && scores[idx[end]] == scores[idx[start]]) ++end;
    const double mid_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) {
      if (positive[idx[k]]) {
        positive_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    start = end;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

EvaluationReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                                 const std::vector<std::vector<double>>& belief_scores, int class_count) {
  if (predictions.size() != labels.size() || belief_scores.size() != labels.size()) {
    throw DomainError("compute_metrics: predictions, labels and scores differ in length");
  }
  if (class_count < 2) throw DomainError("compute_metrics: class_count must be >= 2");
  const auto k_count = static_cast<std::size_t>(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count || predictions[i] < 0 || predictions[i] >= class_count) {
      throw DomainError("compute_metrics: class index out of range at sample " + std::to_string(i));
    }
    if (belief_scores[i].size() != k_count) {
      throw DomainError("compute_metrics: score row " + std::to_string(i) + " has wrong length");
    }
  }

  EvaluationReport r;
  r.total = labels.size();
  r.confusion.assign(k_count, std::vector<std::size_t>(k_count, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
  }

  std::size_t correct = 0;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  r.per_class.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    ClassMetrics& m = r.per_class[k];
    const std::size_t tp = r.confusion[k][k];
    std::size_t predicted = 0;
    for (std::size_t t = 0; t < k_count; ++t) predicted += r.confusion[t][k];
    m.support = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    correct += tp;

    m.precision_undefined = predicted == 0;
    m.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    m.sensitivity_undefined = m.support == 0;
    m.sensitivity = m.support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(m.support);
    m.f1 = (m.precision + m.sensitivity) > 0.0 ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity) : 0.0;

    std::vector<double> scores(labels.size());
    std::vector<bool> positive(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = belief_scores[i][k];
      positive[i] = labels[i] == static_cast<int>(k);
    }
    m.auc = rank_auc(scores, positive);
    if (m.auc) {
      auc_sum += *m.auc;
      ++auc_count;
    }
    r.macro_precision += m.precision;
    r.macro_sensitivity += m.sensitivity;
    r.macro_f1 += m.f1;
  }
  const double kd = static_cast<double>(k_count);
  r.macro_precision /= kd;
  r.macro_sensitivity /= kd;
  r.macro_f1 /= kd;
  if (auc_count > 0) r.macro_auc = auc_sum / static_cast<double>(auc_count);
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.total);
  return r;
}

CoverageCurve coverage_curve(std::span<const double> uncertainties, const std::vector<bool>& correct,
                             double min_fraction) {
  if (uncertainties.empty()) throw DomainError("coverage_curve: empty input");
  if (uncertainties.size() != correct.size()) throw DomainError("coverage_curve: length mismatch");
  if (!(min_fraction > 0.0 && min_fraction <= 1.0)) throw DomainError("coverage_curve: min_fraction must be in (0, 1]");

  const std::size_t n = uncertainties.size();
  const auto order = order_by_uncertainty(uncertainties);
  std::size_t remaining = n;
  std::size_t remaining_correct = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  const double nd = static_cast<double>(n);

  CoverageCurve curve;
  curve.min_fraction = min_fraction;
  curve.points.push_back({1.0, static_cast<double>(remaining_correct) / nd});
  std::vector<std::size_t> counts{n};
  for (std::size_t pos = 0; pos < n;) {
    std::size_t end = pos;
    std::size_t block_correct = 0;
    while (end < n && uncertainties[order[end]] == uncertainties[order[pos]]) {
      block_correct += correct[order[end]] ? 1 : 0;
      ++end;
    }
    const std::size_t after = remaining - (end - pos);
    if (after == 0 || static_cast<double>(after) / nd < min_fraction) break;
    remaining = after;
    remaining_correct -= block_correct;
    curve.points.push_back({static_cast<double>(remaining) / nd,
                            static_cast<double>(remaining_correct) / static_cast<double>(remaining)});
    counts.push_back(remaining);
    pos = end;
  }

  if (curve.points.size() == 1) {
    curve.auc = curve.points[0].accuracy;
  } else {
    // Weights from the integer sample counts; the clamp absorbs the last ulp.
    double area = 0.0;
    const double span = static_cast<double>(counts.front() - counts.back());
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
      const double w = static_cast<double>(counts[i] - counts[i + 1]) / span;
      area += w * 0.5 * (curve.points[i].accuracy + curve.points[i + 1].accuracy);
    }
    curve.auc = std::clamp(area, 0.0, 1.0);
  }
  return curve;
}

OODReport ood_detection_rate(std::span<const double> uncertainties, double theta, int bins) {
  if (uncertainties.empty()) throw DomainError("ood_detection_rate: empty input");
  if (!(theta > 0.0 && theta <= 1.0)) throw DomainError("ood_detection_rate: theta must be in (0, 1]");
  if (bins < 1) throw DomainError("ood_detection_rate: bins must be >= 1");

  OODReport r;
  r.theta = theta;
  r.count = uncertainties.size();
  const double width = 1.0 / bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  double sum = 0.0;
  for (double u : uncertainties) {
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("ood_detection_rate: uncertainty outside [0, 1]");
    if (u >= theta) ++r.detected;
    sum += u;
    const auto bin = std::min(static_cast<std::size_t>(u * bins), static_cast<std::size_t>(bins - 1));
    ++counts[bin];
  }
  const double n = static_cast<double>(r.count);
  r.detection_rate = static_cast<double>(r.detected) / n;
  r.mean_uncertainty = sum / n;
  for (int i = 0; i <= bins; ++i) r.bin_edges.push_back(i * width);
  for (std::size_t c : counts) r.densities.push_back(static_cast<double>(c) / (n * width));
  return r;
}

AssociationReport misclassification_association(const std::vector<bool>& high_flags,
                                                const std::vector<bool>& wrong_flags) {
  if (high_flags.size() != wrong_flags.size()) throw DomainError("misclassification_association: length mismatch");
  if (high_flags.empty()) throw DomainError("misclassification_association: empty input");

  AssociationReport r;
  for (std::size_t i = 0; i < high_flags.size(); ++i) {
    if (high_flags[i]) {
      (wrong_flags[i] ? r.a : r.b) += 1;
    } else {
      (wrong_flags[i] ? r.c : r.d) += 1;
    }
  }
  const bool high_constant = r.a + r.b == 0 || r.c + r.d == 0;
  const bool wrong_constant = r.a + r.c == 0 || r.b + r.d == 0;
  if (high_constant || wrong_constant) {
    r.degenerate = true;
    r.warning = high_constant ? "uncertainty flags are all identical; corrected estimate only"
                              : "misclassification flags are all identical; corrected estimate only";
  }

  double a = static_cast<double>(r.a), b = static_cast<double>(r.b);
  double c = static_cast<double>(r.c), d = static_cast<double>(r.d);
  if (r.a == 0 || r.b == 0 || r.c == 0 || r.d == 0) {
    r.corrected = true;
    a += 0.5;
    b += 0.5;
    c += 0.5;
    d += 0.5;
  }
  r.log_odds_ratio = std::log(a) + std::log(d) - std::log(b) - std::log(c);
  r.odds_ratio = std::exp(r.log_odds_ratio);
  r.standard_error = std::sqrt(1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d);
  r.ci_low = std::exp(r.log_odds_ratio - 1.96 * r.standard_error);
  r.ci_high = std::exp(r.log_odds_ratio + 1.96 * r.standard_error);
  r.z = r.log_odds_ratio / r.standard_error;
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

}  // namespace fmue
