#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fmue {

struct ClassMetrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // undefined without both positives and negatives
  std::size_t support = 0;
  bool precision_undefined = false;    // no predicted positives
  bool sensitivity_undefined = false;  // no true positives possible (support 0)
};

struct EvaluationReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_sensitivity = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;
  double accuracy = 0.0;
  std::size_t total = 0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

// belief_scores[i][k] ranks sample i for class k in the one-vs-rest AUCs.
EvaluationReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                                 const std::vector<std::vector<double>>& belief_scores, int class_count);

// Mann-Whitney AUC with half credit for tied (positive, negative) pairs.
std::optional<double> rank_auc(std::span<const double> scores, const std::vector<bool>& positive);

struct CoveragePoint {
  double retained_fraction = 0.0;
  double accuracy = 0.0;
};

struct CoverageCurve {
  std::vector<CoveragePoint> points;
  // Trapezoidal area divided by the retained-fraction width it spans.
  double auc = 0.0;
  double min_fraction = 0.1;
};

// Removes the most uncertain samples (equal uncertainties as one block) and
// records accuracy on the rest, down to `min_fraction` retained.
CoverageCurve coverage_curve(std::span<const double> uncertainties, const std::vector<bool>& correct,
                             double min_fraction = 0.1);

struct OODReport {
  double theta = 1.0;
  std::size_t count = 0;
  std::size_t detected = 0;
  double detection_rate = 0.0;
  double mean_uncertainty = 0.0;
  std::vector<double> bin_edges;  // bins + 1 edges over [0, 1]
  std::vector<double> densities;  // integrate to 1
};

OODReport ood_detection_rate(std::span<const double> uncertainties, double theta, int bins = 50);

struct AssociationReport {
  // a: high & wrong, b: high & right, c: low & wrong, d: low & right.
  std::size_t a = 0, b = 0, c = 0, d = 0;
  bool corrected = false;  // Haldane-Anscombe +0.5 applied
  bool degenerate = false;
  std::string warning;
  double odds_ratio = 1.0;
  double log_odds_ratio = 0.0;
  double standard_error = 0.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double z = 0.0;
  double p_value = 1.0;
};

// Odds ratio of misclassification for high- vs low-uncertainty samples with a
// Wald 95% interval; identical to a single-binary-covariate logistic fit.
AssociationReport misclassification_association(const std::vector<bool>& high_flags,
                                                const std::vector<bool>& wrong_flags);

}  // namespace fmue
