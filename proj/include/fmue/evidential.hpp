#pragma once

// Evidence / Dirichlet-opinion calculus used by the classifier head and the
// evidential training loss.

#include <cstddef>
#include <span>
#include <vector>

namespace fmue {

// Non-negative per-class evidence, K >= 2.
class EvidenceVector {
 public:
  explicit EvidenceVector(std::vector<double> values);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t class_count() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }

 private:
  std::vector<double> values_;
};

struct DirichletOpinion {
  std::vector<double> belief;
  double uncertainty = 1.0;
  std::vector<double> alpha;
  double strength = 0.0;

  std::size_t class_count() const noexcept { return alpha.size(); }
  // Index of the largest belief (lowest index on ties).
  std::size_t predicted_class() const;
};

struct LossConfig {
  int anneal_horizon = 10;
  double anneal_cap = 1.0;
};

struct LossBreakdown {
  double expected_ce = 0.0;
  double kl_term = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

// softplus(logit) per class, stable for large |logit|.
EvidenceVector evidence_from_logits(std::span<const double> logits);

DirichletOpinion opinion_from_evidence(const EvidenceVector& evidence);

// KL(Dir(alpha) || Dir(1, ..., 1)). Requires every alpha_k >= 1.
double kl_dirichlet_uniform(std::span<const double> alpha);

// Expected cross-entropy under Dir(e + 1) plus the annealed KL of the
// label-masked alpha to the uniform Dirichlet. `one_hot` must be exactly one-hot.
LossBreakdown edl_loss(const EvidenceVector& evidence, std::span<const double> one_hot, int epoch,
                       const LossConfig& cfg);
LossBreakdown edl_loss(const EvidenceVector& evidence, std::size_t label, int epoch,
                       const LossConfig& cfg);

// Loss and its gradient with respect to the pre-softplus logits.
struct LossWithGradient {
  LossBreakdown loss;
  std::vector<double> d_logits;
};
LossWithGradient edl_loss_with_gradient(std::span<const double> logits, std::size_t label,
                                        int epoch, const LossConfig& cfg);

double anneal_lambda(int epoch, const LossConfig& cfg);

// Numerically stable softplus and its derivative (the logistic sigmoid).
double softplus(double x);
double sigmoid(double x);

}  // namespace fmue
