#include "fmue/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmue/errors.hpp"
#include "fmue/special_functions.hpp"

namespace fmue {

using special::digamma;
using special::log_gamma;
using special::trigamma;

EvidenceVector::EvidenceVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) {
    throw DomainError("evidence needs at least two classes");
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k]) || values_[k] < 0.0) {
      throw DomainError("evidence entry " + std::to_string(k) + " must be finite and >= 0");
    }
  }
}

std::size_t DirichletOpinion::predicted_class() const {
  return static_cast<std::size_t>(std::max_element(belief.begin(), belief.end()) - belief.begin());
}

double softplus(double x) {
  // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

EvidenceVector evidence_from_logits(std::span<const double> logits) {
  std::vector<double> e(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!std::isfinite(logits[k])) {
      throw DomainError("logit " + std::to_string(k) + " is not finite");
    }
    e[k] = softplus(logits[k]);
  }
  return EvidenceVector(std::move(e));
}

DirichletOpinion opinion_from_evidence(const EvidenceVector& evidence) {
  const std::size_t k_count = evidence.class_count();
  DirichletOpinion op;
  op.alpha.resize(k_count);
  op.belief.resize(k_count);
  double s = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    op.alpha[k] = evidence[k] + 1.0;
    s += op.alpha[k];
  }
  op.strength = s;
  for (std::size_t k = 0; k < k_count; ++k) {
    op.belief[k] = evidence[k] / s;
  }
  op.uncertainty = static_cast<double>(k_count) / s;
  return op;
}

double kl_dirichlet_uniform(std::span<const double> alpha) {
  if (alpha.empty()) {
    throw DomainError("kl_dirichlet_uniform: empty alpha");
  }
  double s = 0.0;
  for (double a : alpha) {
    if (!std::isfinite(a) || a < 1.0) {
      throw DomainError("kl_dirichlet_uniform: every alpha must be >= 1");
    }
    s += a;
  }
  const double k_count = static_cast<double>(alpha.size());
  const double psi_s = digamma(s);
  double kl = log_gamma(s) - log_gamma(k_count);
  for (double a : alpha) {
    kl -= log_gamma(a);
    kl += (a - 1.0) * (digamma(a) - psi_s);
  }
  // Cancellation can leave a tiny negative residue for near-uniform alpha.
  return std::max(kl, 0.0);
}

double anneal_lambda(int epoch, const LossConfig& cfg) {
  if (cfg.anneal_horizon < 1) {
    throw DomainError("anneal_horizon must be >= 1");
  }
  if (epoch < 0) {
    throw DomainError("epoch must be >= 0");
  }
  return std::min(cfg.anneal_cap, static_cast<double>(epoch) / cfg.anneal_horizon);
}

namespace {

std::size_t label_from_one_hot(std::span<const double> y, std::size_t k_count) {
  if (y.size() != k_count) {
    throw DomainError("label vector length does not match class count");
  }
  std::size_t label = k_count;
  for (std::size_t k = 0; k < k_count; ++k) {
    if (y[k] == 1.0) {
      if (label != k_count) {
        throw DomainError("label vector has more than one hot entry");
      }
      label = k;
    } else if (y[k] != 0.0) {
      throw DomainError("label vector entries must be 0 or 1");
    }
  }
  if (label == k_count) {
    throw DomainError("label vector has no hot entry");
  }
  return label;
}

}  // namespace

LossBreakdown edl_loss(const EvidenceVector& evidence, std::size_t label, int epoch,
                       const LossConfig& cfg) {
  const std::size_t k_count = evidence.class_count();
  if (label >= k_count) {
    throw DomainError("label index out of range");
  }
  const DirichletOpinion op = opinion_from_evidence(evidence);

  LossBreakdown out;
  out.expected_ce = digamma(op.strength) - digamma(op.alpha[label]);
  out.lambda = anneal_lambda(epoch, cfg);

  std::vector<double> masked = op.alpha;
  masked[label] = 1.0;
  out.kl_term = kl_dirichlet_uniform(masked);
  out.total = out.expected_ce + out.lambda * out.kl_term;
  return out;
}

LossBreakdown edl_loss(const EvidenceVector& evidence, std::span<const double> one_hot, int epoch,
                       const LossConfig& cfg) {
  return edl_loss(evidence, label_from_one_hot(one_hot, evidence.class_count()), epoch, cfg);
}

LossWithGradient edl_loss_with_gradient(std::span<const double> logits, std::size_t label,
                                        int epoch, const LossConfig& cfg) {
  const EvidenceVector evidence = evidence_from_logits(logits);
  LossWithGradient out;
  out.loss = edl_loss(evidence, label, epoch, cfg);

  const std::size_t k_count = evidence.class_count();
  double s = 0.0;
  double masked_s = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    s += evidence[k] + 1.0;
    masked_s += (k == label) ? 1.0 : evidence[k] + 1.0;
  }
  const double tri_s = trigamma(s);
  const double tri_masked_s = trigamma(masked_s);
  const double masked_excess = masked_s - static_cast<double>(k_count);

  out.d_logits.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double alpha = evidence[k] + 1.0;
    // d expected_ce / d alpha_k = psi1(S) - y_k psi1(alpha_k)
    double grad = tri_s - (k == label ? trigamma(alpha) : 0.0);
    if (k != label) {
      // d KL / d alpha~_k = (alpha~_k - 1) psi1(alpha~_k) - (S~ - K) psi1(S~)
      grad += out.loss.lambda * ((alpha - 1.0) * trigamma(alpha) - masked_excess * tri_masked_s);
    }
    out.d_logits[k] = grad * sigmoid(logits[k]);
  }
  return out;
}

}  // namespace fmue
