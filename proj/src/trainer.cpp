#include "fmue/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include "fmue/checkpoint.hpp"
#include "fmue/errors.hpp"
#include "fmue/evaluation.hpp"

namespace fmue {

namespace {

ImageArray flipped(const ImageArray& img) {
  ImageArray out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

double cosine_lr(double base, long step, long total) {
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

void check_labels(const LabeledImages& set, int class_count, const char* what) {
  if (set.size() == 0) throw ConfigError(std::string(what) + " set is empty");
  if (set.labels.size() != set.images.size()) throw ConfigError(std::string(what) + " labels/images mismatch");
  for (int l : set.labels) {
    if (l < 0 || l >= class_count) throw ConfigError(std::string(what) + " set has a label outside [0, K)");
  }
}

}  // namespace

LabeledImages load_images(const DatasetManifest& manifest, const PreprocessConfig& cfg) {
  LabeledImages out;
  for (const auto& r : manifest.records) {
    out.images.push_back(preprocess_file(manifest.resolve(r), cfg));
    out.labels.push_back(manifest.class_index(r).value_or(-1));
    out.paths.push_back(r.image_path);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (anneal_horizon < 1) throw ConfigError("anneal_horizon must be >= 1");
}

std::uint64_t frozen_parameter_digest(const ModelBundle& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Parameter* p : model.parameters()) {
    if (p->trainable) continue;
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h;
}

AdamW::AdamW(const ModelBundle& model, double weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Parameter* p : model.parameters()) {
    if (p->trainable) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    } else {
      m_.emplace_back();
      v_.emplace_back();
    }
  }
}

void AdamW::step(ModelBundle& model, const GradientBuffer& grads, double learning_rate) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : model.parameters()) {
    if (!p->trainable) continue;
    const auto slot = static_cast<std::size_t>(p->slot);
    const Matrix& g = grads.grads[slot];
    Matrix& m = m_[slot];
    Matrix& v = v_[slot];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    // Biases and norm parameters are not decayed.
    const bool decay = p->value.rows() > 1;
    if (decay) p->value *= 1.0 - learning_rate * weight_decay_;
    p->value.array() -= learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
}

TrainReport train(ModelBundle& model, const LabeledImages& train_set, const LabeledImages& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_labels(train_set, model.class_count, "training");
  check_labels(val_set, model.class_count, "validation");
  if (model.trainable_parameter_count() == 0) throw ConfigError("model has no trainable parameters");

  TrainReport report;
  report.frozen_digest = frozen_parameter_digest(model);
  report.trainable_parameters = model.trainable_parameter_count();
  report.total_parameters = model.parameter_count();

  const LossConfig loss_cfg{cfg.anneal_horizon, 1.0};
  AdamW optimizer(model, cfg.weight_decay);
  GradientBuffer grads = GradientBuffer::zeros_like(model);
  const std::size_t n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  std::vector<std::size_t> order(n);
  std::vector<Matrix> best_values;
  long step = 0;
  double last_finite_loss = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::bernoulli_distribution flip(0.5);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = cosine_lr(cfg.learning_rate, step, total_steps);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      grads.set_zero();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const bool do_flip = cfg.horizontal_flip && flip(rng);
        const ForwardTrace trace =
            forward_traced(model, do_flip ? flipped(train_set.images[i]) : train_set.images[i]);
        const auto label = static_cast<std::size_t>(train_set.labels[i]);
        bool finite = trace.logits.allFinite();
        LossWithGradient lw;
        if (finite) {
          std::vector<double> logits(trace.logits.data(), trace.logits.data() + trace.logits.size());
          lw = edl_loss_with_gradient(logits, label, epoch, loss_cfg);
          finite = std::isfinite(lw.loss.total);
        }
        if (!finite) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", step " << step << "; last finite sample loss "
              << last_finite_loss;
          throw DivergenceError(msg.str());
        }
        last_finite_loss = lw.loss.total;
        rec.mean_loss.expected_ce += lw.loss.expected_ce;
        rec.mean_loss.kl_term += lw.loss.kl_term;
        rec.mean_loss.total += lw.loss.total;
        rec.mean_loss.lambda = lw.loss.lambda;

        RowVector d_logits = Eigen::Map<const RowVector>(lw.d_logits.data(), static_cast<Eigen::Index>(lw.d_logits.size()));
        d_logits *= inv_batch;
        backward(model, trace, d_logits, {&grads});
      }
      optimizer.step(model, grads, cosine_lr(cfg.learning_rate, step, total_steps));
      ++step;
    }
    const double nd = static_cast<double>(n);
    rec.mean_loss.expected_ce /= nd;
    rec.mean_loss.kl_term /= nd;
    rec.mean_loss.total /= nd;

    const auto preds = predict_dataset(model, val_set.images);
    std::vector<int> predicted;
    std::vector<std::vector<double>> beliefs;
    for (const auto& p : preds) {
      predicted.push_back(p.predicted_class);
      beliefs.push_back(p.opinion.belief);
    }
    const EvaluationReport metrics = compute_metrics(predicted, val_set.labels, beliefs, model.class_count);
    rec.val_accuracy = metrics.accuracy;
    rec.val_macro_f1 = metrics.macro_f1;
    report.epochs.push_back(rec);

    const double score = cfg.selection_metric == SelectionMetric::MacroF1 ? rec.val_macro_f1 : rec.val_accuracy;
    // Ties go to the later epoch, which has seen more updates.
    if (report.best_epoch < 0 || score >= report.best_metric) {
      report.best_epoch = epoch;
      report.best_metric = score;
      best_values.clear();
      for (const Parameter* p : model.parameters()) {
        if (p->trainable) best_values.push_back(p->value);
      }
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(model, cfg.checkpoint_path);
        report.best_checkpoint_path = cfg.checkpoint_path.string();
      }
    }
    if (on_epoch && !on_epoch(rec)) break;
  }

  std::size_t k = 0;
  for (Parameter* p : model.parameters()) {
    if (p->trainable) p->value = best_values[k++];
  }
  if (frozen_parameter_digest(model) != report.frozen_digest) {
    throw std::logic_error("frozen parameters changed during training");
  }
  return report;
}

std::vector<Prediction> predict_dataset(const ModelBundle& model, std::span<const ImageArray> images) {
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const RowVector logits = forward(model, img);
    const std::vector<double> l(logits.data(), logits.data() + logits.size());
    Prediction p;
    p.opinion = opinion_from_evidence(evidence_from_logits(l));
    p.predicted_class = static_cast<int>(p.opinion.predicted_class());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fmue
