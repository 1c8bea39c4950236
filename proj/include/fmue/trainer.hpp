#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmue/data.hpp"
#include "fmue/evidential.hpp"
#include "fmue/model.hpp"

namespace fmue {

// Preprocessed images with class indices (-1 for OOD records).
struct LabeledImages {
  std::vector<ImageArray> images;
  std::vector<int> labels;
  std::vector<std::string> paths;

  std::size_t size() const { return images.size(); }
};

LabeledImages load_images(const DatasetManifest& manifest, const PreprocessConfig& cfg);

enum class SelectionMetric { MacroF1, Accuracy };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int anneal_horizon = 10;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::MacroF1;
  bool horizontal_flip = false;
  // Best-epoch checkpoint is written here when non-empty.
  std::filesystem::path checkpoint_path;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown mean_loss;
  double learning_rate = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_metric = 0.0;
  std::string best_checkpoint_path;
  std::uint64_t frozen_digest = 0;
  std::size_t trainable_parameters = 0;
  std::size_t total_parameters = 0;
};

// Hash over the bytes of every untrainable parameter.
std::uint64_t frozen_parameter_digest(const ModelBundle& model);

// Decoupled-weight-decay Adam over the trainable parameters.
class AdamW {
 public:
  AdamW(const ModelBundle& model, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ModelBundle& model, const GradientBuffer& grads, double learning_rate);

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double weight_decay_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Called after each epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

// On return the model holds the best-epoch parameters.
TrainReport train(ModelBundle& model, const LabeledImages& train_set, const LabeledImages& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct Prediction {
  DirichletOpinion opinion;
  int predicted_class = 0;
};

std::vector<Prediction> predict_dataset(const ModelBundle& model, std::span<const ImageArray> images);

}  // namespace fmue
