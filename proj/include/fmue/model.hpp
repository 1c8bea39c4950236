#pragma once

// Vision-transformer encoder with an evidential linear head, LoRA adapters and
// per-parameter trainability. Forward and backward passes are written out by
// hand over Eigen matrices; one image is one (tokens x embed_dim) matrix.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmue/image.hpp"

namespace fmue {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 6;
  int heads = 4;
  double mlp_ratio = 4.0;
  int channels = 3;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int patch_count() const { return grid() * grid(); }
  int token_count() const { return patch_count() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  int mlp_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }
};

struct LoRAConfig {
  int rank = 4;
  double scaling = 8.0;
  std::vector<std::string> targets{"query", "value"};
  // When false only the last encoder block is adapted.
  bool adapt_all_blocks = true;
  double init_std = 0.02;
  std::uint64_t seed = 1;
};

// Names accepted in LoRAConfig::targets.
std::span<const std::string> lora_target_names();

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
  bool is_lora = false;
  int slot = -1;  // position in ModelBundle::parameters()
};

struct LoRAAdapter {
  Parameter a;  // rank x in
  Parameter b;  // out x rank
  double scale = 0.0;  // scaling / rank
};

struct Linear {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out
  std::optional<LoRAAdapter> lora;

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }
};

struct LayerNorm {
  Parameter gamma;  // 1 x d
  Parameter beta;   // 1 x d
};

struct EncoderBlock {
  LayerNorm norm1;
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

  Linear* linear_by_name(const std::string& name);
};

struct Encoder {
  Linear patch_embed;   // embed_dim x patch_dim
  Parameter cls_token;  // 1 x embed_dim
  Parameter pos_embed;  // tokens x embed_dim
  std::vector<EncoderBlock> blocks;
  LayerNorm norm;
};

struct ModelBundle {
  EncoderConfig config;
  int class_count = 0;
  Encoder encoder;
  Linear head;  // class_count x embed_dim
  std::optional<LoRAConfig> lora;

  // Deterministic enumeration; slot i of a GradientBuffer belongs to entry i.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void reindex();

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;
  std::vector<std::string> trainable_names() const;
};

// Builds a randomly initialised model; identical seeds give bit-identical weights.
ModelBundle build_model(const EncoderConfig& cfg, int class_count, std::uint64_t seed = 0);

// Wraps each targeted projection W with x -> Wx + (scaling/rank) B(Ax); B starts at zero.
void inject_lora(ModelBundle& model, const LoRAConfig& cfg);

// Marks every non-LoRA encoder parameter untrainable; the head stays trainable.
void freeze_base(ModelBundle& model);

// Per-parameter gradient storage aligned with ModelBundle::parameters();
// frozen parameters keep an empty matrix.
struct GradientBuffer {
  std::vector<Matrix> grads;

  static GradientBuffer zeros_like(const ModelBundle& model);
  void set_zero();
};

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

struct BlockCache {
  Matrix input;
  LayerNormCache norm1;
  Matrix norm1_out;
  Matrix q, k, v;
  Matrix q_lora, k_lora, v_lora, out_lora;  // (x A^T) for adapted maps
  std::vector<Matrix> attention;  // per head, tokens x tokens
  Matrix context;
  Matrix mid;  // residual stream after attention
  LayerNormCache norm2;
  Matrix norm2_out;
  Matrix fc1_pre;
  Matrix fc1_act;
  Matrix fc1_lora, fc2_lora;
  Matrix output;
};

struct ForwardTrace {
  Matrix patches;  // patch_count x patch_dim
  Matrix patch_lora;
  std::vector<BlockCache> blocks;
  LayerNormCache final_norm;
  Matrix final_out;
  RowVector pooled;
  RowVector head_lora;
  RowVector logits;
};

// Splits a CHW image into row-major patches, channel-major within a patch.
Matrix patchify(const EncoderConfig& cfg, const ImageArray& image);

// Logits for a batch: N x K. Throws ShapeError on a wrong spatial size.
Matrix forward(const ModelBundle& model, std::span<const ImageArray> images);
RowVector forward(const ModelBundle& model, const ImageArray& image);
ForwardTrace forward_traced(const ModelBundle& model, const ImageArray& image);

struct BackwardRequest {
  // Accumulates parameter gradients here when set.
  GradientBuffer* grads = nullptr;
  // When >= 0, stores d(objective)/d(output tokens of that block) in `captured`.
  int capture_block = -1;
  Matrix* captured = nullptr;
};

void backward(const ModelBundle& model, const ForwardTrace& trace, const RowVector& d_logits,
              const BackwardRequest& request);

}  // namespace fmue
