#include "fmue/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

constexpr double kLayerNormEps = 1e-6;
// Negative head bias keeps fresh models near the vacuous opinion (u close to 1).
constexpr double kHeadBiasInit = -3.0;
constexpr double kHeadWeightStd = 0.01;

const std::array<std::string, 6> kLoraTargets{"query", "key", "value", "out", "fc1", "fc2"};

Parameter make_param(std::string name, Eigen::Index rows, Eigen::Index cols, double fill = 0.0) {
  Parameter p;
  p.name = std::move(name);
  p.value = Matrix::Constant(rows, cols, fill);
  return p;
}

void xavier_uniform(Matrix& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

void normal_fill(Matrix& w, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

Linear make_linear(const std::string& prefix, int in, int out, std::mt19937_64& rng) {
  Linear l;
  l.weight = make_param(prefix + ".weight", out, in);
  l.bias = make_param(prefix + ".bias", 1, out);
  xavier_uniform(l.weight.value, rng);
  return l;
}

LayerNorm make_norm(const std::string& prefix, int dim) {
  return LayerNorm{make_param(prefix + ".weight", 1, dim, 1.0), make_param(prefix + ".bias", 1, dim, 0.0)};
}

// Fixed 2D sine-cosine table; row 0 (class token) stays zero.
Matrix sincos_position_table(int grid, int dim) {
  Matrix table = Matrix::Zero(grid * grid + 1, dim);
  const int quarter = dim / 4;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = 1 + gy * grid + gx;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        table(row, i) = std::sin(gx * omega);
        table(row, quarter + i) = std::cos(gx * omega);
        table(row, 2 * quarter + i) = std::sin(gy * omega);
        table(row, 3 * quarter + i) = std::cos(gy * omega);
      }
    }
  }
  return table;
}

template <class Fn>
void visit_parameters(ModelBundle& m, Fn&& fn) {
  auto linear = [&](Linear& l) {
    fn(l.weight);
    fn(l.bias);
    if (l.lora) {
      fn(l.lora->a);
      fn(l.lora->b);
    }
  };
  auto norm = [&](LayerNorm& n) {
    fn(n.gamma);
    fn(n.beta);
  };
  linear(m.encoder.patch_embed);
  fn(m.encoder.cls_token);
  fn(m.encoder.pos_embed);
  for (auto& b : m.encoder.blocks) {
    norm(b.norm1);
    linear(b.query);
    linear(b.key);
    linear(b.value);
    linear(b.out);
    norm(b.norm2);
    linear(b.fc1);
    linear(b.fc2);
  }
  norm(m.encoder.norm);
  linear(m.head);
}

// ---- layer kernels --------------------------------------------------------

Matrix linear_forward(const Linear& l, const Matrix& x, Matrix* lora_cache) {
  Matrix y = x * l.weight.value.transpose();
  y.rowwise() += l.bias.value.row(0);
  if (l.lora) {
    Matrix xa = x * l.lora->a.value.transpose();
    y.noalias() += l.lora->scale * (xa * l.lora->b.value.transpose());
    if (lora_cache) *lora_cache = std::move(xa);
  }
  return y;
}

Matrix* grad_slot(GradientBuffer* grads, const Parameter& p) {
  if (!grads || !p.trainable) return nullptr;
  return &grads->grads[static_cast<std::size_t>(p.slot)];
}

// Returns dL/dx and accumulates trainable parameter gradients.
Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& lora_cache, const Matrix& dy,
                       GradientBuffer* grads, bool need_dx = true) {
  if (Matrix* gw = grad_slot(grads, l.weight)) gw->noalias() += dy.transpose() * x;
  if (Matrix* gb = grad_slot(grads, l.bias)) gb->row(0) += dy.colwise().sum();
  Matrix dx;
  if (need_dx) dx.noalias() = dy * l.weight.value;
  if (l.lora) {
    const double s = l.lora->scale;
    Matrix d_xa = s * (dy * l.lora->b.value);
    if (Matrix* gbm = grad_slot(grads, l.lora->b)) gbm->noalias() += s * (dy.transpose() * lora_cache);
    if (Matrix* gam = grad_slot(grads, l.lora->a)) gam->noalias() += d_xa.transpose() * x;
    if (need_dx) dx.noalias() += d_xa * l.lora->a.value;
  }
  return dx;
}

Matrix layer_norm_forward(const LayerNorm& n, const Matrix& x, LayerNormCache& cache) {
  const Eigen::Index d = x.cols();
  cache.xhat.resize(x.rows(), d);
  cache.rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
  }
  Matrix y = cache.xhat.array().rowwise() * n.gamma.value.row(0).array();
  y.rowwise() += n.beta.value.row(0);
  return y;
}

Matrix layer_norm_backward(const LayerNorm& n, const LayerNormCache& cache, const Matrix& dy,
                           GradientBuffer* grads) {
  if (Matrix* gg = grad_slot(grads, n.gamma)) gg->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (Matrix* gb = grad_slot(grads, n.beta)) gb->row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * n.gamma.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).mean();
    const double mean_dx = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

// ---- configuration ---------------------------------------------------------

void EncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || depth <= 0 || heads <= 0 || channels <= 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_dim() < 1) {
    throw ConfigError("mlp_ratio must be positive");
  }
}

std::span<const std::string> lora_target_names() { return kLoraTargets; }

Linear* EncoderBlock::linear_by_name(const std::string& name) {
  if (name == "query") return &query;
  if (name == "key") return &key;
  if (name == "value") return &value;
  if (name == "out") return &out;
  if (name == "fc1") return &fc1;
  if (name == "fc2") return &fc2;
  return nullptr;
}

std::vector<Parameter*> ModelBundle::parameters() {
  std::vector<Parameter*> out;
  visit_parameters(*this, [&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> ModelBundle::parameters() const {
  std::vector<const Parameter*> out;
  visit_parameters(const_cast<ModelBundle&>(*this), [&](Parameter& p) { out.push_back(&p); });
  return out;
}

void ModelBundle::reindex() {
  int slot = 0;
  visit_parameters(*this, [&](Parameter& p) { p.slot = slot++; });
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::size_t ModelBundle::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) {
    if (p->trainable) n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

std::vector<std::string> ModelBundle::trainable_names() const {
  std::vector<std::string> names;
  for (const Parameter* p : parameters()) {
    if (p->trainable) names.push_back(p->name);
  }
  return names;
}

ModelBundle build_model(const EncoderConfig& cfg, int class_count, std::uint64_t seed) {
  cfg.validate();
  if (class_count < 2) {
    throw ConfigError("class_count must be >= 2");
  }
  std::mt19937_64 rng(seed);
  ModelBundle m;
  m.config = cfg;
  m.class_count = class_count;
  const int d = cfg.embed_dim;

  m.encoder.patch_embed = make_linear("encoder.patch_embed", cfg.patch_dim(), d, rng);
  m.encoder.cls_token = make_param("encoder.cls_token", 1, d);
  normal_fill(m.encoder.cls_token.value, 0.02, rng);
  m.encoder.pos_embed = make_param("encoder.pos_embed", cfg.token_count(), d);
  if (d % 4 == 0) {
    m.encoder.pos_embed.value = sincos_position_table(cfg.grid(), d);
  } else {
    normal_fill(m.encoder.pos_embed.value, 0.02, rng);
  }

  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "encoder.blocks." + std::to_string(i);
    EncoderBlock b;
    b.norm1 = make_norm(p + ".norm1", d);
    b.query = make_linear(p + ".attn.query", d, d, rng);
    b.key = make_linear(p + ".attn.key", d, d, rng);
    b.value = make_linear(p + ".attn.value", d, d, rng);
    b.out = make_linear(p + ".attn.out", d, d, rng);
    b.norm2 = make_norm(p + ".norm2", d);
    b.fc1 = make_linear(p + ".mlp.fc1", d, cfg.mlp_dim(), rng);
    b.fc2 = make_linear(p + ".mlp.fc2", cfg.mlp_dim(), d, rng);
    m.encoder.blocks.push_back(std::move(b));
  }
  m.encoder.norm = make_norm("encoder.norm", d);

  m.head.weight = make_param("head.weight", class_count, d);
  normal_fill(m.head.weight.value, kHeadWeightStd, rng);
  m.head.bias = make_param("head.bias", 1, class_count, kHeadBiasInit);

  m.reindex();
  return m;
}

void inject_lora(ModelBundle& model, const LoRAConfig& cfg) {
  if (model.lora) {
    throw ConfigError("LoRA adapters are already injected");
  }
  if (cfg.rank < 1) throw ConfigError("LoRA rank must be >= 1");
  if (!(cfg.scaling > 0.0)) throw ConfigError("LoRA scaling must be > 0");
  if (cfg.targets.empty()) throw ConfigError("LoRA targets must not be empty");
  for (const auto& t : cfg.targets) {
    if (std::find(kLoraTargets.begin(), kLoraTargets.end(), t) == kLoraTargets.end()) {
      throw ConfigError("unknown LoRA target '" + t + "'");
    }
  }
  const std::size_t first = cfg.adapt_all_blocks ? 0 : model.encoder.blocks.size() - 1;
  for (std::size_t bi = first; bi < model.encoder.blocks.size(); ++bi) {
    for (const auto& t : cfg.targets) {
      const Linear* l = model.encoder.blocks[bi].linear_by_name(t);
      if (cfg.rank > std::min(l->in_features(), l->out_features())) {
        throw ConfigError("LoRA rank exceeds dimensions of " + l->weight.name);
      }
    }
  }

  std::mt19937_64 rng(cfg.seed);
  for (std::size_t bi = first; bi < model.encoder.blocks.size(); ++bi) {
    for (const auto& t : cfg.targets) {
      Linear* l = model.encoder.blocks[bi].linear_by_name(t);
      const std::string base = l->weight.name.substr(0, l->weight.name.size() - std::string(".weight").size());
      LoRAAdapter ad;
      ad.a = make_param(base + ".lora_a", cfg.rank, l->in_features());
      normal_fill(ad.a.value, cfg.init_std, rng);
      ad.b = make_param(base + ".lora_b", l->out_features(), cfg.rank);
      ad.a.is_lora = ad.b.is_lora = true;
      ad.scale = cfg.scaling / cfg.rank;
      l->lora = std::move(ad);
    }
  }
  model.lora = cfg;
  model.reindex();
}

void freeze_base(ModelBundle& model) {
  for (Parameter* p : model.parameters()) {
    const bool in_encoder = p->name.rfind("encoder.", 0) == 0;
    p->trainable = !in_encoder || p->is_lora;
  }
}

GradientBuffer GradientBuffer::zeros_like(const ModelBundle& model) {
  GradientBuffer g;
  for (const Parameter* p : model.parameters()) {
    g.grads.push_back(p->trainable ? Matrix::Zero(p->value.rows(), p->value.cols()) : Matrix());
  }
  return g;
}

void GradientBuffer::set_zero() {
  for (auto& g : grads) g.setZero();
}

// ---- forward / backward ----------------------------------------------------

Matrix patchify(const EncoderConfig& cfg, const ImageArray& image) {
  if (image.channels != cfg.channels || image.height != cfg.image_size || image.width != cfg.image_size) {
    throw ShapeError("expected image " + std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + ", got " + std::to_string(image.channels) + "x" +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const int p = cfg.patch_size;
  const int grid = cfg.grid();
  Matrix patches(cfg.patch_count(), cfg.patch_dim());
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int col = 0;
      for (int c = 0; c < cfg.channels; ++c) {
        for (int py = 0; py < p; ++py) {
          for (int px = 0; px < p; ++px) {
            patches(row, col++) = image.at(c, gy * p + py, gx * p + px);
          }
        }
      }
    }
  }
  return patches;
}

ForwardTrace forward_traced(const ModelBundle& model, const ImageArray& image) {
  const EncoderConfig& cfg = model.config;
  const int tokens = cfg.token_count();
  const int heads = cfg.heads;
  const int head_dim = cfg.embed_dim / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ForwardTrace t;
  t.patches = patchify(cfg, image);
  const Matrix embedded = linear_forward(model.encoder.patch_embed, t.patches, &t.patch_lora);

  Matrix x(tokens, cfg.embed_dim);
  x.row(0) = model.encoder.cls_token.value.row(0);
  x.bottomRows(tokens - 1) = embedded;
  x += model.encoder.pos_embed.value;

  t.blocks.resize(model.encoder.blocks.size());
  for (std::size_t bi = 0; bi < model.encoder.blocks.size(); ++bi) {
    const EncoderBlock& b = model.encoder.blocks[bi];
    BlockCache& c = t.blocks[bi];
    c.input = x;
    c.norm1_out = layer_norm_forward(b.norm1, x, c.norm1);
    c.q = linear_forward(b.query, c.norm1_out, &c.q_lora);
    c.k = linear_forward(b.key, c.norm1_out, &c.k_lora);
    c.v = linear_forward(b.value, c.norm1_out, &c.v_lora);

    c.context.resize(tokens, cfg.embed_dim);
    c.attention.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix& a = c.attention[static_cast<std::size_t>(h)];
      a.noalias() = attn_scale * (c.q.middleCols(h * head_dim, head_dim) * c.k.middleCols(h * head_dim, head_dim).transpose());
      softmax_rows(a);
      c.context.middleCols(h * head_dim, head_dim).noalias() = a * c.v.middleCols(h * head_dim, head_dim);
    }
    c.mid = x + linear_forward(b.out, c.context, &c.out_lora);

    c.norm2_out = layer_norm_forward(b.norm2, c.mid, c.norm2);
    c.fc1_pre = linear_forward(b.fc1, c.norm2_out, &c.fc1_lora);
    c.fc1_act = c.fc1_pre.unaryExpr([](double v) { return gelu(v); });
    c.output = c.mid + linear_forward(b.fc2, c.fc1_act, &c.fc2_lora);
    x = c.output;
  }

  t.final_out = layer_norm_forward(model.encoder.norm, x, t.final_norm);
  t.pooled = t.final_out.bottomRows(tokens - 1).colwise().mean();
  Matrix head_lora;
  const Matrix logits = linear_forward(model.head, t.pooled, &head_lora);
  t.logits = logits.row(0);
  if (head_lora.size() > 0) t.head_lora = head_lora.row(0);
  return t;
}

RowVector forward(const ModelBundle& model, const ImageArray& image) {
  return forward_traced(model, image).logits;
}

Matrix forward(const ModelBundle& model, std::span<const ImageArray> images) {
  Matrix logits(static_cast<Eigen::Index>(images.size()), model.class_count);
  for (std::size_t i = 0; i < images.size(); ++i) {
    logits.row(static_cast<Eigen::Index>(i)) = forward(model, images[i]);
  }
  return logits;
}

void backward(const ModelBundle& model, const ForwardTrace& t, const RowVector& d_logits,
              const BackwardRequest& request) {
  const EncoderConfig& cfg = model.config;
  const int tokens = cfg.token_count();
  const int heads = cfg.heads;
  const int head_dim = cfg.embed_dim / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  GradientBuffer* grads = request.grads;

  if (request.capture_block >= static_cast<int>(model.encoder.blocks.size())) {
    throw DomainError("capture_block out of range");
  }

  const Matrix pooled = t.pooled;
  const Matrix head_lora = t.head_lora;
  const Matrix d_pooled = linear_backward(model.head, pooled, head_lora, Matrix(d_logits), grads);

  Matrix d_final = Matrix::Zero(tokens, cfg.embed_dim);
  d_final.bottomRows(tokens - 1).rowwise() = d_pooled.row(0) / static_cast<double>(tokens - 1);
  Matrix dx = layer_norm_backward(model.encoder.norm, t.final_norm, d_final, grads);

  const bool stop_early = grads == nullptr && request.capture_block >= 0;
  for (int bi = static_cast<int>(model.encoder.blocks.size()) - 1; bi >= 0; --bi) {
    if (bi == request.capture_block && request.captured) {
      *request.captured = dx;
      if (stop_early) return;
    }
    const EncoderBlock& b = model.encoder.blocks[static_cast<std::size_t>(bi)];
    const BlockCache& c = t.blocks[static_cast<std::size_t>(bi)];

    const Matrix d_act = linear_backward(b.fc2, c.fc1_act, c.fc2_lora, dx, grads);
    const Matrix d_pre = d_act.array() * c.fc1_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    const Matrix d_norm2 = linear_backward(b.fc1, c.norm2_out, c.fc1_lora, d_pre, grads);
    const Matrix d_mid = dx + layer_norm_backward(b.norm2, c.norm2, d_norm2, grads);

    const Matrix d_context = linear_backward(b.out, c.context, c.out_lora, d_mid, grads);
    Matrix dq(tokens, cfg.embed_dim), dk(tokens, cfg.embed_dim), dv(tokens, cfg.embed_dim);
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = c.attention[static_cast<std::size_t>(h)];
      const auto cols = [&](const Matrix& m) { return m.middleCols(h * head_dim, head_dim); };
      const Matrix d_ctx_h = cols(d_context);
      const Matrix d_attn = d_ctx_h * cols(c.v).transpose();
      dv.middleCols(h * head_dim, head_dim).noalias() = a.transpose() * d_ctx_h;
      Matrix d_scores = a.array() * (d_attn.array().colwise() - (d_attn.array() * a.array()).rowwise().sum());
      d_scores *= attn_scale;
      dq.middleCols(h * head_dim, head_dim).noalias() = d_scores * cols(c.k);
      dk.middleCols(h * head_dim, head_dim).noalias() = d_scores.transpose() * cols(c.q);
    }
    Matrix d_norm1 = linear_backward(b.query, c.norm1_out, c.q_lora, dq, grads);
    d_norm1 += linear_backward(b.key, c.norm1_out, c.k_lora, dk, grads);
    d_norm1 += linear_backward(b.value, c.norm1_out, c.v_lora, dv, grads);
    dx = d_mid + layer_norm_backward(b.norm1, c.norm1, d_norm1, grads);
  }

  if (!grads) return;
  if (Matrix* g = grad_slot(grads, model.encoder.cls_token)) g->row(0) += dx.row(0);
  if (Matrix* g = grad_slot(grads, model.encoder.pos_embed)) *g += dx;
  const Matrix d_embedded = dx.bottomRows(tokens - 1);
  linear_backward(model.encoder.patch_embed, t.patches, t.patch_lora, d_embedded, grads, false);
}

}  // namespace fmue
