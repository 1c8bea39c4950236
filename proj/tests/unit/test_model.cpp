#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "fmue/checkpoint.hpp"
#include "fmue/errors.hpp"
#include "fmue/model.hpp"
#include "fmue/trainer.hpp"

using namespace fmue;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  return c;
}

std::vector<ImageArray> random_images(const EncoderConfig& c, int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<ImageArray> out;
  for (int i = 0; i < n; ++i) {
    ImageArray im(3, c.image_size, c.image_size);
    for (double& v : im.data) v = g(rng);
    out.push_back(im);
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fmue_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("shapes and config checks") {
  EncoderConfig big;
  big.image_size = 224;
  big.patch_size = 16;
  CHECK(big.patch_count() == 196);
  CHECK(big.token_count() == 197);

  EncoderConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  auto m = build_model(c, 4, 1);
  auto logits = forward(m, random_images(c, 2, 1));
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 4);

  EncoderConfig bad = c;
  bad.patch_size = 7;
  CHECK_THROWS_AS(build_model(bad, 4), ConfigError);
  bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(build_model(bad, 4), ConfigError);

  auto wrong = random_images(tiny(), 1, 2);
  CHECK_THROWS_AS(forward(m, wrong[0]), ShapeError);
}

TEST_CASE("same seed, same weights") {
  auto a = build_model(tiny(), 3, 42), b = build_model(tiny(), 3, 42), c = build_model(tiny(), 3, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && pa[i]->value == pb[i]->value;
    any_diff = any_diff || pa[i]->value != pc[i]->value;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("fresh model is nearly vacuous") {
  auto m = build_model(tiny(), 4, 0);
  auto preds = predict_dataset(m, random_images(tiny(), 4, 3));
  for (auto& p : preds) CHECK(p.opinion.uncertainty > 0.85);
}

TEST_CASE("LoRA injection is a no-op at start") {
  EncoderConfig c;  // toy default 64/8/64/6/4
  auto m = build_model(c, 4, 5);
  auto imgs = random_images(c, 3, 4);
  const Matrix before = forward(m, imgs);
  inject_lora(m, LoRAConfig{});
  const Matrix after = forward(m, imgs);
  CHECK((after - before).cwiseAbs().maxCoeff() <= 1e-6);

  int pairs = 0;
  for (auto* p : m.parameters())
    if (p->is_lora && p->name.ends_with("lora_a")) ++pairs;
  CHECK(pairs == 12);

  // One 64x64 map with rank 4 adds 4 * (64 + 64) scalars.
  auto single = build_model(c, 4, 5);
  LoRAConfig one;
  one.targets = {"query"};
  one.adapt_all_blocks = false;
  const auto base = single.parameter_count();
  inject_lora(single, one);
  CHECK(single.parameter_count() - base == 512);

  freeze_base(m);
  CHECK(static_cast<double>(m.trainable_parameter_count()) < 0.1 * m.parameter_count());

  LoRAConfig bogus;
  bogus.targets = {"gate"};
  CHECK_THROWS_AS(inject_lora(m, bogus), ConfigError);
}

TEST_CASE("freezing leaves exactly adapters and head trainable") {
  auto m = build_model(tiny(), 3, 1);
  inject_lora(m, LoRAConfig{});
  freeze_base(m);
  for (const auto& name : m.trainable_names()) {
    const bool ok = name.starts_with("head.") || name.ends_with(".lora_a") || name.ends_with(".lora_b");
    CHECK_MESSAGE(ok, name);
  }
  std::set<std::string> lora_and_head;
  for (auto* p : m.parameters())
    if (p->is_lora || p->name.starts_with("head.")) lora_and_head.insert(p->name);
  auto names = m.trainable_names();
  CHECK(std::set<std::string>(names.begin(), names.end()) == lora_and_head);

  auto head_only = build_model(tiny(), 3, 1);
  freeze_base(head_only);
  auto hn = head_only.trainable_names();
  CHECK(std::set<std::string>(hn.begin(), hn.end()) == std::set<std::string>{"head.weight", "head.bias"});

  auto g = GradientBuffer::zeros_like(m);
  for (auto* p : m.parameters())
    if (!p->trainable) CHECK(g.grads[p->slot].size() == 0);
}

TEST_CASE("frozen parameters survive five steps") {
  auto m = build_model(tiny(), 2, 3);
  inject_lora(m, LoRAConfig{});
  freeze_base(m);
  LabeledImages set;
  set.images = random_images(tiny(), 5, 8);
  set.labels = {0, 1, 0, 1, 1};
  set.paths.assign(5, "x");
  const auto digest = frozen_parameter_digest(m);
  std::vector<Matrix> frozen;
  for (auto* p : m.parameters())
    if (!p->trainable) frozen.push_back(p->value);
  const Matrix lora_b0 = m.encoder.blocks[0].query.lora->b.value;

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;  // five optimiser steps
  cfg.learning_rate = 1e-2;
  auto report = train(m, set, set, cfg);
  CHECK(report.frozen_digest == digest);
  CHECK(frozen_parameter_digest(m) == digest);
  std::size_t i = 0;
  for (auto* p : m.parameters())
    if (!p->trainable) CHECK(p->value == frozen[i++]);
  CHECK(m.encoder.blocks[0].query.lora->b.value != lora_b0);
}

TEST_CASE("scaling and B trade off exactly") {
  auto m = build_model(tiny(), 3, 2);
  inject_lora(m, LoRAConfig{});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto* p : m.parameters())
    if (p->is_lora && p->name.ends_with("lora_b"))
      for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = g(rng);
  auto imgs = random_images(tiny(), 2, 6);
  const Matrix ref = forward(m, imgs);
  for (auto& b : m.encoder.blocks)
    for (Linear* l : {&b.query, &b.value}) {
      l->lora->scale *= 2.0;
      l->lora->b.value *= 0.5;
    }
  CHECK((forward(m, imgs) - ref).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch("ckpt");
  auto m = build_model(tiny(), 3, 9);
  inject_lora(m, LoRAConfig{});
  freeze_base(m);
  m.head.bias.value(0, 1) = 0.25;
  save_checkpoint(m, dir / "m.fmue");
  auto back = load_checkpoint(dir / "m.fmue");
  auto imgs = random_images(tiny(), 3, 10);
  CHECK(forward(back, imgs) == forward(m, imgs));
  CHECK(back.trainable_names() == m.trainable_names());
  CHECK(back.lora.has_value());

  save_encoder(m, dir / "enc.fmue");
  CHECK_THROWS_AS(load_checkpoint(dir / "enc.fmue"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.fmue"), IoError);
}

TEST_CASE("pretrained encoder loading") {
  const fs::path dir = scratch("pre");
  auto src = build_model(tiny(), 3, 11);
  save_checkpoint(src, dir / "src.fmue");

  auto dst = build_model(tiny(), 3, 12);
  const Matrix head_before = dst.head.weight.value;
  auto rep = load_pretrained_encoder(dst, dir / "src.fmue");
  std::size_t encoder_params = 0;
  for (auto* p : dst.parameters()) encoder_params += p->name.starts_with("encoder.");
  CHECK(rep.loaded.size() == encoder_params);
  CHECK(rep.skipped.empty());
  CHECK(dst.head.weight.value == head_before);
  CHECK(dst.encoder.pos_embed.value == src.encoder.pos_embed.value);

  auto archive = read_archive(dir / "src.fmue");
  archive.arrays["decoder.blocks.0.weight"] = NamedArray{{2, 2}, {1, 2, 3, 4}};
  archive.arrays["projector.weight"] = NamedArray{{1, 1}, {1}};
  write_archive(dir / "extra.fmue", archive);
  auto rep2 = load_pretrained_encoder(dst, dir / "extra.fmue");
  CHECK(rep2.loaded.size() == rep.loaded.size());
  CHECK(rep2.skipped == std::vector<std::string>{"projector.weight"});

  // Transposed head: the error names the array.
  auto& hw = archive.arrays["head.weight"];
  std::swap(hw.shape[0], hw.shape[1]);
  write_archive(dir / "bad.fmue", archive);
  try {
    load_pretrained_encoder(dst, dir / "bad.fmue");
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
  }
}
