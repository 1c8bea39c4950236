#pragma once

// Single-file archive of named float64 arrays.
//
// Layout (all integers little-endian):
//   magic        8 bytes  "FMUECKPT"
//   manifest_len u64, followed by that many bytes of UTF-8 JSON:
//                {"format_version": 1, "encoder": {...}, "class_count": K,
//                 "lora": {...} | null}
//   entry_count  u64
//   entries      name_len u32, name bytes, dtype u8 (1 = float64),
//                ndim u32, dims u64[ndim], raw row-major data.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fmue/model.hpp"

namespace fmue {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedArray {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct CheckpointArchive {
  std::string manifest_json;
  std::map<std::string, NamedArray> arrays;
};

void write_archive(const std::filesystem::path& path, const CheckpointArchive& archive);
CheckpointArchive read_archive(const std::filesystem::path& path);

// Whole-model save / restore (encoder, adapters, head and trainability flags).
void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

// Encoder-only archive (no head, no adapters) for use as a pretrained backbone.
// The manifest carries "class_count": null.
void save_encoder(const ModelBundle& model, const std::filesystem::path& path);

struct LoadReport {
  std::vector<std::string> loaded;
  // Names unknown to the model.
  std::vector<std::string> skipped;
  // Known names that are deliberately not loaded (head, LoRA factors).
  std::vector<std::string> retained;
};

// Copies encoder arrays whose names match; the head is left untouched.
// Arrays under "decoder." are ignored, other unknown names are reported as
// skipped, and a matched name with a different shape (head included) throws.
LoadReport load_pretrained_encoder(ModelBundle& model, const std::filesystem::path& path);

}  // namespace fmue
