#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace fmue {

// Planar (CHW) image of doubles.
struct ImageArray {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ImageArray() = default;
  ImageArray(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const ImageArray&) const = default;
};

// Binary or ASCII PGM/PPM (P2, P3, P5, P6), values scaled to [0, 1].
ImageArray read_pnm(const std::filesystem::path& path);

// 8-bit binary PGM (1 channel) or PPM (3 channels); values clamped to [0, 1].
void write_pnm(const std::filesystem::path& path, const ImageArray& image);

// Bilinear resampling with half-pixel centres and edge clamping.
ImageArray resize_bilinear(const ImageArray& image, int out_height, int out_width);

struct PreprocessConfig {
  int image_size = 64;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.5, 0.5, 0.5};
};

// Resize to image_size^2, replicate grayscale to three channels, then
// normalise each channel as (v - mean) / stddev. Input values are in [0, 1].
ImageArray preprocess(const ImageArray& image, const PreprocessConfig& cfg);

// Decodes and preprocesses; IoError names the path when decoding fails.
ImageArray preprocess_file(const std::filesystem::path& path, const PreprocessConfig& cfg);

}  // namespace fmue
