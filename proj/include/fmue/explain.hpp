#pragma once

#include <filesystem>

#include "fmue/image.hpp"
#include "fmue/model.hpp"

namespace fmue {

struct Heatmap {
  ImageArray values;  // 1 x H x W, in [0, 1]
  int target_class = 0;
  int source_block = 0;
  // Range of the rectified map before min-max scaling.
  double raw_min = 0.0;
  double raw_max = 0.0;
};

// Grad-CAM on the token features output by `source_block` (-1 = last block),
// driven by the evidence of `target_class`.
Heatmap grad_cam(const ModelBundle& model, const ImageArray& image, int target_class, int source_block = -1);

// Writes <stem>.pgm and a JSON sidecar <stem>.json.
void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& stem);

}  // namespace fmue
