#include "fmue/explain.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "fmue/errors.hpp"
#include "fmue/evidential.hpp"

namespace fmue {

Heatmap grad_cam(const ModelBundle& model, const ImageArray& image, int target_class, int source_block) {
  const int depth = static_cast<int>(model.encoder.blocks.size());
  if (source_block == -1) source_block = depth - 1;
  if (source_block < 0 || source_block >= depth) {
    throw DomainError("grad_cam: block " + std::to_string(source_block) + " outside [0, " + std::to_string(depth) + ")");
  }
  if (target_class < 0 || target_class >= model.class_count) {
    throw DomainError("grad_cam: target class " + std::to_string(target_class) + " outside [0, K)");
  }

  const ForwardTrace trace = forward_traced(model, image);
  // d softplus(z) / dz = sigmoid(z)
  RowVector d_logits = RowVector::Zero(model.class_count);
  d_logits(target_class) = sigmoid(trace.logits(target_class));
  Matrix grad;
  backward(model, trace, d_logits, {nullptr, source_block, &grad});

  const Matrix& features = trace.blocks[static_cast<std::size_t>(source_block)].output;
  const Eigen::Index patches = features.rows() - 1;
  const RowVector weights = grad.bottomRows(patches).colwise().mean();
  const Eigen::VectorXd cam = (features.bottomRows(patches) * weights.transpose()).cwiseMax(0.0);

  const int grid = model.config.grid();
  ImageArray coarse(1, grid, grid);
  std::copy(cam.data(), cam.data() + cam.size(), coarse.data.begin());

  Heatmap h;
  h.target_class = target_class;
  h.source_block = source_block;
  h.raw_min = cam.minCoeff();
  h.raw_max = cam.maxCoeff();
  h.values = resize_bilinear(coarse, image.height, image.width);
  const auto [lo, hi] = std::minmax_element(h.values.data.begin(), h.values.data.end());
  const double min = *lo;
  const double range = *hi - *lo;
  for (double& v : h.values.data) v = range > 0.0 ? (v - min) / range : 0.0;
  return h;
}

void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& stem) {
  std::filesystem::path image_path = stem;
  image_path += ".pgm";
  write_pnm(image_path, heatmap.values);

  nlohmann::ordered_json j;
  j["target_class"] = heatmap.target_class;
  j["source_block"] = heatmap.source_block;
  j["target_scalar"] = "evidence";
  j["raw_min"] = heatmap.raw_min;
  j["raw_max"] = heatmap.raw_max;
  j["height"] = heatmap.values.height;
  j["width"] = heatmap.values.width;
  std::filesystem::path sidecar = stem;
  sidecar += ".json";
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << j.dump(2) << '\n';
}

}  // namespace fmue
