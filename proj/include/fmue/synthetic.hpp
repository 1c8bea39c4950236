#pragma once

// Retina-like synthetic B-scans: horizontal bright/dark layer bands with a
// class-specific local distortion, plus Gaussian noise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fmue/data.hpp"
#include "fmue/image.hpp"

namespace fmue {

// The last four kinds are meant for out-of-distribution patterns.
enum class Distortion { None, Dome, Detachment, Thinning, Drusen, Cysts, Membrane, Shadow };
const char* distortion_name(Distortion d);
Distortion parse_distortion(const std::string& name);

struct PatternDef {
  std::string name;
  int layer_count = 5;
  Distortion distortion = Distortion::None;
  // Multiplies the band contrast around mid-gray; < 1 mimics low-quality scans.
  double contrast = 1.0;
  // Gaussian blur radius in pixels applied before noise (0 = none).
  double blur = 0.0;

  bool same_pattern(const PatternDef& o) const;
};

struct SyntheticSpec {
  int image_size = 64;
  std::vector<PatternDef> class_defs;
  std::vector<PatternDef> ood_defs;
  double noise_sigma = 0.05;
  int samples_per_class = 50;
  int patients_per_class = 10;
  // Images per OOD pattern; 0 means samples_per_class.
  int ood_samples_per_def = 0;

  // Normal, dome (serous-detachment analogue), detachment, thinning; two OOD sets.
  static SyntheticSpec default_spec();
  void validate() const;
};

// Normalised [0,1] box around the distortion of one image.
struct RegionBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct SyntheticImage {
  SampleRecord record;
  ImageArray image;  // 1 x size x size, values in [0, 1]
  bool has_region = false;
  RegionBox region;
};

struct SyntheticDataset {
  std::vector<std::string> class_vocabulary;
  std::vector<SyntheticImage> in_distribution;
  std::vector<SyntheticImage> ood;
};

SyntheticDataset generate_synthetic_images(const SyntheticSpec& spec, std::uint64_t seed);

struct SyntheticOutput {
  DatasetManifest manifest;      // in-distribution records
  DatasetManifest ood_manifest;  // OOD records, same vocabulary
};

// Writes images/<pattern>/<patient>_<n>.pgm, manifest.csv, ood_manifest.csv,
// classes.txt and regions.csv under out_dir.
SyntheticOutput generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

// Reads regions.csv written by generate_synthetic: image_path -> box.
std::vector<std::pair<std::string, RegionBox>> read_regions(const std::filesystem::path& path);

// key=value text: image_size, noise_sigma, samples_per_class,
// patients_per_class, ood_samples_per_def, and repeated
// class=name:layers:distortion[:contrast[:blur]] / ood=... entries.
SyntheticSpec parse_synthetic_spec(const std::string& text);

}  // namespace fmue
