#include "fmue/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

constexpr double kBackground = 0.08;
constexpr double kFluid = 0.04;

struct PatientGeometry {
  double top;
  double thickness;
  double tilt;
  double sag;
  double centre;
  double half_width;
  double amplitude;
  double bright;
  double dark;
  // Sub-clinical change on otherwise undistorted scans: kind 0..2, strength in [0.2, 0.45].
  int mild_kind;
  double mild;
};

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

PatientGeometry sample_patient(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PatientGeometry g;
  g.top = 0.28 + 0.03 * u(rng);
  g.thickness = 0.40 + 0.04 * u(rng);
  g.tilt = 0.06 * u(rng);
  g.sag = 0.04 + 0.03 * u(rng);
  g.centre = 0.5 + 0.06 * u(rng);
  g.half_width = 0.20 + 0.02 * u(rng);
  g.amplitude = 0.20 + 0.02 * u(rng);
  g.bright = 0.85 + 0.05 * u(rng);
  g.dark = 0.35 + 0.05 * u(rng);
  g.mild_kind = static_cast<int>(std::floor(1.5 * (u(rng) + 1.0))) % 3;
  g.mild = 0.325 + 0.125 * u(rng);
  return g;
}

double bump(double xn, double centre, double half_width) {
  const double t = (xn - centre) / half_width;
  if (std::abs(t) >= 1.0) return 0.0;
  const double c = std::cos(0.5 * std::numbers::pi * t);
  return c * c;
}

void gaussian_blur(ImageArray& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  ImageArray tmp = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * img.at(0, y, std::clamp(x + i, 0, img.width - 1));
      }
      tmp.at(0, y, x) = acc;
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(0, std::clamp(y + i, 0, img.height - 1), x);
      }
      img.at(0, y, x) = acc;
    }
  }
}

// Renders one scan; returns the distortion box when the pattern has one.
ImageArray render(const PatternDef& def, const PatientGeometry& g, double jitter_y, double jitter_x, int size,
                  RegionBox& region) {
  ImageArray img(1, size, size, kBackground);
  const int layers = std::max(def.layer_count, 2);
  const double centre = g.centre + jitter_x;
  const double half_width = def.distortion == Distortion::Detachment ? 1.4 * g.half_width : g.half_width;
  const double rpe = g.thickness / layers;
  const double gap = 0.12;
  const double mid_gray = 0.5 * (g.bright + g.dark);

  double region_top = 1.0;
  double region_bottom = 0.0;
  for (int x = 0; x < size; ++x) {
    const double xn = (x + 0.5) / size;
    const double dx = xn - 0.5;
    const double top = g.top + jitter_y + g.tilt * dx + g.sag * 4.0 * dx * dx;
    const double bottom = top + g.thickness;
    const double s = bump(xn, centre, half_width);
    // Three narrow bumps spread over the distortion span.
    const double small_bumps = bump(xn, centre - 0.6 * half_width, 0.25 * half_width) +
                               bump(xn, centre, 0.25 * half_width) +
                               bump(xn, centre + 0.6 * half_width, 0.25 * half_width);

    // Neural stack spans [stack_top, stack_bottom); RPE is [bottom - rpe, bottom).
    double bottom_shift = 0.0;
    double stack_top = top;
    double stack_bottom = bottom - rpe;
    double split_top = -1.0;
    double split_bottom = -1.0;
    switch (def.distortion) {
      case Distortion::None:
        if (g.mild_kind == 0) {
          stack_top -= g.mild * g.amplitude * s;
        } else if (g.mild_kind == 1) {
          stack_top += g.mild * 0.7 * s * (stack_bottom - stack_top);
        } else {
          const double split = top + 0.35 * (stack_bottom - top);
          stack_top -= g.mild * gap * std::min(1.0, 4.0 * s);
          split_top = split - g.mild * gap * std::min(1.0, 4.0 * s);
          split_bottom = split;
        }
        break;
      case Distortion::Dome:
        stack_top -= g.amplitude * s;
        stack_bottom -= g.amplitude * s;
        break;
      case Distortion::Detachment: {
        const double plateau = std::min(1.0, 4.0 * s);
        const double split = top + 0.35 * (stack_bottom - top);
        stack_top -= gap * plateau;
        split_top = split - gap * plateau;
        split_bottom = split;
        break;
      }
      case Distortion::Thinning:
        stack_top += 0.7 * s * (stack_bottom - stack_top);
        break;
      case Distortion::Drusen:
        bottom_shift = 0.06 * small_bumps;
        stack_bottom -= bottom_shift;
        break;
      case Distortion::Cysts:
        stack_top -= 0.05 * s;
        break;
      case Distortion::Membrane:
      case Distortion::Shadow:
        break;
    }
    if (s > 0.0) {
      region_top = std::min(region_top, stack_top);
      region_bottom = std::max(region_bottom, bottom);
    }

    for (int y = 0; y < size; ++y) {
      const double yn = (y + 0.5) / size;
      double v = kBackground;
      if (yn >= bottom - rpe - bottom_shift && yn < bottom - bottom_shift) {
        v = g.bright;
      } else if (yn >= stack_top && yn < stack_bottom) {
        if (split_top >= 0.0 && yn >= split_top && yn < split_bottom) {
          v = kFluid;
        } else {
          // Map back to the undisplaced coordinate so band boundaries follow the layers.
          double pos = yn - stack_top;
          double span = stack_bottom - stack_top;
          if (split_top >= 0.0) {
            pos = (yn < split_top ? yn + (split_bottom - split_top) : yn) - top;
            span = stack_bottom - top;
          }
          const double frac = pos / span;
          const int band = std::clamp(static_cast<int>(frac * (layers - 1)), 0, layers - 2);
          v = band % 2 == 0 ? g.bright : g.dark;
        }
      } else if (def.distortion == Distortion::Dome && yn >= stack_bottom && yn < bottom - rpe) {
        v = kFluid;
      }
      switch (def.distortion) {
        case Distortion::Cysts: {
          // Dark ovals inside the neural stack.
          const double mid = 0.5 * (stack_top + stack_bottom);
          for (double cx : {-0.5, 0.0, 0.5}) {
            const double ex = (xn - centre - cx * half_width) / (0.22 * half_width);
            const double ey = (yn - mid) / (0.06 + 0.03 * std::abs(cx));
            if (ex * ex + ey * ey < 1.0) v = kFluid;
          }
          break;
        }
        case Distortion::Membrane: {
          // Wrinkled bright line floating above the inner surface.
          const double line = stack_top - 0.05 - 0.03 * s * std::sin(6.0 * std::numbers::pi * (xn - centre) / half_width);
          if (s > 0.0 && std::abs(yn - line) < 0.012) v = g.bright;
          break;
        }
        case Distortion::Shadow:
          if (std::abs(xn - centre) < 0.3 * half_width && yn > stack_top) v = kBackground + 0.25 * (v - kBackground);
          break;
        default:
          break;
      }
      img.at(0, y, x) = mid_gray + def.contrast * (v - mid_gray);
    }
  }

  if (def.distortion != Distortion::None) {
    region = RegionBox{std::clamp(centre - half_width, 0.0, 1.0), std::clamp(region_top, 0.0, 1.0),
                       std::clamp(centre + half_width, 0.0, 1.0), std::clamp(region_bottom, 0.0, 1.0)};
  }
  if (def.blur > 0.0) gaussian_blur(img, def.blur);
  return img;
}

std::vector<SyntheticImage> generate_group(const PatternDef& def, bool ood, int images, int patients, int size,
                                           double noise_sigma, std::uint64_t seed, std::uint64_t group) {
  std::vector<PatientGeometry> geometry;
  for (int p = 0; p < patients; ++p) {
    auto rng = seeded(seed, group, static_cast<std::uint64_t>(p));
    geometry.push_back(sample_patient(rng));
  }
  std::vector<SyntheticImage> out;
  std::vector<int> per_patient(static_cast<std::size_t>(patients), 0);
  for (int i = 0; i < images; ++i) {
    const int p = i % patients;
    auto rng = seeded(seed, group, 0x10000ULL + static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double jy = 0.02 * u(rng);
    const double jx = 0.02 * u(rng);

    SyntheticImage s;
    s.image = render(def, geometry[static_cast<std::size_t>(p)], jy, jx, size, s.region);
    s.has_region = def.distortion != Distortion::None;
    if (noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, noise_sigma);
      for (auto& v : s.image.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
    }
    // Stored images are 8-bit; quantise here so in-memory and on-disk data agree.
    for (auto& v : s.image.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;

    const std::string patient = def.name + "_p" + std::to_string(p);
    s.record.image_path = "images/" + def.name + "/" + patient + "_" +
                          std::to_string(per_patient[static_cast<std::size_t>(p)]++) + ".pgm";
    s.record.label = ood ? "ood:" + def.name : def.name;
    s.record.patient_id = patient;
    s.record.dataset_tag = ood ? "synthetic_ood" : "synthetic";
    s.record.device_tag = "sim";
    out.push_back(std::move(s));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

PatternDef parse_pattern(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(trim(part));
  if (parts.size() < 3 || parts.size() > 5) {
    throw ConfigError("pattern '" + value + "' must be name:layers:distortion[:contrast[:blur]]");
  }
  PatternDef d;
  d.name = parts[0];
  try {
    d.layer_count = std::stoi(parts[1]);
    d.distortion = parse_distortion(parts[2]);
    if (parts.size() > 3) d.contrast = std::stod(parts[3]);
    if (parts.size() > 4) d.blur = std::stod(parts[4]);
  } catch (const std::logic_error&) {
    throw ConfigError("pattern '" + value + "' has a non-numeric field");
  }
  return d;
}

}  // namespace

const char* distortion_name(Distortion d) {
  switch (d) {
    case Distortion::None:
      return "none";
    case Distortion::Dome:
      return "dome";
    case Distortion::Detachment:
      return "detachment";
    case Distortion::Thinning:
      return "thinning";
    case Distortion::Drusen:
      return "drusen";
    case Distortion::Cysts:
      return "cysts";
    case Distortion::Membrane:
      return "membrane";
    case Distortion::Shadow:
      return "shadow";
  }
  return "?";
}

Distortion parse_distortion(const std::string& name) {
  if (name == "none") return Distortion::None;
  if (name == "dome") return Distortion::Dome;
  if (name == "detachment") return Distortion::Detachment;
  if (name == "thinning") return Distortion::Thinning;
  if (name == "drusen") return Distortion::Drusen;
  if (name == "cysts") return Distortion::Cysts;
  if (name == "membrane") return Distortion::Membrane;
  if (name == "shadow") return Distortion::Shadow;
  throw ConfigError("unknown distortion '" + name + "'");
}

bool PatternDef::same_pattern(const PatternDef& o) const {
  return layer_count == o.layer_count && distortion == o.distortion && contrast == o.contrast && blur == o.blur;
}

SyntheticSpec SyntheticSpec::default_spec() {
  SyntheticSpec s;
  s.class_defs = {{"normal", 5, Distortion::None, 1.0, 0.0},
                  {"dome", 5, Distortion::Dome, 1.0, 0.0},
                  {"detachment", 5, Distortion::Detachment, 1.0, 0.0},
                  {"thinning", 5, Distortion::Thinning, 1.0, 0.0}};
  s.ood_defs = {{"dense", 14, Distortion::None, 1.0, 0.0}, {"lowquality", 3, Distortion::None, 0.3, 2.0}};
  return s;
}

void SyntheticSpec::validate() const {
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (class_defs.size() < 2) throw ConfigError("at least two class patterns are required");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (samples_per_class < 1 || patients_per_class < 1) throw ConfigError("sample and patient counts must be >= 1");
  if (patients_per_class > samples_per_class) throw ConfigError("patients_per_class exceeds samples_per_class");
  if (ood_samples_per_def < 0) throw ConfigError("ood_samples_per_def must be >= 0");
  auto check = [](const PatternDef& d) {
    if (d.name.empty() || d.name.find_first_of(",/:\"") != std::string::npos) {
      throw ConfigError("invalid pattern name '" + d.name + "'");
    }
    if (d.layer_count < 2) throw ConfigError("pattern '" + d.name + "' needs at least two layers");
    if (!(d.contrast > 0.0) || d.blur < 0.0) throw ConfigError("pattern '" + d.name + "' has invalid contrast/blur");
  };
  for (std::size_t i = 0; i < class_defs.size(); ++i) {
    check(class_defs[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (class_defs[i].name == class_defs[j].name || class_defs[i].same_pattern(class_defs[j])) {
        throw ConfigError("class patterns '" + class_defs[j].name + "' and '" + class_defs[i].name +
                          "' are not distinct");
      }
    }
  }
  for (const auto& o : ood_defs) {
    check(o);
    for (const auto& c : class_defs) {
      if (o.name == c.name || o.same_pattern(c)) {
        throw ConfigError("OOD pattern '" + o.name + "' overlaps class pattern '" + c.name + "'");
      }
    }
  }
}

SyntheticDataset generate_synthetic_images(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset ds;
  std::uint64_t group = 0;
  for (const auto& def : spec.class_defs) {
    ds.class_vocabulary.push_back(def.name);
    auto imgs = generate_group(def, false, spec.samples_per_class, spec.patients_per_class, spec.image_size,
                               spec.noise_sigma, seed, group++);
    std::move(imgs.begin(), imgs.end(), std::back_inserter(ds.in_distribution));
  }
  const int ood_images = spec.ood_samples_per_def > 0 ? spec.ood_samples_per_def : spec.samples_per_class;
  for (const auto& def : spec.ood_defs) {
    auto imgs = generate_group(def, true, ood_images, std::min(spec.patients_per_class, ood_images), spec.image_size,
                               spec.noise_sigma, seed, 1000 + group++);
    std::move(imgs.begin(), imgs.end(), std::back_inserter(ds.ood));
  }
  return ds;
}

SyntheticOutput generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  const SyntheticDataset ds = generate_synthetic_images(spec, seed);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  SyntheticOutput out;
  out.manifest.class_vocabulary = ds.class_vocabulary;
  out.manifest.base_dir = out_dir;
  out.ood_manifest.class_vocabulary = ds.class_vocabulary;
  out.ood_manifest.base_dir = out_dir;

  std::string regions = "image_path,x0,y0,x1,y1\n";
  auto emit = [&](const SyntheticImage& s, DatasetManifest& m) {
    const auto path = out_dir / s.record.image_path;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
    write_pnm(path, s.image);
    m.records.push_back(s.record);
    if (s.has_region) {
      std::ostringstream line;
      line.precision(17);
      line << s.record.image_path << ',' << s.region.x0 << ',' << s.region.y0 << ',' << s.region.x1 << ','
           << s.region.y1 << '\n';
      regions += line.str();
    }
  };
  for (const auto& s : ds.in_distribution) emit(s, out.manifest);
  for (const auto& s : ds.ood) emit(s, out.ood_manifest);

  write_manifest(out_dir / "manifest.csv", out.manifest);
  write_manifest(out_dir / "ood_manifest.csv", out.ood_manifest);
  write_vocabulary(out_dir / "classes.txt", ds.class_vocabulary);
  std::ofstream(out_dir / "regions.csv", std::ios::binary) << regions;
  return out;
}

std::vector<std::pair<std::string, RegionBox>> read_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<std::string, RegionBox>> out;
  std::string line;
  std::getline(in, line);
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string path_field, f;
    std::getline(ss, path_field, ',');
    RegionBox b;
    double* dst[] = {&b.x0, &b.y0, &b.x1, &b.y1};
    for (double* d : dst) {
      if (!std::getline(ss, f, ',')) throw ParseError("regions file: missing column", row);
      *d = std::stod(f);
    }
    out.emplace_back(path_field, b);
  }
  return out;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "image_size") {
        spec.image_size = std::stoi(value);
      } else if (key == "noise_sigma") {
        spec.noise_sigma = std::stod(value);
      } else if (key == "samples_per_class") {
        spec.samples_per_class = std::stoi(value);
      } else if (key == "patients_per_class") {
        spec.patients_per_class = std::stoi(value);
      } else if (key == "ood_samples_per_def") {
        spec.ood_samples_per_def = std::stoi(value);
      } else if (key == "class") {
        spec.class_defs.push_back(parse_pattern(value));
      } else if (key == "ood") {
        spec.ood_defs.push_back(parse_pattern(value));
      } else {
        throw ConfigError("unknown synthetic spec key '" + key + "'");
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("bad value for '" + key + "': " + value);
    }
  }
  if (spec.class_defs.empty()) {
    const auto defaults = SyntheticSpec::default_spec();
    spec.class_defs = defaults.class_defs;
    if (spec.ood_defs.empty()) spec.ood_defs = defaults.ood_defs;
  }
  spec.validate();
  return spec;
}

}  // namespace fmue
