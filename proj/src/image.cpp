#include "fmue/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

class PnmReader {
 public:
  explicit PnmReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw IoError("expected integer");
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1L << 30)) throw IoError("integer too large");
      ++pos_;
    }
    return v;
  }

  std::string magic() {
    if (bytes_.size() < 2) throw IoError("file too short");
    pos_ = 2;
    return std::string(bytes_.begin(), bytes_.begin() + 2);
  }

  // Exactly one whitespace byte separates the header from binary data.
  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw IoError("malformed header");
    ++pos_;
  }

  unsigned read_binary_sample(bool wide) {
    const std::size_t need = wide ? 2 : 1;
    if (pos_ + need > bytes_.size()) throw IoError("truncated pixel data");
    unsigned v = bytes_[pos_++];
    if (wide) v = (v << 8) | bytes_[pos_++];
    return v;
  }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

ImageArray read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open image: " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    PnmReader reader(std::move(bytes));
    const std::string magic = reader.magic();
    int channels = 0;
    bool binary = false;
    if (magic == "P2") {
      channels = 1;
    } else if (magic == "P5") {
      channels = 1;
      binary = true;
    } else if (magic == "P3") {
      channels = 3;
    } else if (magic == "P6") {
      channels = 3;
      binary = true;
    } else {
      throw IoError("unsupported format '" + magic + "'");
    }
    const long width = reader.read_int();
    const long height = reader.read_int();
    const long maxval = reader.read_int();
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
      throw IoError("invalid header values");
    }
    if (binary) reader.skip_single_space();

    ImageArray img(channels, static_cast<int>(height), static_cast<int>(width));
    const double scale = 1.0 / static_cast<double>(maxval);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < channels; ++c) {
          const long v = binary ? static_cast<long>(reader.read_binary_sample(maxval > 255)) : reader.read_int();
          if (v > maxval) throw IoError("sample exceeds maxval");
          img.at(c, y, x) = static_cast<double>(v) * scale;
        }
      }
    }
    return img;
  } catch (const IoError& e) {
    throw IoError("cannot decode image " + path.string() + ": " + e.what());
  }
}

void write_pnm(const std::filesystem::path& path, const ImageArray& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("write_pnm: expected 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write image: " + path.string());
  }
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) {
    throw IoError("failed writing image: " + path.string());
  }
}

ImageArray resize_bilinear(const ImageArray& image, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0 || image.height <= 0 || image.width <= 0) {
    throw ShapeError("resize_bilinear: sizes must be positive");
  }
  struct Tap {
    int lo;
    int hi;
    double frac;
  };
  auto taps = [](int in_size, int out_size) {
    std::vector<Tap> t(static_cast<std::size_t>(out_size));
    const double ratio = static_cast<double>(in_size) / out_size;
    for (int i = 0; i < out_size; ++i) {
      const double src = std::max((i + 0.5) * ratio - 0.5, 0.0);
      const int lo = std::min(static_cast<int>(std::floor(src)), in_size - 1);
      const int hi = std::min(lo + 1, in_size - 1);
      t[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(image.height, out_height);
  const auto tx = taps(image.width, out_width);

  ImageArray out(image.channels, out_height, out_width);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < out_height; ++y) {
      const Tap& vy = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_width; ++x) {
        const Tap& vx = tx[static_cast<std::size_t>(x)];
        const double top = image.at(c, vy.lo, vx.lo) * (1.0 - vx.frac) + image.at(c, vy.lo, vx.hi) * vx.frac;
        const double bottom = image.at(c, vy.hi, vx.lo) * (1.0 - vx.frac) + image.at(c, vy.hi, vx.hi) * vx.frac;
        out.at(c, y, x) = top * (1.0 - vy.frac) + bottom * vy.frac;
      }
    }
  }
  return out;
}

ImageArray preprocess(const ImageArray& image, const PreprocessConfig& cfg) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("preprocess: expected a grayscale or RGB image");
  }
  const ImageArray resized = (image.height == cfg.image_size && image.width == cfg.image_size)
                                 ? image
                                 : resize_bilinear(image, cfg.image_size, cfg.image_size);
  ImageArray out(3, cfg.image_size, cfg.image_size);
  for (int c = 0; c < 3; ++c) {
    const int src_c = resized.channels == 1 ? 0 : c;
    for (int y = 0; y < cfg.image_size; ++y) {
      for (int x = 0; x < cfg.image_size; ++x) {
        out.at(c, y, x) = (resized.at(src_c, y, x) - cfg.mean[c]) / cfg.stddev[c];
      }
    }
  }
  return out;
}

ImageArray preprocess_file(const std::filesystem::path& path, const PreprocessConfig& cfg) {
  return preprocess(read_pnm(path), cfg);
}

}  // namespace fmue
