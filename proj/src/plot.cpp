#include "fmue/plot.hpp"

#include <algorithm>
#include <cmath>

#include "fmue/errors.hpp"

namespace fmue {

namespace {

constexpr int kMargin = 30;

struct Canvas {
  ImageArray img;
  const PlotFrame& f;

  explicit Canvas(const PlotFrame& frame) : img(3, frame.height, frame.width, 1.0), f(frame) {}

  void set(int x, int y, const Color& c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
  }
  double px(double x) const {
    return kMargin + (x - f.x_min) / (f.x_max - f.x_min) * (f.width - 2 * kMargin);
  }
  double py(double y) const {
    return f.height - kMargin - (y - f.y_min) / (f.y_max - f.y_min) * (f.height - 2 * kMargin);
  }
  void line(double x0, double y0, double x1, double y1, const Color& c) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      set(x, y, c);
      set(x, y + 1, c);
    }
  }
  void axes() {
    const Color grid{0.88, 0.88, 0.88};
    const Color axis{0.2, 0.2, 0.2};
    for (int i = 0; i <= f.x_ticks; ++i) {
      const double x = px(f.x_min + (f.x_max - f.x_min) * i / f.x_ticks);
      line(x, py(f.y_min), x, py(f.y_max), grid);
    }
    for (int i = 0; i <= f.y_ticks; ++i) {
      const double y = py(f.y_min + (f.y_max - f.y_min) * i / f.y_ticks);
      line(px(f.x_min), y, px(f.x_max), y, grid);
    }
    line(px(f.x_min), py(f.y_min), px(f.x_max), py(f.y_min), axis);
    line(px(f.x_min), py(f.y_min), px(f.x_min), py(f.y_max), axis);
  }
};

void check_frame(const PlotFrame& f) {
  if (f.width <= 2 * kMargin || f.height <= 2 * kMargin) throw DomainError("plot: canvas too small");
  if (!(f.x_max > f.x_min) || !(f.y_max > f.y_min)) throw DomainError("plot: empty axis range");
}

}  // namespace

Color jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double t) { return std::clamp(1.5 - std::abs(4.0 * t), 0.0, 1.0); };
  return {ramp(v - 0.75), ramp(v - 0.5), ramp(v - 0.25)};
}

ImageArray render_lines(const PlotFrame& frame, const std::vector<Series>& series) {
  check_frame(frame);
  Canvas c(frame);
  c.axes();
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DomainError("plot: series x and y differ in length");
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
      c.line(c.px(s.x[i]), c.py(s.y[i]), c.px(s.x[i + 1]), c.py(s.y[i + 1]), s.color);
    }
  }
  return c.img;
}

ImageArray render_histograms(PlotFrame frame, const std::vector<Series>& series) {
  double top = 0.0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() + 1) throw DomainError("plot: histogram needs one more edge than bins");
    for (double v : s.y) top = std::max(top, v);
  }
  frame.y_max = top > 0.0 ? top * 1.05 : 1.0;
  check_frame(frame);
  Canvas c(frame);
  c.axes();
  for (const auto& s : series) {
    double prev = frame.y_min;
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      c.line(c.px(s.x[i]), c.py(prev), c.px(s.x[i]), c.py(s.y[i]), s.color);
      c.line(c.px(s.x[i]), c.py(s.y[i]), c.px(s.x[i + 1]), c.py(s.y[i]), s.color);
      prev = s.y[i];
    }
    c.line(c.px(s.x.back()), c.py(prev), c.px(s.x.back()), c.py(frame.y_min), s.color);
  }
  return c.img;
}

ImageArray render_overlay(const ImageArray& gray, const ImageArray& heat, double opacity) {
  if (gray.height != heat.height || gray.width != heat.width) throw ShapeError("overlay: heatmap and image sizes differ");
  ImageArray out(3, gray.height, gray.width);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const double g = std::clamp(gray.at(0, y, x), 0.0, 1.0);
      const Color c = jet(heat.at(0, y, x));
      for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = (1.0 - opacity) * g + opacity * c[static_cast<std::size_t>(ch)];
    }
  }
  return out;
}

}  // namespace fmue
