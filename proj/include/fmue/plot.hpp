#pragma once

#include <array>
#include <string>
#include <vector>

#include "fmue/image.hpp"

namespace fmue {

using Color = std::array<double, 3>;

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  Color color{0.0, 0.0, 0.0};
};

struct PlotFrame {
  int width = 480;
  int height = 320;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  int x_ticks = 10;
  int y_ticks = 5;
};

// Line chart on a white canvas with light grid lines.
ImageArray render_lines(const PlotFrame& frame, const std::vector<Series>& series);

// Step outlines of histogram densities; each series' x holds the bin edges
// (one more than y).
ImageArray render_histograms(PlotFrame frame, const std::vector<Series>& series);

// Jet-style colour map blended over a grayscale image; `heat` must match its size.
ImageArray render_overlay(const ImageArray& gray, const ImageArray& heat, double opacity = 0.45);

Color jet(double v);

}  // namespace fmue
