#pragma once

// Bare-bones static SVG line charts for the workbench outputs.

#include <iosfwd>
#include <string>
#include <vector>

namespace nvqpt::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool markers = false;  ///< draw points instead of a polyline
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 720;
  int height = 420;
  std::vector<Series> series;
};

/// Throws std::invalid_argument on empty charts or mismatched series lengths.
void write_chart(std::ostream& os, const Chart& chart);

}  // namespace nvqpt::svg
