#pragma once

// Minimal standalone SVG line plots rendered from already-computed series.

#include <string>
#include <vector>

namespace fmgan::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct Axes {
  std::string title, xlabel, ylabel;
  bool log_y = false;   // non-positive values are skipped
  bool markers = false; // draw points instead of connecting lines
};

std::string render_svg(const std::vector<Series>& series, const Axes& axes);
void write_svg(const std::string& path, const std::vector<Series>& series, const Axes& axes);

}  // namespace fmgan::plot
