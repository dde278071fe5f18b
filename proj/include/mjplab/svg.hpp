#pragma once

#include <string>
#include <vector>

namespace mjplab {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;  // drawn next to the marker when non-empty
  std::string color = "#1f77b4";
  double radius = 3.0;
};

/// Self-contained SVG scatter plot with axes, ticks and point labels.
std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title, const std::string& x_label,
                        const std::string& y_label);

}  // namespace mjplab
