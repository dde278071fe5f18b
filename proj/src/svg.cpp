#include "mjplab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mjplab {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title, const std::string& x_label,
                        const std::string& y_label) {
  constexpr double width = 640, height = 640, margin = 60;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points[0].x;
    ymin = ymax = points[0].y;
    for (const ScatterPoint& p : points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  const double xpad = std::max((xmax - xmin) * 0.08, 1e-9), ypad = std::max((ymax - ymin) * 0.08, 1e-9);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  const auto sx = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); };
  const auto sy = [&](double y) { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
      << "</text>\n";
  // axes box
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin << "\" height=\""
      << height - 2 * margin << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0, fy = ymin + (ymax - ymin) * i / 4.0;
    svg << "<line x1=\"" << num(sx(fx)) << "\" y1=\"" << height - margin << "\" x2=\"" << num(sx(fx)) << "\" y2=\""
        << height - margin + 5 << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << num(sx(fx)) << "\" y=\"" << height - margin + 18 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << tick(fx) << "</text>\n";
    svg << "<line x1=\"" << margin - 5 << "\" y1=\"" << num(sy(fy)) << "\" x2=\"" << margin << "\" y2=\"" << num(sy(fy))
        << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << margin - 8 << "\" y=\"" << num(sy(fy) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
        << tick(fy) << "</text>\n";
  }
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 18 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << height / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
      << height / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (const ScatterPoint& p : points) {
    svg << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y)) << "\" r=\"" << num(p.radius) << "\" fill=\""
        << escape(p.color) << "\"/>\n";
    if (!p.label.empty()) {
      svg << "<text x=\"" << num(sx(p.x) + 4) << "\" y=\"" << num(sy(p.y) - 4) << "\" font-size=\"9\">" << escape(p.label)
          << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mjplab
