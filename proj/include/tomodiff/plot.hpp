#pragma once

// Dependency-free SVG charts: scatter plots for projections and line/step
// plots for error curves.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tomodiff/error.hpp"

namespace tomodiff::plot {

struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
  bool line = true;  // false draws markers only
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 640;
  int height = 480;
};

namespace detail {

inline std::string Escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
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

inline std::string Num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string RenderSvg(const Chart& chart) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const Series& s : chart.series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = chart.width - left - right, ph = chart.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width << "\" height=\"" << chart.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << chart.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << detail::Escape(chart.title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << detail::Num(fx)
        << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << detail::Num(fy)
        << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << chart.height - 12 << "\" text-anchor=\"middle\">"
      << detail::Escape(chart.x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << detail::Escape(chart.y_label) << "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const Series& s = chart.series[k];
    if (s.line) {
      svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : s.points) {
        if (std::isfinite(x) && std::isfinite(y)) svg << px(x) << ',' << py(y) << ' ';
      }
      svg << "\"/>\n";
    } else {
      for (const auto& [x, y] : s.points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        svg << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2\" fill=\"" << s.color
            << "\" fill-opacity=\"0.6\"/>\n";
      }
    }
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    svg << "<rect x=\"" << left + pw - 130 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << s.color
        << "\"/>\n";
    svg << "<text x=\"" << left + pw - 115 << "\" y=\"" << ly << "\">" << detail::Escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void WriteSvg(const std::string& path, const Chart& chart) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << RenderSvg(chart);
}

// Turns right-continuous CDF jump points into a drawable staircase.
inline std::vector<std::pair<double, double>> Staircase(const std::vector<std::pair<double, double>>& steps) {
  std::vector<std::pair<double, double>> out;
  double previous = 0.0;
  for (const auto& [x, y] : steps) {
    out.emplace_back(x, previous);
    out.emplace_back(x, y);
    previous = y;
  }
  return out;
}

}  // namespace tomodiff::plot
