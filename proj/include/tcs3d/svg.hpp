#pragma once

// Minimal static SVG line/scatter charts for the loss-curve and gamma-sweep
// CSVs. No interactivity, just plot-ready files.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

struct ChartSeries {
  std::string label;
  std::vector<double> x, y;
  bool points_only = false;
};

namespace detail_svg {

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail_svg

inline void write_line_chart(const std::filesystem::path& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<ChartSeries>& series) {
  check(!series.empty(), "write_line_chart: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const ChartSeries& s : series) {
    check(s.x.size() == s.y.size() && !s.x.empty(), "write_line_chart: bad series '" + s.label + "'");
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double W = 640, H = 420, L = 70, R = 180, Tm = 40, B = 50;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - Tm - B); };

  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15' "
        "font-family='sans-serif'>" << title << "</text>\n";

  // axes with 5 ticks each
  os << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
     << "' stroke='black'/>\n";
  os << "<line x1='" << L << "' y1='" << Tm << "' x2='" << L << "' y2='" << H - B
     << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<line x1='" << px(xv) << "' y1='" << H - B << "' x2='" << px(xv) << "' y2='"
       << H - B + 5 << "' stroke='black'/>\n";
    os << "<text x='" << px(xv) << "' y='" << H - B + 18
       << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
       << detail_svg::fmt(xv) << "</text>\n";
    os << "<line x1='" << L - 5 << "' y1='" << py(yv) << "' x2='" << L << "' y2='" << py(yv)
       << "' stroke='black'/>\n";
    os << "<text x='" << L - 8 << "' y='" << py(yv) + 4
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << detail_svg::fmt(yv)
       << "</text>\n";
  }
  os << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label
     << "</text>\n";
  os << "<text x='16' y='" << (Tm + H - B) / 2
     << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 16 "
     << (Tm + H - B) / 2 << ")'>" << y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const ChartSeries& s = series[si];
    const char* color = detail_svg::series_color(si);
    if (!s.points_only && s.x.size() > 1) {
      os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
      for (std::size_t i = 0; i < s.x.size(); ++i)
        os << detail_svg::fmt(px(s.x[i])) << ',' << detail_svg::fmt(py(s.y[i])) << ' ';
      os << "'/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << "<circle cx='" << detail_svg::fmt(px(s.x[i])) << "' cy='"
         << detail_svg::fmt(py(s.y[i])) << "' r='2.5' fill='" << color << "'/>\n";
    const double ly = Tm + 16.0 * static_cast<double>(si);
    os << "<rect x='" << W - R + 12 << "' y='" << ly << "' width='10' height='10' fill='" << color
       << "'/>\n";
    os << "<text x='" << W - R + 28 << "' y='" << ly + 9
       << "' font-size='11' font-family='sans-serif'>" << s.label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace tcs3d
