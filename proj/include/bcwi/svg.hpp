#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>

#include "bcwi/eval.hpp"
#include "bcwi/util.hpp"

namespace bcwi {

namespace detail {

// Fixed 256-step ramp: dark blue -> cyan -> yellow -> red.
inline std::array<int, 3> ramp_color(double t) {
  struct Stop {
    double pos;
    int r, g, b;
  };
  static constexpr Stop stops[] = {
      {0.0, 0, 0, 128}, {0.33, 0, 191, 255}, {0.66, 255, 220, 0}, {1.0, 200, 0, 0}};
  t = std::clamp(t, 0.0, 1.0);
  t = std::floor(t * 255.0) / 255.0;  // quantize to 256 steps
  for (std::size_t i = 1; i < std::size(stops); ++i) {
    if (t <= stops[i].pos) {
      const Stop& a = stops[i - 1];
      const Stop& b = stops[i];
      const double u = (t - a.pos) / (b.pos - a.pos);
      return {static_cast<int>(a.r + u * (b.r - a.r)), static_cast<int>(a.g + u * (b.g - a.g)),
              static_cast<int>(a.b + u * (b.b - a.b))};
    }
  }
  return {stops[3].r, stops[3].g, stops[3].b};
}

inline std::string rgb(const std::array<int, 3>& c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", c[0], c[1], c[2]);
  return buf;
}

}  // namespace detail

// Minimal heatmap with the three models marked; no plotting dependency.
inline std::string plane_scan_svg(const PlaneScan& scan) {
  const int cell = 16, pad = 40;
  const int w = static_cast<int>(scan.grid_n) * cell + 2 * pad;
  const int h = static_cast<int>(scan.grid_n) * cell + 2 * pad + 20;

  double vmin = scan.values[0], vmax = scan.values[0];
  for (double v : scan.values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  const double range = vmax > vmin ? vmax - vmin : 1.0;

  const double x0 = scan.xs.front(), x1 = scan.xs.back();
  const double y0 = scan.ys.front(), y1 = scan.ys.back();
  auto px = [&](double x) {
    return pad + (x - x0) / (x1 - x0) * static_cast<double>(scan.grid_n * cell);
  };
  // y axis points up
  auto py = [&](double y) {
    return pad + (y1 - y) / (y1 - y0) * static_cast<double>(scan.grid_n * cell);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t iy = 0; iy < scan.grid_n; ++iy) {
    for (std::size_t ix = 0; ix < scan.grid_n; ++ix) {
      const double v = scan.values[iy * scan.grid_n + ix];
      const double t = (v - vmin) / range;
      const int cx = pad + static_cast<int>(ix) * cell;
      const int cy = pad + static_cast<int>(scan.grid_n - 1 - iy) * cell;
      svg += "<rect x=\"" + std::to_string(cx) + "\" y=\"" + std::to_string(cy) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
             detail::rgb(detail::ramp_color(t)) + "\"/>\n";
    }
  }
  struct Marker {
    double x, y;
    const char* name;
  };
  const Marker markers[] = {{scan.old_x, scan.old_y, "old"},
                            {scan.new_x, scan.new_y, "new"},
                            {scan.target_x, scan.target_y, "target"}};
  for (const Marker& m : markers) {
    svg += "<circle cx=\"" + format_double(px(m.x)) + "\" cy=\"" + format_double(py(m.y)) +
           "\" r=\"5\" fill=\"black\" stroke=\"white\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + format_double(px(m.x) + 8) + "\" y=\"" + format_double(py(m.y) - 6) +
           "\" font-family=\"sans-serif\" font-size=\"13\">" + m.name + "</text>\n";
  }
  svg += "<text x=\"" + std::to_string(pad) + "\" y=\"" + std::to_string(h - 12) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" + to_string(scan.metric) +
         ": min=" + format_double(vmin) + " max=" + format_double(vmax) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace bcwi
