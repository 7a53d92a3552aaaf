#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/experiment/output.hpp"
#include "kgflow/quadrature.hpp"
#include "kgflow/targets.hpp"

namespace kgflow::experiment {

/// One panel: two point sets drawn with different markers over the target.
/// Either set may be empty.
struct PlotPanel {
  std::string title;
  Matrix first;   // circles
  Matrix second;  // crosses
};

struct PlotStyle {
  std::string first_label = "BBVI samples";
  std::string second_label = "SVGD particles";
  int grid = 90;
  int levels = 6;
  double panel_size = 260.0;
  int columns = 4;
};

namespace detail {

struct Segment {
  double x0, y0, x1, y1;
};

// Marching squares on a regular grid; values(i, j) at (xs[i], ys[j]).
inline std::vector<Segment> contour(const Matrix& values, const Vector& xs, const Vector& ys, double level) {
  std::vector<Segment> out;
  const auto lerp = [&](double a, double b, double va, double vb) { return a + (level - va) / (vb - va) * (b - a); };
  for (Eigen::Index i = 0; i + 1 < xs.size(); ++i) {
    for (Eigen::Index j = 0; j + 1 < ys.size(); ++j) {
      const double v00 = values(i, j), v10 = values(i + 1, j), v11 = values(i + 1, j + 1), v01 = values(i, j + 1);
      const int code = (v00 > level) | (v10 > level) << 1 | (v11 > level) << 2 | (v01 > level) << 3;
      if (code == 0 || code == 15) continue;
      // Edge crossings: bottom, right, top, left.
      const std::array<std::array<double, 2>, 4> e = {{
          {lerp(xs(i), xs(i + 1), v00, v10), ys(j)},
          {xs(i + 1), lerp(ys(j), ys(j + 1), v10, v11)},
          {lerp(xs(i), xs(i + 1), v01, v11), ys(j + 1)},
          {xs(i), lerp(ys(j), ys(j + 1), v00, v01)},
      }};
      const auto add = [&](int a, int b) { out.push_back({e[a][0], e[a][1], e[b][0], e[b][1]}); };
      switch (code) {
        case 1: case 14: add(3, 0); break;
        case 2: case 13: add(0, 1); break;
        case 3: case 12: add(3, 1); break;
        case 4: case 11: add(1, 2); break;
        case 6: case 9: add(0, 2); break;
        case 7: case 8: add(3, 2); break;
        case 5: add(3, 0); add(1, 2); break;
        case 10: add(0, 1); add(3, 2); break;
        default: break;
      }
    }
  }
  return out;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double x) {
  std::ostringstream s;
  s.precision(5);
  s << x;
  return s.str();
}

}  // namespace detail

/// SVG with one panel per entry of `panels` (a single contour-only panel when
/// there are none). d = 2 draws density contours, d = 1 the density curve with
/// the points as a rug.
inline std::string render_svg(const TargetDensity& target, std::vector<PlotPanel> panels, Box region,
                              const PlotStyle& style = {}) {
  const auto d = target.dim();
  if (d != 1 && d != 2) throw UnsupportedDimensionError("plots support d = 1 or d = 2, got d = " + std::to_string(d));
  require_size(region.lower.size(), d, "plot region");
  if (panels.empty()) panels.push_back({"target", Matrix(0, d), Matrix(0, d)});
  for (const auto& p : panels) {
    for (const Matrix* m : {&p.first, &p.second}) {
      if (m->rows() == 0) continue;
      require_size(m->cols(), d, "plot points");
      region.lower = region.lower.cwiseMin(Vector(m->colwise().minCoeff().transpose()));
      region.upper = region.upper.cwiseMax(Vector(m->colwise().maxCoeff().transpose()));
    }
  }

  const int g = style.grid;
  const Vector xs = Vector::LinSpaced(g, region.lower(0), region.upper(0));
  const Vector ys = d == 2 ? Vector(Vector::LinSpaced(g, region.lower(1), region.upper(1))) : Vector();
  Matrix dens(g, d == 2 ? g : 1);
  for (int i = 0; i < g; ++i) {
    if (d == 1) {
      dens(i, 0) = std::exp(target.log_density(Vector::Constant(1, xs(i))));
      continue;
    }
    for (int j = 0; j < g; ++j) dens(i, j) = std::exp(target.log_density((Vector(2) << xs(i), ys(j)).finished()));
  }
  const double peak = dens.maxCoeff();

  const double s = style.panel_size, pad = 20.0, head = 24.0;
  const int cols = std::min<int>(style.columns, static_cast<int>(panels.size()));
  const int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
  const double width = cols * (s + pad) + pad, height = rows * (s + head + pad) + pad + 24.0;
  const double lo_y = d == 2 ? region.lower(1) : 0.0, hi_y = d == 2 ? region.upper(1) : 1.0;
  const auto sx = [&](double x) { return (x - region.lower(0)) / (region.upper(0) - region.lower(0)) * s; };
  const auto sy = [&](double y) { return s - (y - lo_y) / (hi_y - lo_y) * s; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::num(width) << "\" height=\""
      << detail::num(height) << "\" viewBox=\"0 0 " << detail::num(width) << ' ' << detail::num(height) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << pad << "\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\">";
  if (!style.first_label.empty()) out << "<tspan fill=\"#1f77b4\">o " << detail::escape(style.first_label) << "</tspan>";
  if (!style.second_label.empty()) {
    out << "<tspan dx=\"16\" fill=\"#d62728\">x " << detail::escape(style.second_label) << "</tspan>";
  }
  out << "</text>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const double ox = pad + static_cast<double>(p % cols) * (s + pad);
    const double oy = 24.0 + pad + static_cast<double>(p / cols) * (s + head + pad);
    out << "<g class=\"panel\" transform=\"translate(" << detail::num(ox) << ',' << detail::num(oy) << ")\">\n"
        << "<text x=\"0\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">" << detail::escape(panels[p].title)
        << "</text>\n<g transform=\"translate(0," << head << ")\">\n"
        << "<rect width=\"" << s << "\" height=\"" << s << "\" fill=\"none\" stroke=\"#888\"/>\n";
    if (d == 2) {
      out << "<path fill=\"none\" stroke=\"#999\" stroke-width=\"0.8\" d=\"";
      for (int l = 1; l <= style.levels; ++l) {
        const double level = peak * l / (style.levels + 1.0);
        for (const auto& seg : detail::contour(dens, xs, ys, level)) {
          out << 'M' << detail::num(sx(seg.x0)) << ',' << detail::num(sy(seg.y0)) << 'L' << detail::num(sx(seg.x1))
              << ',' << detail::num(sy(seg.y1));
        }
      }
      out << "\"/>\n";
    } else {
      out << "<polyline fill=\"none\" stroke=\"#999\" points=\"";
      for (int i = 0; i < g; ++i) out << detail::num(sx(xs(i))) << ',' << detail::num(sy(0.9 * dens(i, 0) / peak)) << ' ';
      out << "\"/>\n";
    }
    const auto point_y = [&](const Matrix& m, Eigen::Index i, double rug) { return d == 2 ? sy(m(i, 1)) : sy(rug); };
    for (Eigen::Index i = 0; i < panels[p].first.rows(); ++i) {
      out << "<circle cx=\"" << detail::num(sx(panels[p].first(i, 0))) << "\" cy=\""
          << detail::num(point_y(panels[p].first, i, 0.04)) << "\" r=\"1.6\" fill=\"none\" stroke=\"#1f77b4\"/>\n";
    }
    for (Eigen::Index i = 0; i < panels[p].second.rows(); ++i) {
      const double cx = sx(panels[p].second(i, 0)), cy = point_y(panels[p].second, i, 0.08);
      out << "<path d=\"M" << detail::num(cx - 1.6) << ',' << detail::num(cy - 1.6) << "l3.2,3.2m0,-3.2l-3.2,3.2\" "
          << "stroke=\"#d62728\" stroke-width=\"0.7\"/>\n";
    }
    out << "</g>\n</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

inline void write_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing", path);
  out << svg;
  out.flush();
  if (!out) throw IoError("write failed", path);
}

}  // namespace kgflow::experiment
