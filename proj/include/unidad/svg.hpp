#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unidad/tensor.hpp"

namespace unidad {

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Scatter plot of a 2-D run: generations as dots, exemplars as crosses,
/// source mode centers as rings. World box [-10,10]^2 maps to an 800x800
/// viewBox; output bytes depend only on the inputs.
inline std::string scatter_svg(const Tensor& generations, const Tensor* exemplars,
                               const std::vector<std::array<double, 2>>* centers,
                               double ring_radius = 0.9) {
  const auto sx = [](double x) { return (x + 10.0) * 40.0; };
  const auto sy = [](double y) { return (10.0 - y) * 40.0; };
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\" width=\"800\" height=\"800\">\n";
  out += "<rect width=\"800\" height=\"800\" fill=\"#ffffff\"/>\n";
  if (centers) {
    for (const std::array<double, 2>& c : *centers) {
      out += "<circle cx=\"" + detail::fmt2(sx(c[0])) + "\" cy=\"" + detail::fmt2(sy(c[1])) +
             "\" r=\"" + detail::fmt2(ring_radius * 40.0) +
             "\" fill=\"none\" stroke=\"#b0b0b0\" stroke-dasharray=\"6 4\"/>\n";
    }
  }
  if (generations.rank() != 2 || generations.extent(1) != 2) {
    throw std::invalid_argument("scatter_svg: generations must be (n,2), got " +
                                detail::shape_str(generations.shape()));
  }
  for (int i = 0; i < generations.extent(0); ++i) {
    out += "<circle cx=\"" + detail::fmt2(sx(generations.at(i, 0))) + "\" cy=\"" +
           detail::fmt2(sy(generations.at(i, 1))) +
           "\" r=\"3\" fill=\"#3b6ea5\" fill-opacity=\"0.55\"/>\n";
  }
  if (exemplars) {
    for (int i = 0; i < exemplars->extent(0); ++i) {
      const double cx = sx(exemplars->at(i, 0));
      const double cy = sy(exemplars->at(i, 1));
      out += "<path d=\"M" + detail::fmt2(cx - 6) + " " + detail::fmt2(cy - 6) + " L" +
             detail::fmt2(cx + 6) + " " + detail::fmt2(cy + 6) + " M" + detail::fmt2(cx - 6) +
             " " + detail::fmt2(cy + 6) + " L" + detail::fmt2(cx + 6) + " " +
             detail::fmt2(cy - 6) + "\" stroke=\"#a3322b\" stroke-width=\"2.5\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

inline void emit_scatter_svg(const Tensor& generations, const Tensor* exemplars,
                             const std::vector<std::array<double, 2>>* centers,
                             const std::string& path, double ring_radius = 0.9) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << scatter_svg(generations, exemplars, centers, ring_radius);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace unidad
