#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/linalg.hpp"

namespace kgflow {

/// Axis-aligned integration box.
struct Box {
  Vector lower;
  Vector upper;

  Eigen::Index dim() const { return lower.size(); }

  Box united(const Box& other) const {
    require_size(other.dim(), dim(), "box");
    return {lower.cwiseMin(other.lower), upper.cwiseMax(other.upper)};
  }
};

/// mean +/- width * sqrt(diag(cov)) on every axis.
inline Box gaussian_box(const Vector& mean, const Matrix& cov, double width = 8.0) {
  require_size(cov.rows(), mean.size(), "covariance");
  const Vector sd = cov.diagonal().cwiseSqrt();
  return {mean - width * sd, mean + width * sd};
}

/// Tensor-product trapezoid rule with `points` nodes per axis, d <= 2.
inline double grid_integrate(const std::function<double(const Vector&)>& f, const Box& box, int points) {
  const auto d = box.dim();
  if (d < 1 || d > 2) throw UnsupportedDimensionError("grid quadrature supports d = 1 or d = 2");
  if (points < 2) throw ConstructionError("grid quadrature needs at least two points per axis");
  const Vector step = (box.upper - box.lower) / static_cast<double>(points - 1);
  const auto weight = [points](int i) { return (i == 0 || i == points - 1) ? 0.5 : 1.0; };
  double sum = 0.0;
  Vector x(d);
  if (d == 1) {
    for (int i = 0; i < points; ++i) {
      x(0) = box.lower(0) + i * step(0);
      sum += weight(i) * f(x);
    }
    return sum * step(0);
  }
  for (int i = 0; i < points; ++i) {
    x(0) = box.lower(0) + i * step(0);
    double row = 0.0;
    for (int j = 0; j < points; ++j) {
      x(1) = box.lower(1) + j * step(1);
      row += weight(j) * f(x);
    }
    sum += weight(i) * row;
  }
  return sum * step(0) * step(1);
}

}  // namespace kgflow
