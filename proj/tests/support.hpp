// Test-only oracles: finite differences, quadrature, closed-form Gaussian
// identities. Nothing here calls into the code paths it is used to check.
#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace kgflow::testing {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

// Central finite-difference gradient with step 1e-5 * max(1, |x_i|).
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Vec& got, const Vec& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-12);
}

inline Vec random_vec(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

// I + 0.3 * G; comfortably invertible for small d.
inline Mat random_well_conditioned(std::mt19937_64& rng, Eigen::Index d, double spread = 0.3) {
  std::normal_distribution<double> n(0.0, spread);
  Mat a = Mat::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) += n(rng);
  return a;
}

inline Mat random_spd(std::mt19937_64& rng, Eigen::Index d) {
  const Mat a = random_well_conditioned(rng, d, 0.5);
  return a * a.transpose() + 0.1 * Mat::Identity(d, d);
}

// Composite Simpson rule on [lo, hi] with an even number of intervals.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int intervals = 20000) {
  if (intervals % 2) ++intervals;
  const double h = (hi - lo) / intervals;
  double s = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

// 2D Simpson on a square grid.
inline double simpson2(const std::function<double(double, double)>& f, double lo0, double hi0, double lo1,
                       double hi1, int intervals = 600) {
  return simpson([&](double x) { return simpson([&](double y) { return f(x, y); }, lo1, hi1, intervals); }, lo0,
                 hi0, intervals);
}

// log N(x; m, S) written out directly.
inline double mvn_log_pdf(const Vec& x, const Vec& m, const Mat& s) {
  const double d = static_cast<double>(x.size());
  const Vec r = x - m;
  return -0.5 * r.dot(s.inverse() * r) - 0.5 * d * std::log(2.0 * kPi) - 0.5 * std::log(s.determinant());
}

// E_q[-1/2 (x - m)^T P^{-1} (x - m)] + H(q) for q = N(mu, S), i.e. the ELBO
// against the unnormalized Gaussian target exp(-1/2 (x - m)^T P^{-1} (x - m)).
inline double closed_form_elbo(const Vec& mu, const Mat& s, const Vec& m, const Mat& p) {
  const double d = static_cast<double>(mu.size());
  const Mat pinv = p.inverse();
  const Vec r = mu - m;
  const double cross = -0.5 * ((pinv * s).trace() + r.dot(pinv * r));
  const double entropy = 0.5 * d * (1.0 + std::log(2.0 * kPi)) + 0.5 * std::log(s.determinant());
  return cross + entropy;
}

}  // namespace kgflow::testing
