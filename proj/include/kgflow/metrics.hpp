#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/gaussian_family.hpp"
#include "kgflow/linalg.hpp"

namespace kgflow {

/// KL(q || p) between N(q.mu, q.Sigma) and N(p_mean, p_cov):
///   1/2 [tr(P^{-1} S_q) + (m - mu)^T P^{-1} (m - mu) - d + log det P - log det S_q].
inline double gaussian_kl(const GaussianVariationalParams& q, const Vector& p_mean, const Matrix& p_cov) {
  require_size(p_mean.size(), q.dim(), "p_mean");
  require_square(p_cov, "p_cov");
  require_size(p_cov.rows(), q.dim(), "p_cov");
  if (!is_spd(p_cov)) throw SingularCovarianceError("p covariance is not positive definite");
  const Eigen::LLT<Matrix> lp(p_cov);
  const Eigen::LLT<Matrix> lq(q.sigma());
  if (lq.info() != Eigen::Success) throw SingularCovarianceError("q covariance is not positive definite");
  const double d = static_cast<double>(q.dim());
  const double trace = lp.solve(q.sigma()).trace();
  const Vector diff = p_mean - q.mu();
  const double maha = diff.dot(lp.solve(diff));
  const double logdet_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (trace + maha - d + logdet_p - logdet_q);
}

struct Moments {
  Vector mean;
  Matrix covariance;
};

/// Sample mean and unbiased (n - 1) sample covariance of the rows of X.
inline Moments moment_summary(const Matrix& samples) {
  if (samples.rows() < 2) throw EmptyEnsembleError("moment_summary needs at least two samples");
  Moments m;
  m.mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  return m;
}

namespace detail {

// Mean of |a_i - b_j| over all n m pairs.
inline double mean_pairwise_distance(const Matrix& a, const Matrix& b) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) sum += (a.row(i) - b.row(j)).norm();
  return sum / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace detail

/// Energy distance 2 E|X - Y| - E|X - X'| - E|Y - Y'| between the rows of X
/// and Y. All three means run over every pair, diagonal included (the
/// V-statistic), which keeps the value nonnegative and exactly zero when X and
/// Y hold the same points. O((n + m)^2).
inline double energy_distance(const Matrix& x, const Matrix& y) {
  if (x.rows() < 2 || y.rows() < 2) throw EmptyEnsembleError("energy_distance needs n, m >= 2");
  require_size(y.cols(), x.cols(), "energy_distance samples");
  // Evaluate in a canonical argument order so that ED(X,Y) == ED(Y,X) bit for
  // bit.
  const bool swap = y.rows() < x.rows() ||
                    (y.rows() == x.rows() &&
                     std::lexicographical_compare(y.data(), y.data() + y.size(), x.data(), x.data() + x.size()));
  const Matrix& a = swap ? y : x;
  const Matrix& b = swap ? x : y;
  const double cross = detail::mean_pairwise_distance(a, b);
  const double within_a = detail::mean_pairwise_distance(a, a);
  const double within_b = detail::mean_pairwise_distance(b, b);
  return 2.0 * cross - within_a - within_b;
}

/// Biased RBF-MMD^2 with the median heuristic bandwidth on the pooled sample.
/// Secondary diagnostic next to the energy distance.
inline double rbf_mmd2_median(const Matrix& x, const Matrix& y) {
  if (x.rows() < 1 || y.rows() < 1) throw EmptyEnsembleError("rbf_mmd2 needs non-empty samples");
  require_size(y.cols(), x.cols(), "rbf_mmd2 samples");
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<double> sq;
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) sq.push_back((pooled.row(i) - pooled.row(j)).squaredNorm());
  double bw = 1.0;
  if (!sq.empty()) {
    auto mid = sq.begin() + static_cast<std::ptrdiff_t>(sq.size() / 2);
    std::nth_element(sq.begin(), mid, sq.end());
    if (*mid > 0.0) bw = *mid;
  }
  const auto mean_k = [bw](const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j) s += std::exp(-(a.row(i) - b.row(j)).squaredNorm() / bw);
    return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
  };
  return mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y);
}

}  // namespace kgflow
