#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include "kgflow/errors.hpp"

namespace kgflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Ratio of extreme singular values above which a matrix is treated as
// non-invertible.
inline constexpr double kMaxConditionNumber = 1e8;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + " must be square, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

inline void require_size(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

// Strict SPD check: plain Cholesky, no regularization.
inline bool is_spd(const Matrix& m) {
  if (!is_symmetric(m) || !m.allFinite()) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

inline double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 1.0;
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

// Cholesky factor of a covariance estimate with jitter regularization.
//
// Factorizes as given first. On failure adds 1e-10 * trace/d to the diagonal,
// retries once at 1e-8 * trace/d, then gives up with SingularCovarianceError.
class JitteredCholesky {
 public:
  explicit JitteredCholesky(const Matrix& sigma) {
    require_square(sigma, "covariance");
    if (!sigma.allFinite()) throw SingularCovarianceError("covariance has non-finite entries");
    const auto d = sigma.rows();
    const double scale = sigma.trace() / static_cast<double>(d);
    if (!(scale > 0.0)) throw SingularCovarianceError("covariance has non-positive trace");
    for (double rel : {0.0, 1e-10, 1e-8}) {
      jitter_ = rel * scale;
      Matrix reg = 0.5 * (sigma + sigma.transpose());
      reg.diagonal().array() += jitter_;
      llt_.compute(reg);
      if (llt_.info() != Eigen::Success) continue;
      // diag(L) bounds cond(L) from below; cond(L) plays the role of cond(A).
      const Vector diag = llt_.matrixLLT().diagonal().cwiseAbs();
      if (diag.minCoeff() > 0.0 && diag.maxCoeff() / diag.minCoeff() < kMaxConditionNumber) return;
    }
    throw SingularCovarianceError("covariance is not positive definite after jitter");
  }

  const Eigen::LLT<Matrix>& llt() const { return llt_; }
  Matrix lower() const { return llt_.matrixL(); }
  double jitter() const { return jitter_; }

  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix inverse() const {
    return llt_.solve(Matrix::Identity(llt_.rows(), llt_.cols()));
  }
  // Returns L^{-1} b, the whitened coordinates.
  Vector whiten(const Vector& b) const { return llt_.matrixL().solve(b); }

  double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

}  // namespace kgflow
