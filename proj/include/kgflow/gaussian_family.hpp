#pragma once

#include <memory>
#include <string>
#include <utility>

#include <Eigen/LU>

#include "kgflow/errors.hpp"
#include "kgflow/linalg.hpp"
#include "kgflow/targets.hpp"

namespace kgflow {

/// Reparameterized Gaussian family x = mu + A eps, eps ~ N(0, I), with
/// Sigma = A A^T.
///
/// The full matrix A is the parameter (not a Cholesky factor), so A may drift
/// away from triangular form during a flow; only Sigma enters the density.
/// Construction rejects A whose condition number reaches 1e8.
class GaussianVariationalParams {
 public:
  GaussianVariationalParams(Vector mu, Matrix a) : mu_(std::move(mu)), a_(std::move(a)) {
    require_square(a_, "A");
    require_size(a_.rows(), mu_.size(), "A");
    if (mu_.size() < 1) throw DimensionError("Gaussian family needs dimension >= 1");
    if (!mu_.allFinite() || !a_.allFinite()) {
      throw NumericalError("Gaussian parameters contain non-finite values");
    }
    const double cond = condition_number(a_);
    if (!(cond < kMaxConditionNumber)) {
      throw SingularCovarianceError("A is ill-conditioned (condition number " +
                                    std::to_string(cond) + ")");
    }
    sigma_ = a_ * a_.transpose();
    try {
      density_ = std::make_shared<const detail::NormalComponent>(mu_, sigma_);
    } catch (const ConstructionError& e) {
      throw SingularCovarianceError(std::string("Sigma = A A^T is not positive definite: ") + e.what());
    }
    lu_ = std::make_shared<const Eigen::PartialPivLU<Matrix>>(a_);
  }

  static GaussianVariationalParams standard(Eigen::Index d) {
    return {Vector::Zero(d), Matrix::Identity(d, d)};
  }

  Eigen::Index dim() const { return mu_.size(); }
  const Vector& mu() const { return mu_; }
  const Matrix& a() const { return a_; }
  const Matrix& sigma() const { return sigma_; }

  /// f(eps) = mu + A eps
  Vector pushforward(const Vector& eps) const {
    require_size(eps.size(), dim(), "eps");
    return mu_ + a_ * eps;
  }

  /// Row-wise pushforward of an n x d matrix of base draws.
  Matrix pushforward_rows(const Matrix& eps) const {
    require_size(eps.cols(), dim(), "eps");
    return (eps * a_.transpose()).rowwise() + mu_.transpose();
  }

  /// f^{-1}(x) = A^{-1}(x - mu)
  Vector inverse_pushforward(const Vector& x) const {
    require_size(x.size(), dim(), "x");
    return lu_->solve(x - mu_);
  }

  double log_q(const Vector& x) const {
    require_size(x.size(), dim(), "x");
    return density_->log_pdf(x);
  }

  /// -Sigma^{-1}(x - mu)
  Vector score_q(const Vector& x) const {
    require_size(x.size(), dim(), "x");
    return density_->score(x);
  }

  /// log |det A| = 1/2 log det Sigma
  double log_abs_det_a() const { return 0.5 * density_->log_det; }

  /// q as a normalized TargetDensity; its score is bit-identical to score_q.
  TargetDensity as_target() const { return make_gaussian(mu_, sigma_); }

 private:
  Vector mu_;
  Matrix a_;
  Matrix sigma_;
  std::shared_ptr<const detail::NormalComponent> density_;
  std::shared_ptr<const Eigen::PartialPivLU<Matrix>> lu_;
};

/// Gradient with respect to the family parameters (mu, A).
struct GaussianParamGradient {
  Vector mu;
  Matrix a;

  double squared_norm() const { return mu.squaredNorm() + a.squaredNorm(); }
};

}  // namespace kgflow
