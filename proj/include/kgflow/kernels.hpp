#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/gaussian_family.hpp"
#include "kgflow/linalg.hpp"

namespace kgflow {

enum class ContextSource { None, FromParameters, FromParticles };

/// The distribution-dependent part of a kernel k_q: a mean and covariance
/// describing the current q, together with a (jittered) Cholesky factor of the
/// covariance. Immutable for the duration of one flow step.
class KernelContext {
 public:
  KernelContext() = default;

  KernelContext(Vector mean, const Matrix& covariance, ContextSource source)
      : mean_(std::move(mean)), covariance_(covariance), source_(source) {
    require_square(covariance_, "context covariance");
    require_size(covariance_.rows(), mean_.size(), "context covariance");
    chol_ = std::make_shared<const JitteredCholesky>(covariance_);
  }

  bool empty() const { return chol_ == nullptr; }
  ContextSource source() const { return source_; }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }

  const JitteredCholesky& cholesky() const {
    if (!chol_) throw UnsupportedKernelError("kernel requires a context but none was supplied");
    return *chol_;
  }

  /// L^{-1}(x - mean)
  Vector whiten(const Vector& x) const {
    const JitteredCholesky& chol = cholesky();
    require_size(x.size(), mean_.size(), "context point");
    return chol.whiten(x - mean_);
  }

 private:
  Vector mean_;
  Matrix covariance_;
  ContextSource source_ = ContextSource::None;
  std::shared_ptr<const JitteredCholesky> chol_;
};

inline KernelContext context_from_parameters(const GaussianVariationalParams& params) {
  return {params.mu(), params.sigma(), ContextSource::FromParameters};
}

/// Sample mean and unbiased sample covariance of the rows of `positions`.
inline KernelContext context_from_particles(const Matrix& positions) {
  if (positions.rows() < 2) {
    throw EmptyEnsembleError("particle context needs at least two particles");
  }
  const Vector mean = positions.colwise().mean();
  const Matrix centered = positions.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(positions.rows() - 1);
  return {mean, cov, ContextSource::FromParticles};
}

/// A d x d matrix-valued kernel k(x, y), possibly depending on q through a
/// KernelContext. Scalar kernels are k(x, y) I.
///
/// Optional fields enable fast paths:
///  - `scalar`: the scalar k for kernels of the form k(x, y) I;
///  - `grad_y`: the analytic gradient of a scalar kernel in its second slot,
///    needed by the Stein form of the SVGD update;
///  - `features`: a map phi with k(x, y) = <phi(x), phi(y)> I, so that kernel
///    sums cost O(n) instead of O(n^2).
struct MatrixKernel {
  using EvalFn = std::function<Matrix(const Vector&, const Vector&, const KernelContext&)>;
  using ScalarFn = std::function<double(const Vector&, const Vector&, const KernelContext&)>;
  using GradFn = std::function<Vector(const Vector&, const Vector&)>;
  using FeatureFn = std::function<Vector(const Vector&, const KernelContext&)>;

  std::string name;
  EvalFn eval;
  bool requires_context = false;
  ScalarFn scalar;
  GradFn grad_y;
  FeatureFn features;

  bool is_scalar() const { return static_cast<bool>(scalar); }
};

/// grad_y exp(-|x - y|^2 / bandwidth) = 2 (x - y) / bandwidth * k(x, y)
inline Vector rbf_gradient(const Vector& x, const Vector& y, double bandwidth = 1.0) {
  require_size(y.size(), x.size(), "rbf_gradient");
  const Vector diff = x - y;
  return (2.0 / bandwidth) * std::exp(-diff.squaredNorm() / bandwidth) * diff;
}

/// k(x, y) = exp(-|x - y|^2 / bandwidth) I. The default bandwidth of 1 gives
/// exp(-|x - y|^2).
inline MatrixKernel rbf_kernel(double bandwidth = 1.0) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw ConstructionError("rbf bandwidth must be positive and finite");
  }
  MatrixKernel k;
  k.name = "rbf";
  k.scalar = [bandwidth](const Vector& x, const Vector& y, const KernelContext&) {
    require_size(y.size(), x.size(), "rbf kernel");
    return std::exp(-(x - y).squaredNorm() / bandwidth);
  };
  k.eval = [s = k.scalar](const Vector& x, const Vector& y, const KernelContext& ctx) {
    return Matrix(s(x, y, ctx) * Matrix::Identity(x.size(), x.size()));
  };
  k.grad_y = [bandwidth](const Vector& x, const Vector& y) { return rbf_gradient(x, y, bandwidth); };
  return k;
}

/// Median heuristic bandwidth med(|x_i - x_j|^2) / log(n + 1); falls back to 1
/// for degenerate ensembles.
inline double median_bandwidth(const Matrix& positions) {
  const auto n = positions.rows();
  if (n < 2) return 1.0;
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) sq.push_back((positions.row(i) - positions.row(j)).squaredNorm());
  auto mid = sq.begin() + static_cast<std::ptrdiff_t>(sq.size() / 2);
  std::nth_element(sq.begin(), mid, sq.end());
  const double h = *mid / std::log(static_cast<double>(n) + 1.0);
  return h > 1e-12 ? h : 1.0;
}

/// The constant identity kernel k(x, y) = I. Turns the kernel operator into a
/// plain average of the field.
inline MatrixKernel identity_kernel() {
  MatrixKernel k;
  k.name = "identity";
  k.scalar = [](const Vector&, const Vector&, const KernelContext&) { return 1.0; };
  k.eval = [](const Vector& x, const Vector&, const KernelContext&) {
    return Matrix(Matrix::Identity(x.size(), x.size()));
  };
  k.grad_y = [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); };
  return k;
}

/// The sample-space NTK of the Gaussian family x = mu + A eps:
///   k(x, y) = (1 + (x - mu)^T Sigma^{-1} (y - mu)) I,
/// with mu and Sigma read from the context. Sigma^{-1} enters through the
/// whitened coordinates L^{-1}(x - mu), Sigma = L L^T.
inline MatrixKernel gaussian_ntk_kernel() {
  MatrixKernel k;
  k.name = "gaussian-ntk";
  k.requires_context = true;
  k.scalar = [](const Vector& x, const Vector& y, const KernelContext& ctx) {
    return 1.0 + ctx.whiten(x).dot(ctx.whiten(y));
  };
  k.eval = [s = k.scalar](const Vector& x, const Vector& y, const KernelContext& ctx) {
    return Matrix(s(x, y, ctx) * Matrix::Identity(x.size(), x.size()));
  };
  k.features = [](const Vector& x, const KernelContext& ctx) {
    Vector phi(x.size() + 1);
    phi(0) = 1.0;
    phi.tail(x.size()) = ctx.whiten(x);
    return phi;
  };
  return k;
}

// ---------------------------------------------------------------------------
// Neural tangent kernel construction

/// Maps a parameter vector and a base point to an output point.
using ParametricMap = std::function<Vector(const Vector& params, const Vector& base)>;

/// Maps a base point to the p x d Jacobian d f_i / d phi_r (rows: parameters,
/// columns: outputs).
using JacobianFn = std::function<Matrix(const Vector& base)>;

/// Theta(eps, w) = J(eps)^T J(w), a d x d matrix.
inline Matrix ntk_gram(const JacobianFn& jacobian_at, const Vector& eps, const Vector& w) {
  const Matrix je = jacobian_at(eps);
  const Matrix jw = jacobian_at(w);
  if (je.rows() != jw.rows() || je.cols() != jw.cols()) {
    throw DimensionError("ntk_gram: Jacobians differ in shape (" + std::to_string(je.rows()) + "x" +
                         std::to_string(je.cols()) + " vs " + std::to_string(jw.rows()) + "x" +
                         std::to_string(jw.cols()) + ")");
  }
  return je.transpose() * jw;
}

/// Central-difference Jacobian of f(., base) at `params`, as a p x d matrix.
/// The step for parameter r is 1e-6 * max(1, |params_r|).
inline Matrix finite_difference_jacobian(const ParametricMap& f, const Vector& params,
                                         const Vector& base) {
  const Vector f0 = f(params, base);
  if (!f0.allFinite()) throw NumericalError("finite_difference_jacobian: non-finite f(params)");
  Matrix jac(params.size(), f0.size());
  Vector probe = params;
  for (Eigen::Index r = 0; r < params.size(); ++r) {
    const double h = 1e-6 * std::max(1.0, std::abs(params(r)));
    probe(r) = params(r) + h;
    const Vector up = f(probe, base);
    probe(r) = params(r) - h;
    const Vector down = f(probe, base);
    probe(r) = params(r);
    if (!up.allFinite() || !down.allFinite()) {
      throw NumericalError("finite_difference_jacobian: non-finite evaluation at parameter " +
                           std::to_string(r));
    }
    require_size(up.size(), f0.size(), "finite_difference_jacobian output");
    jac.row(r) = ((up - down) / (2.0 * h)).transpose();
  }
  return jac;
}

/// Layout of the Gaussian family's parameters as a flat vector: mu first,
/// then A in row-major order (index d + l*d + m holds A_lm).
inline Vector flatten_parameters(const GaussianVariationalParams& params) {
  const auto d = params.dim();
  Vector flat(d + d * d);
  flat.head(d) = params.mu();
  for (Eigen::Index l = 0; l < d; ++l)
    for (Eigen::Index m = 0; m < d; ++m) flat(d + l * d + m) = params.a()(l, m);
  return flat;
}

/// f_phi(eps) = mu + A eps on flat parameters (see flatten_parameters).
inline ParametricMap gaussian_family_map(Eigen::Index d) {
  return [d](const Vector& flat, const Vector& eps) {
    require_size(flat.size(), d + d * d, "flat Gaussian parameters");
    require_size(eps.size(), d, "eps");
    Vector out = flat.head(d);
    for (Eigen::Index l = 0; l < d; ++l)
      for (Eigen::Index m = 0; m < d; ++m) out(l) += flat(d + l * d + m) * eps(m);
    return out;
  };
}

/// Analytic Jacobian of the Gaussian family: d f_i / d mu_l = delta_il and
/// d f_i / d A_lm = delta_il eps_m.
inline Matrix gaussian_family_jacobian(Eigen::Index d, const Vector& eps) {
  require_size(eps.size(), d, "eps");
  Matrix jac = Matrix::Zero(d + d * d, d);
  for (Eigen::Index l = 0; l < d; ++l) {
    jac(l, l) = 1.0;
    for (Eigen::Index m = 0; m < d; ++m) jac(d + l * d + m, l) = eps(m);
  }
  return jac;
}

/// k(x, y) = Theta(f^{-1}(x), f^{-1}(y)). `inverse_map` must invert the
/// reparameterization on the evaluation domain.
inline MatrixKernel pullback_kernel(std::function<Matrix(const Vector&, const Vector&)> ntk,
                                    std::function<Vector(const Vector&)> inverse_map) {
  MatrixKernel k;
  k.name = "pullback";
  k.eval = [ntk = std::move(ntk), inv = std::move(inverse_map)](const Vector& x, const Vector& y,
                                                                const KernelContext&) {
    return ntk(inv(x), inv(y));
  };
  return k;
}

// ---------------------------------------------------------------------------
// Kernel operator

/// out_i = (1/n) sum_j k(q_i, y_j) v_j for every query row q_i, where y_j are
/// the rows of `samples` and v_j the rows of `values`.
///
/// Sums run in index order, so results are reproducible bit for bit.
inline Matrix kernel_operator_rows(const MatrixKernel& kernel, const KernelContext& ctx,
                                   const Matrix& queries, const Matrix& samples,
                                   const Matrix& values) {
  const auto n = samples.rows();
  if (n == 0) throw EmptyEnsembleError("kernel operator needs at least one sample");
  require_size(values.rows(), n, "kernel operator values");
  require_size(values.cols(), samples.cols(), "kernel operator values");
  require_size(queries.cols(), samples.cols(), "kernel operator queries");
  if (kernel.requires_context && ctx.empty()) {
    throw UnsupportedKernelError("kernel '" + kernel.name + "' requires a context");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix out(queries.rows(), samples.cols());

  if (kernel.features) {
    // sum_j <phi(q), phi(y_j)> v_j = (sum_j v_j phi(y_j)^T) phi(q)
    Matrix moment;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector phi = kernel.features(samples.row(j).transpose(), ctx);
      if (j == 0) moment = Matrix::Zero(samples.cols(), phi.size());
      moment.noalias() += values.row(j).transpose() * phi.transpose();
    }
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      out.row(i) = (inv_n * (moment * kernel.features(queries.row(i).transpose(), ctx))).transpose();
    }
    return out;
  }

  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    const Vector x = queries.row(i).transpose();
    Vector acc = Vector::Zero(samples.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector y = samples.row(j).transpose();
      if (kernel.is_scalar()) {
        acc += kernel.scalar(x, y, ctx) * values.row(j).transpose();
      } else {
        acc += kernel.eval(x, y, ctx) * values.row(j).transpose();
      }
    }
    out.row(i) = (inv_n * acc).transpose();
  }
  return out;
}

/// (T_q field)(x) = (1/n) sum_j k(x, y_j) field(y_j), the Monte Carlo form of
/// the kernel operator over the samples y_j ~ q.
inline Vector apply_kernel_operator(const MatrixKernel& kernel, const KernelContext& ctx,
                                    const Matrix& samples,
                                    const std::function<Vector(const Vector&)>& field,
                                    const Vector& x) {
  if (samples.rows() == 0) throw EmptyEnsembleError("kernel operator needs at least one sample");
  Matrix values(samples.rows(), samples.cols());
  for (Eigen::Index j = 0; j < samples.rows(); ++j) {
    const Vector v = field(samples.row(j).transpose());
    require_size(v.size(), samples.cols(), "field value");
    values.row(j) = v.transpose();
  }
  return kernel_operator_rows(kernel, ctx, x.transpose(), samples, values).row(0).transpose();
}

/// Assembles the (n d) x (n d) block Gram matrix [k(x_i, x_j)]_{ij}.
inline Matrix block_gram(const MatrixKernel& kernel, const KernelContext& ctx, const Matrix& points) {
  const auto n = points.rows();
  const auto d = points.cols();
  Matrix gram(n * d, n * d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      gram.block(i * d, j * d, d, d) = kernel.eval(points.row(i).transpose(), points.row(j).transpose(), ctx);
  return gram;
}

}  // namespace kgflow
