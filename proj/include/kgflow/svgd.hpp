#pragma once

#include <functional>
#include <optional>
#include <string>

#include "kgflow/errors.hpp"
#include "kgflow/kernels.hpp"
#include "kgflow/linalg.hpp"
#include "kgflow/random.hpp"
#include "kgflow/targets.hpp"
#include "kgflow/trajectory.hpp"

namespace kgflow {

using ScoreField = std::function<Vector(const Vector&)>;

namespace detail {

inline Matrix scores_of(const Matrix& points, const ScoreField& score) {
  Matrix out(points.rows(), points.cols());
  for (Eigen::Index j = 0; j < points.rows(); ++j) {
    const Vector s = score(points.row(j).transpose());
    require_size(s.size(), points.cols(), "score");
    out.row(j) = s.transpose();
  }
  return out;
}

}  // namespace detail

/// Stein form of the SVGD direction at a query point x:
///   (1/n) sum_j [k(x, y_j) s_j + grad_y k(x, y_j)],
/// where s_j is the target score at y_j. Scalar kernels only.
inline Vector stein_direction(const MatrixKernel& kernel, const KernelContext& ctx,
                              const Matrix& samples, const Matrix& sample_scores, const Vector& x) {
  if (!kernel.is_scalar() || !kernel.grad_y) {
    throw UnsupportedKernelError("kernel '" + kernel.name +
                                 "' has no analytic scalar gradient; use the mean-field form");
  }
  const auto n = samples.rows();
  if (n == 0) throw EmptyEnsembleError("SVGD needs at least one particle");
  Vector acc = Vector::Zero(samples.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector y = samples.row(j).transpose();
    acc += kernel.scalar(x, y, ctx) * sample_scores.row(j).transpose() + kernel.grad_y(x, y);
  }
  return acc / static_cast<double>(n);
}

/// SVGD particle velocities, row i:
///   (1/n) sum_j [k(x_i, x_j) score(x_j) + grad_y k(x_i, y)|_{y = x_j}].
inline Matrix svgd_velocity(const ParticleEnsemble& ensemble, const TargetDensity& target,
                            const MatrixKernel& kernel, const KernelContext& ctx = {}) {
  require_size(ensemble.dim(), target.dim(), "ensemble");
  const Matrix& x = ensemble.positions;
  const Matrix scores = detail::scores_of(x, [&](const Vector& p) { return target.score(p); });
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = stein_direction(kernel, ctx, x, scores, x.row(i).transpose()).transpose();
  }
  return out;
}

/// Mean-field SVGD velocities, row i:
///   (1/n) sum_j k(x_i, x_j) (score_p(x_j) - score_q(x_j)),
/// with an analytic score of q supplied by the caller. Works with
/// matrix-valued and distribution-dependent kernels.
inline Matrix svgd_meanfield_velocity(const ParticleEnsemble& ensemble, const TargetDensity& target,
                                      const MatrixKernel& kernel, const KernelContext& ctx,
                                      const ScoreField& log_q_score) {
  require_size(ensemble.dim(), target.dim(), "ensemble");
  const Matrix& x = ensemble.positions;
  Matrix diff(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const Vector y = x.row(j).transpose();
    const Vector sq = log_q_score(y);
    require_size(sq.size(), x.cols(), "q score");
    diff.row(j) = (target.score(y) - sq).transpose();
  }
  return kernel_operator_rows(kernel, ctx, x, x, diff);
}

/// positions += step_size * velocity; advances time and step index.
inline ParticleEnsemble euler_step(const ParticleEnsemble& ensemble, const Matrix& velocity,
                                   double step_size) {
  if (velocity.rows() != ensemble.size() || velocity.cols() != ensemble.dim()) {
    throw DimensionError("velocity shape does not match the ensemble");
  }
  ParticleEnsemble next;
  next.positions = ensemble.positions + step_size * velocity;
  next.time = ensemble.time + step_size;
  next.step_index = ensemble.step_index + 1;
  if (!next.positions.allFinite()) {
    throw NumericalError("non-finite particle positions", next.step_index);
  }
  return next;
}

using VelocityField = std::function<Matrix(const ParticleEnsemble&)>;

/// Classical fourth-order Runge-Kutta step for an autonomous particle ODE.
inline ParticleEnsemble rk4_step(const ParticleEnsemble& ensemble, const VelocityField& velocity,
                                 double step_size) {
  const auto at = [&](const Matrix& dx, double frac) {
    ParticleEnsemble e;
    e.positions = ensemble.positions + frac * step_size * dx;
    e.time = ensemble.time + frac * step_size;
    e.step_index = ensemble.step_index;
    return e;
  };
  const Matrix k1 = velocity(ensemble);
  const Matrix k2 = velocity(at(k1, 0.5));
  const Matrix k3 = velocity(at(k2, 0.5));
  const Matrix k4 = velocity(at(k3, 1.0));
  return euler_step(ensemble, (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0, step_size);
}

/// Particles drawn from N(mean, A A^T) with the given seed.
inline ParticleEnsemble initial_ensemble(std::uint64_t seed, std::size_t n, const Vector& mean,
                                         const Matrix& a) {
  GaussianVariationalParams init(mean, a);
  return ParticleEnsemble(init.pushforward_rows(standard_normal(seed, static_cast<Eigen::Index>(n), mean.size())));
}

struct SvgdOptions {
  MatrixKernel kernel = rbf_kernel();
  // Recompute an RBF bandwidth from the particles each step.
  bool median_bandwidth = false;
  // Where a context-dependent kernel gets its (mean, covariance).
  ContextSource context_source = ContextSource::FromParticles;
  // Used when context_source == FromParameters.
  std::optional<GaussianVariationalParams> context_parameters;
  // When set, the mean-field form is used with this score of q instead of the
  // Stein form. Receives the current ensemble so that q can follow it.
  std::function<ScoreField(const ParticleEnsemble&, const KernelContext&)> q_score;
  // Extra per-record diagnostics.
  std::function<void(const ParticleEnsemble&, std::map<std::string, double>&)> diagnostics;
};

/// Integrates the SVGD ODE for config.num_steps steps, recording every
/// config.record_every steps (plus the first and last).
inline FlowTrajectory run_svgd(const ParticleEnsemble& initial, const TargetDensity& target,
                               const SvgdOptions& options, const FlowConfig& config) {
  config.validate();
  require_size(initial.dim(), target.dim(), "initial ensemble");

  const auto context_for = [&](const ParticleEnsemble& e) -> KernelContext {
    if (!options.kernel.requires_context) return {};
    if (options.context_source == ContextSource::FromParameters) {
      if (!options.context_parameters) {
        throw ConstructionError("FromParameters context needs context_parameters");
      }
      return context_from_parameters(*options.context_parameters);
    }
    return context_from_particles(e.positions);
  };
  const VelocityField velocity = [&](const ParticleEnsemble& e) -> Matrix {
    const KernelContext ctx = context_for(e);
    const MatrixKernel kernel =
        options.median_bandwidth ? rbf_kernel(median_bandwidth(e.positions)) : options.kernel;
    if (options.q_score) {
      return svgd_meanfield_velocity(e, target, kernel, ctx, options.q_score(e, ctx));
    }
    return svgd_velocity(e, target, kernel, ctx);
  };

  FlowTrajectory trajectory(config.step_size);
  const auto record = [&](const ParticleEnsemble& e) {
    TrajectoryRecord rec{e.step_index, e.time, e, {}};
    if (options.diagnostics) options.diagnostics(e, rec.diagnostics);
    trajectory.append(std::move(rec));
  };

  ParticleEnsemble current = initial;
  current.time = 0.0;
  current.step_index = 0;
  record(current);
  for (std::size_t step = 1; step <= config.num_steps; ++step) {
    try {
      current = config.integrator == Integrator::RungeKutta4
                    ? rk4_step(current, velocity, config.step_size)
                    : euler_step(current, velocity(current), config.step_size);
      // Recompute time from the index so that it does not drift.
      current.time = static_cast<double>(step) * config.step_size;
      if (should_record(step, config.num_steps, config.record_every)) record(current);
    } catch (const SingularCovarianceError& e) {
      throw NumericalError(std::string("SVGD step failed: ") + e.what(), step);
    } catch (const NumericalError& e) {
      if (e.step()) throw;
      throw NumericalError(std::string("SVGD step failed: ") + e.what(), step);
    }
  }
  return trajectory;
}

}  // namespace kgflow
