#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "kgflow/errors.hpp"
#include "kgflow/gaussian_family.hpp"
#include "kgflow/kernels.hpp"
#include "kgflow/linalg.hpp"
#include "kgflow/random.hpp"
#include "kgflow/targets.hpp"
#include "kgflow/trajectory.hpp"

namespace kgflow {

/// n x d standard-normal base draws eps ~ N(0, I), regenerable from the seed.
struct BaseSampleBatch {
  Matrix draws;
  std::uint64_t seed = 0;

  static BaseSampleBatch generate(std::uint64_t seed, Eigen::Index n, Eigen::Index d) {
    return {standard_normal(seed, n, d), seed};
  }

  Eigen::Index size() const { return draws.rows(); }
  Vector eps(Eigen::Index j) const { return draws.row(j).transpose(); }
};

namespace detail {

inline void require_batch(const GaussianVariationalParams& params, const BaseSampleBatch& batch) {
  if (batch.size() == 0) throw EmptyEnsembleError("base sample batch is empty");
  require_size(batch.draws.cols(), params.dim(), "base sample batch");
}

}  // namespace detail

/// (1/n) sum_j [log p~(y_j) - log q(y_j)] with y_j = mu + A eps_j. The target
/// enters through its unnormalized log-density, so at the optimum the
/// estimate approaches log Z rather than 0.
inline double elbo_estimate(const GaussianVariationalParams& params, const TargetDensity& target,
                            const BaseSampleBatch& batch) {
  detail::require_batch(params, batch);
  require_size(target.dim(), params.dim(), "target");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    const Vector y = params.pushforward(batch.eps(j));
    sum += target.log_density(y) - params.log_q(y);
  }
  return sum / static_cast<double>(batch.size());
}

/// A vector field g(y) driving the reparameterized samples.
using SampleField = std::function<Vector(const Vector&)>;

/// Pathwise parameter gradient E_w[grad_phi f_phi(w) . g(f_phi(w))] over the
/// batch. For f = mu + A eps the Jacobian structure gives
///   d/dmu = mean_j g_j,   d/dA = mean_j g_j eps_j^T.
inline GaussianParamGradient pathwise_gradient(const GaussianVariationalParams& params,
                                               const BaseSampleBatch& batch, const SampleField& field) {
  detail::require_batch(params, batch);
  const auto d = params.dim();
  GaussianParamGradient grad{Vector::Zero(d), Matrix::Zero(d, d)};
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    const Vector eps = batch.eps(j);
    const Vector g = field(params.pushforward(eps));
    require_size(g.size(), d, "sample field");
    grad.mu += g;
    grad.a.noalias() += g * eps.transpose();
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  grad.mu *= inv_n;
  grad.a *= inv_n;
  if (!grad.mu.allFinite() || !grad.a.allFinite()) {
    throw NumericalError("non-finite parameter gradient");
  }
  return grad;
}

/// g(y) = score_p(y) - score_q(y); the integrand of the sticking-the-landing
/// ELBO gradient.
inline SampleField kl_sample_field(const GaussianVariationalParams& params, const TargetDensity& target) {
  require_size(target.dim(), params.dim(), "target");
  return [params, target](const Vector& y) { return Vector(target.score(y) - params.score_q(y)); };
}

/// Sticking-the-landing ELBO gradient over (mu, A). Vanishes pointwise when
/// q equals the target.
inline GaussianParamGradient stl_gradient(const GaussianVariationalParams& params,
                                          const TargetDensity& target, const BaseSampleBatch& batch) {
  return pathwise_gradient(params, batch, kl_sample_field(params, target));
}

inline GaussianVariationalParams apply_gradient_step(const GaussianVariationalParams& params,
                                                     const GaussianParamGradient& grad, double step_size) {
  if (!(step_size > 0.0)) throw ConstructionError("step_size must be positive");
  return {params.mu() + step_size * grad.mu, params.a() + step_size * grad.a};
}

/// One step of gradient ascent on the ELBO: phi += h * stl_gradient.
inline GaussianVariationalParams bbvi_param_step(const GaussianVariationalParams& params,
                                                 const TargetDensity& target, const BaseSampleBatch& batch,
                                                 double step_size) {
  return apply_gradient_step(params, stl_gradient(params, target, batch), step_size);
}

/// dx/dt of the sample x = f(eps) induced by the parameter ODE, via the chain
/// rule: (grad_phi f(eps))^T dphi/dt = grad_mu + grad_A eps.
inline Vector bbvi_particle_velocity_chainrule(const GaussianVariationalParams& params,
                                               const TargetDensity& target, const BaseSampleBatch& batch,
                                               const Vector& eps) {
  require_size(eps.size(), params.dim(), "eps");
  const GaussianParamGradient grad = stl_gradient(params, target, batch);
  return grad.mu + grad.a * eps;
}

/// The same velocity written as a kernel flow in sample space:
///   (1/n) sum_j k_phi(x, y_j) (score_p(y_j) - score_q(y_j)),
/// with k_phi the Gaussian NTK kernel under a FromParameters context. Each
/// kernel matrix is evaluated explicitly.
inline Vector bbvi_particle_velocity_kernel(const GaussianVariationalParams& params,
                                            const TargetDensity& target, const BaseSampleBatch& batch,
                                            const Vector& x) {
  detail::require_batch(params, batch);
  require_size(x.size(), params.dim(), "x");
  const MatrixKernel kernel = gaussian_ntk_kernel();
  const KernelContext ctx = context_from_parameters(params);
  const SampleField field = kl_sample_field(params, target);
  Vector acc = Vector::Zero(params.dim());
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    const Vector y = params.pushforward(batch.eps(j));
    acc += kernel.eval(x, y, ctx) * field(y);
  }
  return acc / static_cast<double>(batch.size());
}

/// Parameter-space flow dphi/dt = E_w[grad_phi f(w) . g_phi(f(w))], where
/// `field_for` supplies g for the current parameters. BBVI and the GAN flow
/// both run through here.
using FieldFactory = std::function<SampleField(const GaussianVariationalParams&)>;
using ParamDiagnostics = std::function<void(const GaussianVariationalParams&, std::map<std::string, double>&)>;

/// Seed of the base batch used at `step` (1-based). With fixed_batch every step
/// shares the batch derived from stream 0.
inline std::uint64_t batch_seed(const FlowConfig& config, std::size_t step) {
  return mix_seed(config.seed, config.fixed_batch ? 0 : step);
}

inline FlowTrajectory run_parameter_flow(const GaussianVariationalParams& initial, const FieldFactory& field_for,
                                         const FlowConfig& config, const ParamDiagnostics& diagnostics = {}) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(config.num_particles);
  FlowTrajectory trajectory(config.step_size);
  const auto record = [&](std::size_t step, const GaussianVariationalParams& p) {
    TrajectoryRecord rec{step, static_cast<double>(step) * config.step_size, p, {}};
    if (diagnostics) diagnostics(p, rec.diagnostics);
    trajectory.append(std::move(rec));
  };

  GaussianVariationalParams current = initial;
  record(0, current);
  BaseSampleBatch batch;
  for (std::size_t step = 1; step <= config.num_steps; ++step) {
    if (step == 1 || !config.fixed_batch) batch = BaseSampleBatch::generate(batch_seed(config, step), n, initial.dim());
    try {
      current = apply_gradient_step(current, pathwise_gradient(current, batch, field_for(current)), config.step_size);
      if (should_record(step, config.num_steps, config.record_every)) record(step, current);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("parameter flow failed: ") + e.what(), step);
    } catch (const SingularCovarianceError& e) {
      throw NumericalError(std::string("parameter flow failed: ") + e.what(), step);
    }
  }
  return trajectory;
}

/// BBVI with the sticking-the-landing gradient.
inline FlowTrajectory run_bbvi(const GaussianVariationalParams& initial, const TargetDensity& target,
                               const FlowConfig& config, const ParamDiagnostics& diagnostics = {}) {
  require_size(target.dim(), initial.dim(), "target");
  return run_parameter_flow(
      initial, [&target](const GaussianVariationalParams& p) { return kl_sample_field(p, target); }, config,
      diagnostics);
}

}  // namespace kgflow
