#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "kgflow/bbvi.hpp"
#include "kgflow/errors.hpp"
#include "kgflow/gaussian_family.hpp"
#include "kgflow/kernels.hpp"
#include "kgflow/quadrature.hpp"
#include "kgflow/svgd.hpp"
#include "kgflow/targets.hpp"

namespace kgflow {

/// First variation Psi_q of a divergence J(q). Only the gradient enters the
/// dynamics; `evaluate` is defined up to an additive constant.
struct FunctionalDerivative {
  std::string name;
  std::function<double(const Vector& x, const TargetDensity& q)> evaluate;
  std::function<Vector(const Vector& x, const TargetDensity& q)> gradient;
};

/// J(q) = KL(q || p): Psi_q = log q - log p, grad Psi_q = score_q - score_p.
inline FunctionalDerivative kl_functional_derivative(const TargetDensity& target) {
  FunctionalDerivative psi;
  psi.name = "kl";
  psi.evaluate = [target](const Vector& x, const TargetDensity& q) {
    return q.log_density(x) - target.log_density(x);
  };
  psi.gradient = [target](const Vector& x, const TargetDensity& q) {
    return Vector(q.score(x) - target.score(x));
  };
  return psi;
}

/// J(q) = D_JS(p_data, q): Psi_q = 1/2 log(q / m) with m = (p_data + q) / 2.
/// This is the negated optimal discriminator of the minimax GAN. Both p_data
/// and q must carry known normalizers.
inline FunctionalDerivative js_functional_derivative(const TargetDensity& p_data) {
  if (!p_data.is_normalized()) {
    throw ConstructionError("JS functional derivative needs a normalized data density");
  }
  const auto require_q = [](const TargetDensity& q) {
    if (!q.is_normalized()) throw ConstructionError("JS functional derivative needs a normalized q");
  };
  FunctionalDerivative psi;
  psi.name = "js";
  psi.evaluate = [p_data, require_q](const Vector& x, const TargetDensity& q) {
    require_q(q);
    const double lp = p_data.normalized_log_density(x);
    const double lq = q.normalized_log_density(x);
    // log m = log((p + q) / 2), via log-sum-exp
    const double top = std::max(lp, lq);
    const double log_m = top + std::log(std::exp(lp - top) + std::exp(lq - top)) - std::log(2.0);
    return 0.5 * (lq - log_m);
  };
  psi.gradient = [p_data, require_q](const Vector& x, const TargetDensity& q) {
    require_q(q);
    const double lp = p_data.normalized_log_density(x);
    const double lq = q.normalized_log_density(x);
    // grad log m = w_p score_p + w_q score_q with w_p = p / (p + q)
    const double w_p = 1.0 / (1.0 + std::exp(lq - lp));
    const double w_q = 1.0 - w_p;
    const Vector sq = q.score(x);
    const Vector grad_log_m = w_p * p_data.score(x) + w_q * sq;
    return Vector(0.5 * (sq - grad_log_m));
  };
  return psi;
}

/// Jensen-Shannon divergence by grid quadrature over `box` (d <= 2).
inline double js_divergence(const TargetDensity& p, const TargetDensity& q, const Box& box,
                            int points_per_axis = 2048) {
  require_size(q.dim(), p.dim(), "js_divergence");
  const auto integrand = [&](const Vector& x) {
    const double lp = p.normalized_log_density(x);
    const double lq = q.normalized_log_density(x);
    const double top = std::max(lp, lq);
    if (!std::isfinite(top)) return 0.0;
    const double log_m = top + std::log(std::exp(lp - top) + std::exp(lq - top)) - std::log(2.0);
    return 0.5 * std::exp(lp) * (lp - log_m) + 0.5 * std::exp(lq) * (lq - log_m);
  };
  return grid_integrate(integrand, box, points_per_axis);
}

/// Generated-point velocities of a kernel gradient flow, row i:
///   -(1/n) sum_j k(x_i, x_j) grad Psi_q(x_j).
/// With Psi = kl_functional_derivative this is the mean-field SVGD velocity.
inline Matrix gan_flow_velocity(const ParticleEnsemble& particles, const FunctionalDerivative& psi,
                                const MatrixKernel& kernel, const KernelContext& ctx,
                                const TargetDensity& q_density) {
  require_size(particles.dim(), q_density.dim(), "particles");
  const Matrix& x = particles.positions;
  Matrix values(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const Vector g = psi.gradient(x.row(j).transpose(), q_density);
    require_size(g.size(), x.cols(), "functional derivative gradient");
    values.row(j) = (-g).transpose();
  }
  return kernel_operator_rows(kernel, ctx, x, x, values);
}

/// Kernel gradient flow of J over the Gaussian generator family, in parameter
/// form: dphi/dt = -E_w[grad_phi f(w) . grad Psi_q(f(w))], with Psi recomputed
/// from the current q every step. With Psi = kl_functional_derivative(target)
/// the trajectory is bit-identical to run_bbvi on the same config.
inline FlowTrajectory run_kernel_flow(const GaussianVariationalParams& initial, const FunctionalDerivative& psi,
                                      const FlowConfig& config, const ParamDiagnostics& diagnostics = {}) {
  return run_parameter_flow(
      initial,
      [&psi](const GaussianVariationalParams& p) -> SampleField {
        return [&psi, q = p.as_target()](const Vector& y) { return Vector(-psi.gradient(y, q)); };
      },
      config, diagnostics);
}

struct GanFlowOptions {
  // Region covering p_data for the JS quadrature; q's own +/- 8 sd box is
  // added every record.
  Box data_box;
  int quadrature_points = 2048;
};

/// Idealized minimax GAN: generator x = mu + A eps trained against the optimal
/// discriminator, i.e. the kernel gradient flow of D_JS(p_data, q). Records the
/// JS divergence (quadrature, d <= 2) as diagnostic "js_divergence".
inline FlowTrajectory run_gan_flow(const GaussianVariationalParams& initial, const TargetDensity& p_data,
                                   const FlowConfig& config, const GanFlowOptions& options) {
  require_size(p_data.dim(), initial.dim(), "p_data");
  const FunctionalDerivative psi = js_functional_derivative(p_data);
  const bool quadrature = p_data.dim() <= 2;
  return run_kernel_flow(initial, psi, config,
                         [&](const GaussianVariationalParams& p, std::map<std::string, double>& diag) {
                           if (!quadrature) return;
                           const Box box = options.data_box.united(gaussian_box(p.mu(), p.sigma()));
                           diag["js_divergence"] = js_divergence(p_data, p.as_target(), box, options.quadrature_points);
                         });
}

}  // namespace kgflow
