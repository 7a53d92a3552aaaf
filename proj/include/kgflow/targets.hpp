#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/linalg.hpp"

namespace kgflow {

/// A target distribution p(x), known up to a normalizing constant.
///
/// `log_density` is the unnormalized log-density and `score` its gradient.
/// `log_normalizer`, when present, is the log evidence
///   log Z = log \int exp(log_density(x)) dx,
/// so that log p(x) = log_density(x) - log Z. An unknown normalizer is
/// absent, never zero.
///
/// Instances are immutable and cheap to copy; evaluation is a pure function.
class TargetDensity {
 public:
  using LogDensityFn = std::function<double(const Vector&)>;
  using ScoreFn = std::function<Vector(const Vector&)>;

  TargetDensity(Eigen::Index dim, LogDensityFn log_density, ScoreFn score,
                std::optional<double> log_normalizer = std::nullopt)
      : dim_(dim),
        log_density_(std::move(log_density)),
        score_(std::move(score)),
        log_normalizer_(log_normalizer) {
    if (dim_ < 1) throw ConstructionError("target dimension must be positive");
    if (!log_density_ || !score_) throw ConstructionError("target needs a log-density and a score");
  }

  Eigen::Index dim() const { return dim_; }

  double log_density(const Vector& x) const {
    require_size(x.size(), dim_, "target log_density");
    return log_density_(x);
  }

  Vector score(const Vector& x) const {
    require_size(x.size(), dim_, "target score");
    return score_(x);
  }

  const std::optional<double>& log_normalizer() const { return log_normalizer_; }
  bool is_normalized() const { return log_normalizer_.has_value(); }

  /// log p(x) including the normalizer. Throws ConstructionError when the
  /// normalizer is unknown.
  double normalized_log_density(const Vector& x) const {
    if (!log_normalizer_) {
      throw ConstructionError("target density has no known normalizer");
    }
    return log_density(x) - *log_normalizer_;
  }

 private:
  Eigen::Index dim_;
  LogDensityFn log_density_;
  ScoreFn score_;
  std::optional<double> log_normalizer_;
};

struct GaussianMixtureSpec {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
};

/// A likelihood term log P(z|x) viewed as a function of x.
struct LogLikelihood {
  Eigen::Index dim;
  std::function<double(const Vector&)> log_density;
  std::function<Vector(const Vector&)> score;
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// A multivariate normal component with a strict (unjittered) Cholesky factor.
struct NormalComponent {
  Vector mean;
  Eigen::LLT<Matrix> llt;
  double log_det = 0.0;

  NormalComponent(Vector m, const Matrix& cov) : mean(std::move(m)) {
    require_square(cov, "covariance");
    require_size(cov.rows(), mean.size(), "covariance");
    if (!is_spd(cov)) throw ConstructionError("covariance is not symmetric positive-definite");
    llt.compute(cov);
    log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }

  // -1/2 (x - m)^T Sigma^{-1} (x - m)
  double quadratic(const Vector& x) const {
    const Vector z = llt.matrixL().solve(x - mean);
    return -0.5 * z.squaredNorm();
  }

  // log Z of exp(quadratic): (d/2) log(2 pi) + 1/2 log det Sigma
  double log_evidence() const {
    return 0.5 * static_cast<double>(mean.size()) * kLog2Pi + 0.5 * log_det;
  }

  double log_pdf(const Vector& x) const { return quadratic(x) - log_evidence(); }

  Vector score(const Vector& x) const { return -llt.solve(x - mean); }
};

}  // namespace detail

/// N(mean, covariance). The unnormalized log-density is the quadratic form
/// -1/2 (x - m)^T Sigma^{-1} (x - m); log_normalizer carries the Gaussian
/// constant (d/2) log(2 pi) + 1/2 log det Sigma.
inline TargetDensity make_gaussian(const Vector& mean, const Matrix& covariance) {
  require_square(covariance, "covariance");
  require_size(covariance.rows(), mean.size(), "covariance");
  auto comp = std::make_shared<const detail::NormalComponent>(mean, covariance);
  return TargetDensity(
      mean.size(), [comp](const Vector& x) { return comp->quadratic(x); },
      [comp](const Vector& x) { return comp->score(x); }, comp->log_evidence());
}

/// Weighted mixture of Gaussians. The density is normalized (log_normalizer
/// = 0). The score uses log-sum-exp stabilized responsibilities so that it
/// stays finite far out in the tails.
inline TargetDensity make_mixture(const GaussianMixtureSpec& spec) {
  if (spec.weights.empty()) throw ConstructionError("mixture has no components");
  if (spec.means.size() != spec.weights.size() || spec.covariances.size() != spec.weights.size()) {
    throw ConstructionError("mixture weights, means and covariances differ in length");
  }
  double total = 0.0;
  for (double w : spec.weights) {
    if (!(w > 0.0)) throw ConstructionError("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConstructionError("mixture weights must sum to 1");

  const Eigen::Index dim = spec.means.front().size();
  struct Mixture {
    std::vector<double> log_weights;
    std::vector<detail::NormalComponent> comps;

    // Writes log w_i + log N_i(x) into `terms` and returns their log-sum-exp.
    double log_terms(const Vector& x, std::vector<double>& terms) const {
      terms.resize(comps.size());
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < comps.size(); ++i) {
        terms[i] = log_weights[i] + comps[i].log_pdf(x);
        top = std::max(top, terms[i]);
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - top);
      return top + std::log(acc);
    }
  };
  auto mix = std::make_shared<Mixture>();
  for (std::size_t i = 0; i < spec.weights.size(); ++i) {
    require_size(spec.means[i].size(), dim, "mixture component mean");
    mix->log_weights.push_back(std::log(spec.weights[i]));
    mix->comps.emplace_back(spec.means[i], spec.covariances[i]);
  }
  std::shared_ptr<const Mixture> frozen = mix;

  return TargetDensity(
      dim,
      [frozen](const Vector& x) {
        std::vector<double> terms;
        return frozen->log_terms(x, terms);
      },
      [frozen](const Vector& x) {
        std::vector<double> terms;
        const double lse = frozen->log_terms(x, terms);
        Vector s = Vector::Zero(x.size());
        for (std::size_t i = 0; i < terms.size(); ++i) {
          s += std::exp(terms[i] - lse) * frozen->comps[i].score(x);
        }
        return s;
      },
      0.0);
}

/// Gaussian observation model z ~ N(x, noise_covariance), as a function of x.
inline LogLikelihood gaussian_likelihood(const Vector& observation, const Matrix& noise_covariance) {
  auto comp = std::make_shared<const detail::NormalComponent>(observation, noise_covariance);
  // N(z; x, R) is symmetric in (z, x), so the score in x is R^{-1}(z - x).
  return LogLikelihood{observation.size(),
                       [comp](const Vector& x) { return comp->log_pdf(x); },
                       [comp](const Vector& x) { return comp->score(x); }};
}

/// Unnormalized posterior P(z|x) P(x). The evidence is unknown in general, so
/// the result carries no normalizer.
inline TargetDensity posterior_from_prior_likelihood(const TargetDensity& prior,
                                                     const LogLikelihood& likelihood) {
  require_size(likelihood.dim, prior.dim(), "likelihood");
  if (!likelihood.log_density || !likelihood.score) {
    throw ConstructionError("likelihood needs a log-density and a score");
  }
  return TargetDensity(
      prior.dim(),
      [prior, ll = likelihood.log_density](const Vector& x) {
        return prior.log_density(x) + ll(x);
      },
      [prior, sl = likelihood.score](const Vector& x) {
        Vector s = sl(x);
        require_size(s.size(), x.size(), "likelihood score");
        return Vector(prior.score(x) + s);
      });
}

}  // namespace kgflow
