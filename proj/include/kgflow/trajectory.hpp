#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/gaussian_family.hpp"
#include "kgflow/linalg.hpp"

namespace kgflow {

/// n particles in d dimensions (one per row) at a point in flow time. The
/// empirical distribution of the rows is the current q_t.
struct ParticleEnsemble {
  Matrix positions;
  double time = 0.0;
  std::size_t step_index = 0;

  ParticleEnsemble() = default;
  explicit ParticleEnsemble(Matrix p, double t = 0.0, std::size_t step = 0)
      : positions(std::move(p)), time(t), step_index(step) {
    if (positions.rows() < 1 || positions.cols() < 1) {
      throw EmptyEnsembleError("ensemble needs n >= 1 particles in d >= 1 dimensions");
    }
    if (!positions.allFinite()) throw NumericalError("ensemble has non-finite positions", step);
  }

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }
  Vector particle(Eigen::Index i) const { return positions.row(i).transpose(); }
};

enum class Integrator { Euler, RungeKutta4 };

struct FlowConfig {
  double step_size = 0.05;
  std::size_t num_steps = 2000;
  std::size_t num_particles = 200;
  std::uint64_t seed = 0;
  std::size_t record_every = 100;
  Integrator integrator = Integrator::Euler;
  // Reuse one base sample batch for every step (common random numbers).
  bool fixed_batch = false;

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) {
      throw ConstructionError("step_size must be positive and finite");
    }
    if (num_particles < 1) throw ConstructionError("num_particles must be positive");
    if (record_every < 1) throw ConstructionError("record_every must be positive");
    if (num_steps > 0 && record_every > num_steps) {
      throw ConstructionError("record_every must not exceed num_steps");
    }
  }
};

using FlowState = std::variant<ParticleEnsemble, GaussianVariationalParams>;

struct TrajectoryRecord {
  std::size_t step_index;
  double time;
  FlowState state;
  std::map<std::string, double> diagnostics;
};

/// The recorded sequence of approximate posteriors of one flow.
class FlowTrajectory {
 public:
  FlowTrajectory() = default;
  explicit FlowTrajectory(double step_size) : step_size_(step_size) {}

  void append(TrajectoryRecord record) {
    if (!records_.empty() && record.step_index <= records_.back().step_index) {
      throw ConstructionError("trajectory step indices must be strictly increasing");
    }
    records_.push_back(std::move(record));
  }

  const std::vector<TrajectoryRecord>& records() const { return records_; }
  std::vector<TrajectoryRecord>& records() { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const TrajectoryRecord& back() const { return records_.back(); }
  double step_size() const { return step_size_; }

  /// Records should hold a single state kind; an empty trajectory holds none.
  bool holds_particles() const {
    return !records_.empty() && std::holds_alternative<ParticleEnsemble>(records_.front().state);
  }

 private:
  double step_size_ = 0.0;
  std::vector<TrajectoryRecord> records_;
};

// Whether a step should be recorded: the initial state, every
// `record_every`-th step and the final step.
inline bool should_record(std::size_t step, std::size_t num_steps, std::size_t record_every) {
  return step == 0 || step == num_steps || step % record_every == 0;
}

}  // namespace kgflow
