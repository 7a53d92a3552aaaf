#pragma once

#include <charconv>
#include <fstream>
#include <ostream>
#include <string>
#include <system_error>
#include <variant>

#include "kgflow/errors.hpp"
#include "kgflow/trajectory.hpp"

namespace kgflow::experiment {

class IoError : public Error {
 public:
  IoError(const std::string& what, std::string path) : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Shortest decimal that parses back to the same double.
inline std::string format_real(double x) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw Error("could not format number");
  return std::string(buf, p);
}

inline std::string csv_header(const FlowState& state) {
  std::string h = "step,time";
  if (const auto* e = std::get_if<ParticleEnsemble>(&state)) {
    h += ",particle_id";
    for (Eigen::Index k = 0; k < e->dim(); ++k) h += ",dim_" + std::to_string(k);
    return h;
  }
  const auto& p = std::get<GaussianVariationalParams>(state);
  const auto d = p.dim();
  for (Eigen::Index k = 0; k < d; ++k) h += ",mu_" + std::to_string(k);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) h += ",a_" + std::to_string(r) + std::to_string(c);
  return h;
}

/// Ensembles: one row per particle per record. Parameters: one row per
/// record with mu then A in row-major order.
inline void write_csv(std::ostream& out, const FlowTrajectory& trajectory) {
  if (trajectory.empty()) return;
  out << csv_header(trajectory.records().front().state) << '\n';
  for (const auto& rec : trajectory.records()) {
    const std::string prefix = std::to_string(rec.step_index) + ',' + format_real(rec.time);
    if (const auto* e = std::get_if<ParticleEnsemble>(&rec.state)) {
      for (Eigen::Index i = 0; i < e->size(); ++i) {
        out << prefix << ',' << i;
        for (Eigen::Index k = 0; k < e->dim(); ++k) out << ',' << format_real(e->positions(i, k));
        out << '\n';
      }
    } else {
      const auto& p = std::get<GaussianVariationalParams>(rec.state);
      out << prefix;
      for (Eigen::Index k = 0; k < p.dim(); ++k) out << ',' << format_real(p.mu()(k));
      for (Eigen::Index r = 0; r < p.dim(); ++r)
        for (Eigen::Index c = 0; c < p.dim(); ++c) out << ',' << format_real(p.a()(r, c));
      out << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const FlowTrajectory& trajectory) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing", path);
  write_csv(out, trajectory);
  out.flush();
  if (!out) throw IoError("write failed", path);
}

}  // namespace kgflow::experiment
