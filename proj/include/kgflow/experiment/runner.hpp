#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgflow/bbvi.hpp"
#include "kgflow/experiment/config.hpp"
#include "kgflow/experiment/output.hpp"
#include "kgflow/experiment/plot.hpp"
#include "kgflow/flows.hpp"
#include "kgflow/metrics.hpp"
#include "kgflow/svgd.hpp"

#ifndef KGFLOW_VERSION
#define KGFLOW_VERSION "unknown"
#endif

namespace kgflow::experiment {

using json = nlohmann::json;

// RNG streams, kept apart from the per-step BBVI batches (streams 0..num_steps).
inline constexpr std::uint64_t kInitStream = 1ull << 62;
inline constexpr std::uint64_t kEvalStream = kInitStream + 1;
inline constexpr std::uint64_t kBaselineStream = kInitStream + 1024;

// Point sets passed to the energy distance are truncated to this many rows.
inline constexpr Eigen::Index kMaxMetricPoints = 2000;
inline constexpr Eigen::Index kMaxPlotPoints = 300;

struct ExperimentResult {
  json summary;
  std::vector<std::string> files;
};

namespace detail {

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Vector(m.row(r).transpose())));
  return rows;
}

inline json to_json(const Moments& m) { return {{"mean", to_json(m.mean)}, {"covariance", to_json(m.covariance)}}; }

inline json config_echo(const ExperimentConfig& c) {
  json t = {{"family", c.target.family}};
  if (c.target.family == "gaussian") {
    t["mean"] = to_json(c.target.mean);
    t["cov"] = to_json(c.target.covariance);
  } else if (c.target.family == "mixture") {
    t["weights"] = c.target.weights;
    json means = json::array(), covs = json::array();
    for (const auto& m : c.target.means) means.push_back(to_json(m));
    for (const auto& m : c.target.covariances) covs.push_back(to_json(m));
    t["means"] = means;
    t["covs"] = covs;
  } else {
    t["prior_mean"] = to_json(c.target.prior_mean);
    t["prior_cov"] = to_json(c.target.prior_cov);
    t["observation"] = to_json(c.target.observation);
    t["noise_cov"] = to_json(c.target.noise_cov);
  }
  return {{"subcommand", to_string(c.subcommand)},
          {"target", t},
          {"kernel", c.kernel},
          {"bandwidth_heuristic", c.bandwidth_heuristic},
          {"integrator", c.flow.integrator == Integrator::RungeKutta4 ? "rk4" : "euler"},
          {"step_size", c.flow.step_size},
          {"num_steps", c.flow.num_steps},
          {"num_particles", c.flow.num_particles},
          {"seed", c.flow.seed},
          {"record_every", c.flow.record_every},
          {"fixed_batch", c.flow.fixed_batch},
          {"init", {{"mu", to_json(c.init_mu)}, {"a", to_json(c.init_a)}}},
          {"output", c.output},
          {"emit_plot", c.emit_plot},
          {"quadrature_points", c.quadrature_points}};
}

inline Matrix head_rows(const Matrix& m, Eigen::Index k) { return m.topRows(std::min(k, m.rows())); }

// Gaussian q with the sample mean and covariance of the particles.
inline GaussianVariationalParams gaussian_fit(const Matrix& positions) {
  const Moments m = moment_summary(positions);
  return {m.mean, JitteredCholesky(m.covariance).lower()};
}

// Score of the Gaussian described by a kernel context.
inline ScoreField context_score(const KernelContext& ctx) {
  return [ctx](const Vector& x) { return Vector(-ctx.cholesky().solve(x - ctx.mean())); };
}

inline Box plot_region(const ExperimentConfig& c) {
  Box box = gaussian_box(c.init_mu, c.init_a * c.init_a.transpose(), 3.0);
  if (c.target.family == "mixture") {
    for (std::size_t k = 0; k < c.target.means.size(); ++k) {
      box = box.united(gaussian_box(c.target.means[k], c.target.covariances[k], 3.5));
    }
  } else if (const auto m = gaussian_moments(c.target)) {
    box = box.united(gaussian_box(m->first, m->second, 3.5));
  }
  return box;
}

inline std::string panel_title(const TrajectoryRecord& rec) {
  return "step " + std::to_string(rec.step_index) + ", t = " + detail::num(rec.time);
}

inline json record_json(const TrajectoryRecord& rec) {
  json r = {{"step", rec.step_index}, {"time", rec.time}};
  for (const auto& [k, v] : rec.diagnostics) r[k] = v;
  return r;
}

class Run {
 public:
  explicit Run(const ExperimentConfig& c) : config(c), dir(c.output) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory (" + ec.message() + ")", c.output);
  }

  std::string path(const std::string& name) {
    const std::string p = (dir / name).string();
    result.files.push_back(p);
    return p;
  }

  void csv(const std::string& name, const FlowTrajectory& t) { write_csv(path(name), t); }

  void plot(const TargetDensity& target, std::vector<PlotPanel> panels, const PlotStyle& style) {
    if (!config.emit_plot) return;
    write_svg(path("plot.svg"), render_svg(target, std::move(panels), plot_region(config), style));
  }

  const ExperimentConfig& config;
  std::filesystem::path dir;
  ExperimentResult result;
};

inline void add_gaussian_diagnostics(const ExperimentConfig& c, const GaussianVariationalParams& q,
                                     std::map<std::string, double>& diag) {
  if (const auto m = gaussian_moments(c.target)) diag["kl_to_target"] = gaussian_kl(q, m->first, m->second);
}

inline SvgdOptions svgd_options(const ExperimentConfig& c) {
  SvgdOptions o;
  if (c.kernel == "gaussian-ntk") {
    // No Stein form for this kernel: mean-field update against the Gaussian fit.
    o.kernel = gaussian_ntk_kernel();
    o.context_source = ContextSource::FromParticles;
    o.q_score = [](const ParticleEnsemble&, const KernelContext& ctx) { return context_score(ctx); };
  } else {
    o.kernel = rbf_kernel();
    o.median_bandwidth = c.bandwidth_heuristic == "median";
  }
  return o;
}

inline void run_svgd_command(Run& run, json& summary) {
  const auto& c = run.config;
  const TargetDensity target = build_target(c.target);
  const GaussianVariationalParams q0(c.init_mu, c.init_a);
  const ParticleEnsemble init(q0.pushforward_rows(
      standard_normal(mix_seed(c.flow.seed, kInitStream), static_cast<Eigen::Index>(c.flow.num_particles), q0.dim())));
  SvgdOptions o = svgd_options(c);
  o.diagnostics = [&c](const ParticleEnsemble& e, std::map<std::string, double>& diag) {
    add_gaussian_diagnostics(c, gaussian_fit(e.positions), diag);
  };
  const FlowTrajectory t = run_svgd(init, target, o, c.flow);
  run.csv("svgd_particles.csv", t);

  for (const auto& rec : t.records()) summary["records"].push_back(record_json(rec));
  summary["final_moments"] = to_json(moment_summary(std::get<ParticleEnsemble>(t.back().state).positions));
  std::vector<PlotPanel> panels;
  for (const auto& rec : t.records()) {
    panels.push_back({panel_title(rec), Matrix(0, q0.dim()),
                      head_rows(std::get<ParticleEnsemble>(rec.state).positions, kMaxPlotPoints)});
  }
  run.plot(target, std::move(panels), {"", "SVGD particles"});
}

inline void run_bbvi_command(Run& run, json& summary) {
  const auto& c = run.config;
  const TargetDensity target = build_target(c.target);
  const auto n = static_cast<Eigen::Index>(c.flow.num_particles);
  const GaussianVariationalParams q0(c.init_mu, c.init_a);
  const BaseSampleBatch eval = BaseSampleBatch::generate(mix_seed(c.flow.seed, kEvalStream), n, q0.dim());
  const FlowTrajectory t = run_bbvi(q0, target, c.flow, [&](const GaussianVariationalParams& q, auto& diag) {
    diag["elbo"] = elbo_estimate(q, target, eval);
    add_gaussian_diagnostics(c, q, diag);
  });
  run.csv("bbvi_params.csv", t);

  for (const auto& rec : t.records()) summary["records"].push_back(record_json(rec));
  const auto& last = std::get<GaussianVariationalParams>(t.back().state);
  summary["final_moments"] = {{"mean", to_json(last.mu())}, {"covariance", to_json(last.sigma())}};
  std::vector<PlotPanel> panels;
  const Matrix base = head_rows(eval.draws, kMaxPlotPoints);
  for (const auto& rec : t.records()) {
    panels.push_back({panel_title(rec), std::get<GaussianVariationalParams>(rec.state).pushforward_rows(base),
                      Matrix(0, q0.dim())});
  }
  run.plot(target, std::move(panels), {"BBVI samples", ""});
}

inline void run_ganflow_command(Run& run, json& summary) {
  const auto& c = run.config;
  const TargetDensity data = build_target(c.target);
  const GaussianVariationalParams q0(c.init_mu, c.init_a);
  Box data_box = plot_region(c);
  const FlowTrajectory t = run_gan_flow(q0, data, c.flow, {data_box, c.quadrature_points});
  run.csv("generator_params.csv", t);

  for (const auto& rec : t.records()) summary["records"].push_back(record_json(rec));
  const auto& last = std::get<GaussianVariationalParams>(t.back().state);
  summary["final_moments"] = {{"mean", to_json(last.mu())}, {"covariance", to_json(last.sigma())}};
  summary["final_js_divergence"] = t.back().diagnostics.at("js_divergence");
  std::vector<PlotPanel> panels;
  const Matrix base = standard_normal(mix_seed(c.flow.seed, kEvalStream), kMaxPlotPoints, q0.dim());
  for (const auto& rec : t.records()) {
    panels.push_back({panel_title(rec), std::get<GaussianVariationalParams>(rec.state).pushforward_rows(base),
                      Matrix(0, q0.dim())});
  }
  run.plot(data, std::move(panels), {"generator samples", ""});
}

}  // namespace detail

/// Statistics of one matched record of a BBVI / SVGD comparison.
struct CompareRecord {
  std::size_t step;
  double time;
  double energy_distance;
  double baseline;
  double mmd2;
  Moments bbvi;
  Moments svgd;
};

/// BBVI and mean-field SVGD with the Gaussian NTK kernel, started from the
/// same n base samples and recorded at the same steps.
struct CompareOutcome {
  FlowTrajectory bbvi;
  FlowTrajectory svgd;
  Matrix base;
  std::vector<CompareRecord> records;
};

inline CompareOutcome run_compare(const ExperimentConfig& c) {
  const TargetDensity target = build_target(c.target);
  const auto n = static_cast<Eigen::Index>(c.flow.num_particles);
  const GaussianVariationalParams q0(c.init_mu, c.init_a);
  CompareOutcome out;
  out.base = standard_normal(mix_seed(c.flow.seed, kInitStream), n, q0.dim());

  out.bbvi = run_bbvi(q0, target, c.flow);
  out.svgd = run_svgd(ParticleEnsemble(q0.pushforward_rows(out.base)), target, detail::svgd_options(c), c.flow);
  if (out.bbvi.size() != out.svgd.size()) throw Error("compare: BBVI and SVGD recorded different steps");

  const Matrix base = detail::head_rows(out.base, kMaxMetricPoints);
  const auto m = base.rows();
  for (std::size_t i = 0; i < out.bbvi.size(); ++i) {
    const auto& rb = out.bbvi.records()[i];
    const auto& q = std::get<GaussianVariationalParams>(rb.state);
    const Matrix& particles = std::get<ParticleEnsemble>(out.svgd.records()[i].state).positions;
    const Matrix samples = q.pushforward_rows(base);
    const Matrix svgd = detail::head_rows(particles, kMaxMetricPoints);
    const Matrix fresh_a = q.pushforward_rows(standard_normal(mix_seed(c.flow.seed, kBaselineStream + 2 * i), m, q.dim()));
    const Matrix fresh_b =
        q.pushforward_rows(standard_normal(mix_seed(c.flow.seed, kBaselineStream + 2 * i + 1), m, q.dim()));
    out.records.push_back({rb.step_index, rb.time, energy_distance(samples, svgd), energy_distance(fresh_a, fresh_b),
                           rbf_mmd2_median(samples, svgd), moment_summary(samples), moment_summary(particles)});
  }
  return out;
}

namespace detail {

inline void run_compare_command(Run& run, json& summary) {
  const auto& c = run.config;
  const CompareOutcome out = run_compare(c);
  run.csv("bbvi_params.csv", out.bbvi);
  run.csv("svgd_particles.csv", out.svgd);

  double worst = 0.0;
  for (const auto& r : out.records) {
    const double ratio = r.baseline > 0.0 ? r.energy_distance / r.baseline : 0.0;
    worst = std::max(worst, ratio);
    summary["records"].push_back({{"step", r.step},
                                  {"time", r.time},
                                  {"energy_distance", r.energy_distance},
                                  {"baseline_energy_distance", r.baseline},
                                  {"energy_distance_ratio", ratio},
                                  {"rbf_mmd2", r.mmd2},
                                  {"bbvi_moments", to_json(r.bbvi)},
                                  {"svgd_moments", to_json(r.svgd)}});
  }
  summary["max_energy_distance_ratio"] = worst;

  std::vector<PlotPanel> panels;
  const Matrix base = head_rows(out.base, kMaxPlotPoints);
  for (std::size_t i = 0; i < out.bbvi.size(); ++i) {
    const auto& rec = out.bbvi.records()[i];
    panels.push_back({panel_title(rec), std::get<GaussianVariationalParams>(rec.state).pushforward_rows(base),
                      head_rows(std::get<ParticleEnsemble>(out.svgd.records()[i].state).positions, kMaxPlotPoints)});
  }
  run.plot(build_target(c.target), std::move(panels), {});
}

}  // namespace detail

/// Runs the configured experiment, writing CSV trajectories, summary.json and
/// (optionally) plot.svg into config.output. On failure summary.json is still
/// written, with the error, before the exception propagates.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  detail::Run run(config);
  json summary = {{"version", KGFLOW_VERSION}, {"config", detail::config_echo(config)}, {"records", json::array()}};
  const auto finish = [&](const std::string& status) {
    summary["status"] = status;
    summary["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string path = (run.dir / "summary.json").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing", path);
    out << summary.dump(2) << '\n';
    run.result.files.push_back(path);
  };
  try {
    switch (config.subcommand) {
      case Subcommand::Svgd: detail::run_svgd_command(run, summary); break;
      case Subcommand::Bbvi: detail::run_bbvi_command(run, summary); break;
      case Subcommand::Compare: detail::run_compare_command(run, summary); break;
      case Subcommand::GanFlow: detail::run_ganflow_command(run, summary); break;
    }
  } catch (const NumericalError& e) {
    summary["error"] = e.what();
    if (e.step()) summary["failed_step"] = *e.step();
    finish("failed");
    throw;
  }
  finish("ok");
  run.result.summary = summary;
  return run.result;
}

}  // namespace kgflow::experiment
