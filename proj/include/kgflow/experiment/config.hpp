#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kgflow/errors.hpp"
#include "kgflow/linalg.hpp"
#include "kgflow/targets.hpp"
#include "kgflow/trajectory.hpp"

namespace kgflow::experiment {

enum class Subcommand { Svgd, Bbvi, Compare, GanFlow };

struct TargetSpec {
  std::string family = "gaussian";  // gaussian | mixture | conjugate
  // gaussian
  Vector mean;
  Matrix covariance;
  // mixture
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  // conjugate: prior N(prior_mean, prior_cov), observation ~ N(x, noise_cov)
  Vector prior_mean;
  Matrix prior_cov;
  Vector observation;
  Matrix noise_cov;

  Eigen::Index dim() const;
};

struct ExperimentConfig {
  Subcommand subcommand = Subcommand::Svgd;
  TargetSpec target;
  std::string kernel = "rbf";
  std::string bandwidth_heuristic = "none";
  FlowConfig flow;
  Vector init_mu;
  Matrix init_a;
  std::string output = "out";
  bool emit_plot = false;
  int quadrature_points = 2048;
};

inline std::string to_string(Subcommand s) {
  switch (s) {
    case Subcommand::Svgd: return "svgd";
    case Subcommand::Bbvi: return "bbvi";
    case Subcommand::Compare: return "compare";
    case Subcommand::GanFlow: return "ganflow";
  }
  return "?";
}

inline Eigen::Index TargetSpec::dim() const {
  if (family == "gaussian") return mean.size();
  if (family == "mixture") return means.empty() ? 0 : means.front().size();
  return prior_mean.size();
}

/// The target density described by a spec.
inline TargetDensity build_target(const TargetSpec& t) {
  if (t.family == "gaussian") return make_gaussian(t.mean, t.covariance);
  if (t.family == "mixture") return make_mixture({t.weights, t.means, t.covariances});
  return posterior_from_prior_likelihood(make_gaussian(t.prior_mean, t.prior_cov),
                                         gaussian_likelihood(t.observation, t.noise_cov));
}

/// Exact Gaussian moments of the target, when it is Gaussian.
inline std::optional<std::pair<Vector, Matrix>> gaussian_moments(const TargetSpec& t) {
  if (t.family == "gaussian") return std::pair{t.mean, t.covariance};
  if (t.family == "conjugate") {
    const Matrix prior_prec = t.prior_cov.inverse();
    const Matrix noise_prec = t.noise_cov.inverse();
    const Matrix cov = (prior_prec + noise_prec).inverse();
    const Vector mean = cov * (prior_prec * t.prior_mean + noise_prec * t.observation);
    return std::pair{mean, Matrix(0.5 * (cov + cov.transpose()))};
  }
  return std::nullopt;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

struct Entry {
  std::string value;
  int line = 0;
};

class Reader {
 public:
  explicit Reader(std::map<std::string, Entry> entries) : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  int line(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(what, key, line(key));
  }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.push_back(key);
    return has(key) ? entries_.at(key).value : fallback;
  }

  std::string choice(const std::string& key, const std::string& fallback, const std::vector<std::string>& options) {
    const std::string v = text(key, fallback);
    if (std::find(options.begin(), options.end(), v) == options.end()) {
      std::string list;
      for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
      fail(key, "unknown value '" + v + "' (valid options: " + list + ")");
    }
    return v;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return parse_real(key, text(key, ""));
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const std::string v = text(key, "");
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(key, "expected a non-negative integer, got '" + v + "'");
    return out;
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string v = text(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, "expected true or false, got '" + v + "'");
  }

  // Numbers separated by commas or whitespace.
  Vector vector(const std::string& key) {
    const std::string v = text(key, "");
    std::string spaced = v;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::istringstream in(spaced);
    std::vector<double> xs;
    std::string tok;
    while (in >> tok) xs.push_back(parse_real(key, tok));
    if (xs.empty()) fail(key, "expected at least one number");
    return Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  }

  // Rows separated by ';'.
  Matrix matrix(const std::string& key) {
    const auto rows = split(text(key, ""), ';');
    std::vector<Vector> parsed;
    for (const auto& r : rows) {
      if (r.empty()) continue;
      parsed.push_back(parse_row(key, r));
    }
    if (parsed.empty()) fail(key, "expected a matrix");
    Matrix m(static_cast<Eigen::Index>(parsed.size()), parsed.front().size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      if (parsed[i].size() != m.cols()) fail(key, "matrix rows have different lengths");
      m.row(static_cast<Eigen::Index>(i)) = parsed[i].transpose();
    }
    return m;
  }

  // Matrices separated by '|'.
  std::vector<Matrix> matrices(const std::string& key) {
    std::vector<Matrix> out;
    for (const auto& block : split(text(key, ""), '|')) {
      Matrix m;
      std::vector<Vector> parsed;
      for (const auto& r : split(block, ';'))
        if (!r.empty()) parsed.push_back(parse_row(key, r));
      if (parsed.empty()) fail(key, "empty matrix in list");
      m.resize(static_cast<Eigen::Index>(parsed.size()), parsed.front().size());
      for (std::size_t i = 0; i < parsed.size(); ++i) {
        if (parsed[i].size() != m.cols()) fail(key, "matrix rows have different lengths");
        m.row(static_cast<Eigen::Index>(i)) = parsed[i].transpose();
      }
      out.push_back(m);
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, entry] : entries_) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) fail(key, "unknown key");
    }
  }

 private:
  double parse_real(const std::string& key, const std::string& v) const {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(key, "expected a number, got '" + v + "'");
    return out;
  }

  Vector parse_row(const std::string& key, const std::string& row) const {
    std::string spaced = row;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::istringstream in(spaced);
    std::vector<double> xs;
    std::string tok;
    while (in >> tok) xs.push_back(parse_real(key, tok));
    return Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  }

  std::map<std::string, Entry> entries_;
  std::vector<std::string> used_;
};

inline std::map<std::string, Entry> tokenize(const std::string& text) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", s, line);
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", "", line);
    if (entries.count(key)) throw ConfigError("duplicate key (first on line " + std::to_string(entries[key].line) + ")", key, line);
    entries[key] = {value, line};
  }
  return entries;
}

inline void require_spd(Reader& r, const std::string& key, const Matrix& m, Eigen::Index d) {
  if (m.rows() != d || m.cols() != d) {
    r.fail(key, "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
  }
  if (!is_symmetric(m) || !is_spd(m)) r.fail(key, "matrix must be symmetric positive-definite");
}

inline TargetSpec read_target(Reader& r) {
  TargetSpec t;
  t.family = r.choice("target", "gaussian", {"gaussian", "mixture", "conjugate"});
  if (t.family == "gaussian") {
    t.mean = r.has("target.mean") ? r.vector("target.mean") : Vector::Zero(1);
    const auto d = t.mean.size();
    t.covariance = r.has("target.cov") ? r.matrix("target.cov") : Matrix::Identity(d, d);
    require_spd(r, "target.cov", t.covariance, d);
  } else if (t.family == "mixture") {
    for (const char* k : {"target.weights", "target.means", "target.covs"}) {
      if (!r.has(k)) r.fail(k, "required for target = mixture");
    }
    const Vector w = r.vector("target.weights");
    const Matrix means = r.matrix("target.means");
    t.covariances = r.matrices("target.covs");
    const auto k = w.size();
    if (means.rows() != k) r.fail("target.means", "need one row per weight");
    if (static_cast<Eigen::Index>(t.covariances.size()) != k) r.fail("target.covs", "need one matrix per weight");
    for (Eigen::Index i = 0; i < k; ++i) {
      if (!(w(i) > 0.0)) r.fail("target.weights", "weights must be positive");
      t.weights.push_back(w(i));
      t.means.push_back(means.row(i).transpose());
      require_spd(r, "target.covs", t.covariances[static_cast<std::size_t>(i)], means.cols());
    }
    if (std::abs(w.sum() - 1.0) > 1e-9) r.fail("target.weights", "weights must sum to 1");
  } else {
    t.prior_mean = r.has("target.prior_mean") ? r.vector("target.prior_mean") : Vector::Zero(1);
    const auto d = t.prior_mean.size();
    t.prior_cov = r.has("target.prior_cov") ? r.matrix("target.prior_cov") : Matrix::Identity(d, d);
    t.observation = r.has("target.observation") ? r.vector("target.observation") : Vector::Ones(d);
    t.noise_cov = r.has("target.noise_cov") ? r.matrix("target.noise_cov") : Matrix::Identity(d, d);
    require_spd(r, "target.prior_cov", t.prior_cov, d);
    require_spd(r, "target.noise_cov", t.noise_cov, d);
    if (t.observation.size() != d) r.fail("target.observation", "dimension differs from target.prior_mean");
  }
  return t;
}

}  // namespace detail

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses the key = value config format. Blank lines and '#' comments are
/// ignored. Every error names the key and line. `overrides` (from the command
/// line) replace file entries and carry no line number.
inline ExperimentConfig parse_config(const std::string& text, const Overrides& overrides = {}) {
  auto entries = detail::tokenize(text);
  for (const auto& [key, value] : overrides) entries[key] = {value, 0};
  detail::Reader r(std::move(entries));
  ExperimentConfig c;

  const std::string sub = r.choice("subcommand", "svgd", {"svgd", "bbvi", "compare", "ganflow"});
  c.subcommand = sub == "svgd" ? Subcommand::Svgd
                 : sub == "bbvi" ? Subcommand::Bbvi
                 : sub == "compare" ? Subcommand::Compare
                                    : Subcommand::GanFlow;
  c.target = detail::read_target(r);
  const auto d = c.target.dim();

  c.kernel = r.choice("kernel", c.subcommand == Subcommand::Svgd ? "rbf" : "gaussian-ntk", {"rbf", "gaussian-ntk"});
  c.bandwidth_heuristic = r.choice("bandwidth_heuristic", "none", {"none", "median"});
  const std::string integrator = r.choice("integrator", "euler", {"euler", "rk4"});
  c.flow.integrator = integrator == "rk4" ? Integrator::RungeKutta4 : Integrator::Euler;

  c.flow.step_size = r.real("step_size", 0.05);
  if (!(c.flow.step_size > 0.0) || !std::isfinite(c.flow.step_size)) {
    r.fail("step_size", "must be positive and finite");
  }
  c.flow.num_steps = r.count("num_steps", 2000);
  c.flow.num_particles = r.count("num_particles", 200);
  if (c.flow.num_particles < 2) r.fail("num_particles", "must be at least 2");
  c.flow.seed = r.count("seed", 0);
  c.flow.record_every = r.count("record_every", std::min<std::uint64_t>(100, std::max<std::uint64_t>(1, c.flow.num_steps)));
  if (c.flow.record_every < 1) r.fail("record_every", "must be positive");
  if (c.flow.num_steps > 0 && c.flow.record_every > c.flow.num_steps) {
    r.fail("record_every", "must not exceed num_steps");
  }
  c.flow.fixed_batch = r.flag("fixed_batch", false);

  c.init_mu = r.has("init.mu") ? r.vector("init.mu") : Vector::Zero(d);
  if (c.init_mu.size() != d) r.fail("init.mu", "dimension differs from the target (" + std::to_string(d) + ")");
  c.init_a = r.has("init.a") ? r.matrix("init.a") : Matrix::Identity(d, d);
  if (c.init_a.rows() != d || c.init_a.cols() != d) {
    r.fail("init.a", "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
  }
  if (condition_number(c.init_a) >= kMaxConditionNumber) r.fail("init.a", "matrix is singular or ill-conditioned");

  c.output = r.text("output", "out");
  if (c.output.empty()) r.fail("output", "must not be empty");
  c.emit_plot = r.flag("emit_plot", false);
  c.quadrature_points = static_cast<int>(r.count("quadrature_points", 2048));
  if (c.quadrature_points < 16) r.fail("quadrature_points", "must be at least 16");

  // bbvi, compare and ganflow all move along the Gaussian family's kernel.
  if (c.subcommand != Subcommand::Svgd && c.kernel != "gaussian-ntk") {
    r.fail("kernel", to_string(c.subcommand) + " uses the gaussian-ntk kernel (valid options: gaussian-ntk)");
  }
  if (c.kernel != "rbf" && c.bandwidth_heuristic != "none") {
    r.fail("bandwidth_heuristic", "only applies to the rbf kernel");
  }
  if (c.subcommand == Subcommand::GanFlow && c.target.family == "conjugate") {
    r.fail("target", "ganflow needs a normalized data density (gaussian or mixture)");
  }
  if (c.subcommand == Subcommand::GanFlow && d > 2) {
    r.fail("target", "ganflow evaluates the JS divergence by quadrature and supports d <= 2");
  }
  if (c.emit_plot && d > 2) r.fail("emit_plot", "plots support d = 1 or d = 2");
  r.reject_unknown();

  return c;
}

}  // namespace kgflow::experiment
