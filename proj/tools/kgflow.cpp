// kgflow: runs svgd, bbvi, compare or ganflow experiments from a config file.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "kgflow/experiment/runner.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kNumericalFailure = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw kgflow::experiment::IoError("cannot read config", path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel gradient flows: SVGD, BBVI and GAN dynamics", "kgflow"};
  app.set_version_flag("--version", std::string(KGFLOW_VERSION));
  std::string subcommand, config_path, output;
  std::uint64_t seed = 0;
  bool plot = false;
  app.add_option("subcommand", subcommand, "Overrides the config's subcommand")
      ->check(CLI::IsMember({"svgd", "bbvi", "compare", "ganflow"}));
  app.add_option("--config", config_path, "Config file (key = value)")->required();
  app.add_option("--output", output, "Output directory (overrides 'output')");
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides 'seed')");
  app.add_flag("--plot", plot, "Write plot.svg (same as emit_plot = true)");
  CLI11_PARSE(app, argc, argv);

  using namespace kgflow;
  using namespace kgflow::experiment;
  try {
    const std::string text = read_file(config_path);
    Overrides overrides;
    if (!subcommand.empty()) overrides.emplace_back("subcommand", subcommand);
    if (!output.empty()) overrides.emplace_back("output", output);
    if (*seed_opt) overrides.emplace_back("seed", std::to_string(seed));
    if (plot) overrides.emplace_back("emit_plot", "true");
    const ExperimentConfig config = parse_config(text, overrides);
    const ExperimentResult result = run_experiment(config);
    for (const auto& f : result.files) std::cout << f << '\n';
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure";
    if (e.step()) std::cerr << " at step " << *e.step();
    std::cerr << ": " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalFailure;
  }
}
