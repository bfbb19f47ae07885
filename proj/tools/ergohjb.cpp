#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "ergohjb/ergohjb.hpp"

using namespace ergohjb;

namespace {

struct Overrides {
  std::string config = "quadratic-1d";
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> paths;
  std::optional<double> T;
  std::optional<double> dt;
  std::optional<double> burn_in;
  std::optional<std::string> control;
};

int run(const Overrides& o, const std::optional<std::vector<std::string>>& stages) {
  RunConfig cfg;
  try {
    cfg = load_config(o.config);
    if (o.out) cfg.output = *o.out;
    if (o.seed) cfg.seed = *o.seed;
    if (o.threads) {
      if (*o.threads < 1) throw ParameterError("--threads must be >= 1");
      cfg.threads = *o.threads;
    }
    if (o.paths) cfg.mc.paths = *o.paths;
    if (o.T) cfg.mc.T = *o.T;
    if (o.dt) cfg.mc.dt = *o.dt;
    if (o.burn_in) cfg.mc.burn_in = *o.burn_in;
    if (o.control) cfg.control = parse_control_choice(*o.control);
    if (stages) cfg.stages = *stages;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    const PipelineResult r = run_pipeline(cfg);
    std::cout << r.summary.dump(2) << "\n";
    if (r.exit_code != 0) std::cerr << "one or more audits failed; see " << cfg.output << "/audits.md\n";
    return r.exit_code;
  } catch (const StageError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "stage output failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Critical ergodic value of weakly coupled viscous Hamilton-Jacobi systems"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "built-in config name (quadratic-1d) or path to a RunConfig JSON file")
      ->capture_default_str();
  app.add_option("--out", o.out, "output directory (default from config)");
  app.add_option("--seed", o.seed, "Monte Carlo seed (default from config)");
  app.add_option("--threads", o.threads, "worker threads; results do not depend on it");

  auto* solve = app.add_subcommand("solve", "solve for lambda and u, extract the feedback control");
  auto* lp = app.add_subcommand("lp", "solve the occupation-measure LP");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo estimate of the long-run average cost");
  sim->add_option("--paths", o.paths, "number of paths");
  sim->add_option("--T", o.T, "horizon");
  sim->add_option("--dt", o.dt, "time step");
  sim->add_option("--burn-in", o.burn_in, "discarded fraction of the horizon");
  sim->add_option("--control", o.control, "extracted | zero | linear:<c>");
  auto* audit = app.add_subcommand("audit", "solve, then run the structural audits");
  auto* pipe = app.add_subcommand("pipeline", "run the stages listed in the config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (solve->parsed()) return run(o, std::vector<std::string>{"solve"});
  if (lp->parsed()) return run(o, std::vector<std::string>{"lp"});
  if (sim->parsed()) return run(o, std::vector<std::string>{"simulate"});
  if (audit->parsed()) return run(o, std::vector<std::string>{"solve", "audit"});
  if (pipe->parsed()) return run(o, std::nullopt);
  return 2;
}
