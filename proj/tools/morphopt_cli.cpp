// Command-line front end: optimize, evaluate, compare, trajectory.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "morphopt/app.hpp"

using namespace morphopt;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string optimizer;
  std::string population;
  std::optional<int> generations;
  std::string weights;
  bool fast = false;
  std::optional<int> parallel;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Run config JSON (a run manifest also works)");
  app->add_option("--seed", f.seed, "Seed for search, tie-breaking and warm starts");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--optimizer", f.optimizer, "cmaes or ga")->check(CLI::IsMember({"cmaes", "ga"}));
  app->add_option("--population", f.population, "Samples per generation (comma list for compare)");
  app->add_option("--generations", f.generations, "Generation budget");
  app->add_option("--weights", f.weights, "w,wf,wm[,xi]");
  app->add_flag("--fast", f.fast, "10 Hz reference and 30 generations");
  app->add_option("--parallel", f.parallel, "Worker threads (default: all cores)");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.fast) apply_fast_profile(c);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (!f.optimizer.empty()) c.optimizer = f.optimizer;
  if (!f.population.empty()) c.population = parse_int_list(f.population).front();
  if (f.generations) c.generations = *f.generations;
  if (!f.weights.empty()) c.weights = parse_weights(f.weights, c.weights);
  if (f.parallel) c.parallel = std::max(1, *f.parallel);
  validate_run_config(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-optimization of modular manipulator morphology and mounted pose"};
  app.require_subcommand(1);

  CommonFlags opt_flags, eval_flags, cmp_flags;
  auto* optimize = app.add_subcommand("optimize", "Run CMA-ES or the GA baseline");
  add_common(optimize, opt_flags);

  auto* evaluate = app.add_subcommand("evaluate", "Score one genome and print the report");
  std::string genome_file;
  evaluate->add_option("genome", genome_file, "Genome or best_solution.json")->required();
  add_common(evaluate, eval_flags);

  auto* compare = app.add_subcommand("compare", "CMA-ES vs GA at matched budgets over several seeds");
  std::string seeds = "1,2,3,4,5";
  compare->add_option("--seeds", seeds, "Comma-separated seeds (at least two)");
  add_common(compare, cmp_flags);

  auto* trajectory = app.add_subcommand("trajectory", "Dump the resampled reference trajectory as CSV");
  std::string task_file;
  double dt = 0.01;
  std::string traj_out;
  trajectory->add_option("--task", task_file, "Task JSON (default: built-in drilling task)");
  trajectory->add_option("--dt", dt, "Sample period in seconds");
  trajectory->add_option("--out", traj_out, "Output CSV (default: stdout)");

  auto* defaults = app.add_subcommand("export-defaults", "Write the built-in library, task, environment and config");
  std::string defaults_dir = "config";
  defaults->add_option("dir", defaults_dir, "Target directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*optimize) return cmd_optimize(resolve(opt_flags));
    if (*evaluate) {
      const RunConfig c = resolve(eval_flags);
      return cmd_evaluate(genome_file, c, eval_flags.seed);
    }
    if (*compare) {
      const RunConfig c = resolve(cmp_flags);
      const std::vector<int> pops =
          cmp_flags.population.empty() ? std::vector<int>{c.population} : parse_int_list(cmp_flags.population);
      std::vector<int> seed_list = parse_int_list(seeds);
      return cmd_compare(c, seed_list, pops);
    }
    if (*trajectory) {
      const std::optional<fs::path> task = task_file.empty() ? std::nullopt : std::optional<fs::path>(task_file);
      if (traj_out.empty()) return cmd_trajectory(task, dt);
      std::ofstream out(traj_out);
      if (!out) throw std::runtime_error("cannot write '" + traj_out + "'");
      return cmd_trajectory(task, dt, out);
    }
    if (*defaults) return cmd_export_defaults(defaults_dir);
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
