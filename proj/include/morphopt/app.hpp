#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphopt/evaluation.hpp"
#include "morphopt/optimizer.hpp"

namespace morphopt {

namespace fs = std::filesystem;

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

/// Everything a run needs.  Optional paths fall back to the built-in defaults.
struct RunConfig {
  std::optional<fs::path> library_path;
  std::optional<fs::path> task_path;
  std::optional<fs::path> environment_path;
  ObjectiveWeights weights;
  std::string optimizer = "cmaes";
  int population = 20;
  int generations = 100;
  double sigma0 = 0.25;
  GaConfig ga;
  ControllerConfig controller;
  IkOptions ik;
  int warm_starts = 5;
  Workcell workcell;
  double platform_height = 0.5;
  fs::path out = "runs";
  std::uint64_t seed = 1;
  int parallel = default_thread_count();
  bool fast = false;
};

inline void validate_run_config(const RunConfig& c) {
  validate_weights(c.weights);
  validate_controller_config(c.controller);
  if (c.optimizer != "cmaes" && c.optimizer != "ga") throw ValidationError("optimizer must be cmaes or ga");
  if (c.population < 1 || c.generations < 1) throw ValidationError("population and generations must be positive");
  if (c.warm_starts < 1) throw ValidationError("warm_starts must be at least 1");
  if (!c.workcell.valid()) throw ValidationError("invalid workcell");
  for (const auto* p : {&c.library_path, &c.task_path, &c.environment_path})
    if (*p && !fs::exists(**p)) throw ValidationError("file not found: " + (*p)->string());
}

/// The --fast profile: 10 Hz reference and 30 generations.
inline void apply_fast_profile(RunConfig& c) {
  c.fast = true;
  c.controller.dt = 0.1;
  c.generations = 30;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  auto path = [](const std::optional<fs::path>& p) { return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr); };
  return {{"library", path(c.library_path)},
          {"task", path(c.task_path)},
          {"environment", path(c.environment_path)},
          {"weights", {{"w", c.weights.w}, {"w_f", c.weights.w_f}, {"w_m", c.weights.w_m}, {"xi", c.weights.xi}}},
          {"optimizer", c.optimizer},
          {"population", c.population},
          {"generations", c.generations},
          {"sigma0", c.sigma0},
          {"ga",
           {{"mutation_prob", c.ga.mutation_prob},
            {"crossover_prob", c.ga.crossover_prob},
            {"position_step", c.ga.position_step},
            {"angle_step", c.ga.angle_step}}},
          {"controller",
           {{"position_gain", c.controller.position_gain},
            {"orientation_gain", c.controller.orientation_gain},
            {"regularizer_gain", c.controller.regularizer},
            {"horizon", c.controller.horizon},
            {"dt", c.controller.dt}}},
          {"warm_starts", c.warm_starts},
          {"workcell",
           {{"x", {c.workcell.x_min, c.workcell.x_max}},
            {"y", {c.workcell.y_min, c.workcell.y_max}},
            {"theta", {c.workcell.theta_min, c.workcell.theta_max}}}},
          {"platform_height", c.platform_height},
          {"out", c.out.string()},
          {"seed", c.seed},
          {"fast", c.fast}};
}

/// Reads a config file.  Relative paths inside it resolve against its
/// directory.  A run manifest is accepted too, via its "config" member.
inline RunConfig run_config_from_json(const nlohmann::json& root, const fs::path& base_dir = {}) {
  const nlohmann::json& j = root.contains("config") && root["config"].is_object() ? root["config"] : root;
  RunConfig c;
  auto path = [&](const char* key) -> std::optional<fs::path> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    fs::path p = j[key].get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  auto range = [](const nlohmann::json& v, double& lo, double& hi) {
    const auto r = v.get<std::vector<double>>();
    if (r.size() != 2) throw ValidationError("ranges must have two entries");
    lo = r[0];
    hi = r[1];
  };
  try {
    c.library_path = path("library");
    c.task_path = path("task");
    c.environment_path = path("environment");
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.w = w.value("w", c.weights.w);
      c.weights.w_f = w.value("w_f", c.weights.w_f);
      c.weights.w_m = w.value("w_m", c.weights.w_m);
      c.weights.xi = w.value("xi", c.weights.xi);
    }
    c.optimizer = j.value("optimizer", c.optimizer);
    c.population = j.value("population", c.population);
    c.generations = j.value("generations", c.generations);
    c.sigma0 = j.value("sigma0", c.sigma0);
    if (j.contains("ga")) {
      const auto& g = j["ga"];
      c.ga.mutation_prob = g.value("mutation_prob", c.ga.mutation_prob);
      c.ga.crossover_prob = g.value("crossover_prob", c.ga.crossover_prob);
      c.ga.position_step = g.value("position_step", c.ga.position_step);
      c.ga.angle_step = g.value("angle_step", c.ga.angle_step);
    }
    if (j.contains("controller")) {
      const auto& k = j["controller"];
      c.controller.position_gain = k.value("position_gain", c.controller.position_gain);
      c.controller.orientation_gain = k.value("orientation_gain", c.controller.orientation_gain);
      c.controller.regularizer = k.value("regularizer_gain", c.controller.regularizer);
      c.controller.horizon = k.value("horizon", c.controller.horizon);
      c.controller.dt = k.value("dt", c.controller.dt);
    }
    c.warm_starts = j.value("warm_starts", c.warm_starts);
    if (j.contains("workcell")) {
      const auto& w = j["workcell"];
      if (w.contains("x")) range(w["x"], c.workcell.x_min, c.workcell.x_max);
      if (w.contains("y")) range(w["y"], c.workcell.y_min, c.workcell.y_max);
      if (w.contains("theta")) range(w["theta"], c.workcell.theta_min, c.workcell.theta_max);
    }
    c.platform_height = j.value("platform_height", c.platform_height);
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.fast = j.value("fast", false);
    if (c.fast) apply_fast_profile(c);
    if (j.contains("generations")) c.generations = j["generations"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  try {
    return run_config_from_json(read_json_file(path), path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

/// Parses "w,wf,wm" or "w,wf,wm,xi".
inline ObjectiveWeights parse_weights(const std::string& text, ObjectiveWeights base = {}) {
  std::vector<double> v;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad weight value '" + item + "'");
    }
  }
  if (v.size() != 3 && v.size() != 4) throw ValidationError("--weights expects w,wf,wm[,xi]");
  base.w = v[0];
  base.w_f = v[1];
  base.w_m = v[2];
  if (v.size() == 4) base.xi = v[3];
  validate_weights(base);
  return base;
}

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad integer '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty list");
  return out;
}

inline DrillingTaskParams load_task(const std::optional<fs::path>& path) {
  if (!path) return default_drilling_params();
  try {
    return task_from_json(read_json_file(*path));
  } catch (const ValidationError& e) {
    throw ValidationError(path->string() + ": " + e.what());
  }
}

inline EvaluationContext make_context(const RunConfig& c) {
  validate_run_config(c);
  EvaluationContext ctx;
  ctx.library = c.library_path ? load_library(*c.library_path) : default_library();
  ctx.trajectory = drilling_task(load_task(c.task_path), c.controller.dt);
  if (c.environment_path) {
    try {
      ctx.environment = environment_from_json(read_json_file(*c.environment_path));
    } catch (const ValidationError& e) {
      throw ValidationError(c.environment_path->string() + ": " + e.what());
    }
  } else {
    ctx.environment = default_environment(c.platform_height);
  }
  ctx.weights = c.weights;
  ctx.controller = c.controller;
  ctx.ik = c.ik;
  ctx.workcell = c.workcell;
  ctx.warm_starts = c.warm_starts;
  ctx.platform_height = c.platform_height;
  return ctx;
}

inline GenomeEvaluator make_evaluator(const EvaluationContext& ctx, std::uint64_t seed) {
  return [&ctx, seed](const DesignGenome& g) { return evaluate(g, ctx, seed); };
}

/// Runs the configured optimizer with the run seed for search and evaluation.
inline OptimizationResult run_optimizer(const RunConfig& c, const EvaluationContext& ctx, const std::string& method,
                                        int population, std::uint64_t seed) {
  const int n = static_cast<int>(ctx.library.size());
  const GenomeEvaluator eval = make_evaluator(ctx, seed);
  if (method == "cmaes") {
    CmaesConfig cfg;
    cfg.population = population;
    cfg.generations = c.generations;
    cfg.sigma0 = c.sigma0;
    cfg.seed = seed;
    return cmaes_optimize(eval, n, ctx.workcell, cfg, c.parallel);
  }
  GaConfig cfg = c.ga;
  cfg.population = population;
  cfg.generations = c.generations;
  cfg.seed = seed;
  return ga_optimize(eval, n, ctx.workcell, cfg, c.parallel);
}

inline std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

/// Table-I style summary: one row per run.
inline void print_report_table(std::ostream& out, const std::string& label, const EvaluationReport& r) {
  out << std::left << std::setw(10) << "case" << std::setw(14) << "E_track" << std::setw(10) << "M_man"
      << std::setw(10) << "F_eff" << std::setw(14) << "E" << "feasible\n";
  out << std::setw(10) << label << std::setw(14) << std::setprecision(4) << r.e_track << std::setw(10)
      << std::setprecision(3) << r.m_man << std::setw(10) << std::setprecision(4) << r.f_eff << std::setw(14)
      << std::setprecision(6) << r.e << (r.feasible ? "yes" : "no") << '\n';
}

inline nlohmann::json best_solution_json(const OptimizationResult& res, std::uint64_t seed) {
  return {{"genome", genome_to_json(res.best_genome)},
          {"evaluation_seed", seed},
          {"morphology", res.best_report.morphology},
          {"pose", {res.best_report.pose.x, res.best_report.pose.y, res.best_report.pose.theta}},
          {"report", report_to_json(res.best_report)}};
}

/// Re-runs the winning warm start to export its joint trajectory.
inline void write_best_rollout(const fs::path& path, const EvaluationContext& ctx, const DesignGenome& genome,
                               const EvaluationReport& report, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  if (report.chosen_warm_start < 0) {
    out << "t\n";
    return;
  }
  const MorphologyState morph = decode(genome.module_states, static_cast<int>(ctx.library.size()), seed);
  const KinematicChain chain = assemble(ctx.library, morph, genome.pose, ctx.platform_height);
  const WarmStartSet ws = warm_starts(chain, ctx.trajectory, ctx.warm_starts, seed ^ 0x9e3779b97f4a7c15ULL, ctx.ik);
  const Rollout r = rollout(chain, ws.solutions.at(static_cast<std::size_t>(report.chosen_warm_start)),
                            ctx.trajectory, ctx.controller);
  write_rollout_csv(out, r);
}

inline int cmd_optimize(const RunConfig& c, std::ostream& log = std::cout) {
  const EvaluationContext ctx = make_context(c);
  fs::create_directories(c.out);
  const std::string started = timestamp_utc();
  const OptimizationResult res = run_optimizer(c, ctx, c.optimizer, c.population, c.seed);

  nlohmann::json manifest{{"config", run_config_to_json(c)},
                          {"started", started},
                          {"finished", timestamp_utc()},
                          {"seed", c.seed},
                          {"library_hash", library_hash(ctx.library)},
                          {"trajectory_samples", ctx.trajectory.size()},
                          {"evaluations", res.evaluations},
                          {"restarts", res.restarts},
                          {"best_E", res.best_report.e}};
  if (c.optimizer == "cmaes")
    manifest["cmaes_constants"] =
        cmaes_constants_json(cmaes_constants(static_cast<int>(ctx.library.size()) + 3, c.population));
  write_json_file(c.out / "manifest.json", manifest);
  {
    std::ofstream conv(c.out / "convergence.csv");
    write_convergence_csv(conv, res.logs);
  }
  write_json_file(c.out / "best_solution.json", best_solution_json(res, c.seed));
  write_best_rollout(c.out / "best_rollout.csv", ctx, res.best_genome, res.best_report, c.seed);

  std::ostringstream label;
  label << c.optimizer << "-s" << c.seed;
  print_report_table(log, label.str(), res.best_report);
  log << "morphology " << morphology_string(res.best_report.morphology) << "  pose (" << res.best_report.pose.x << ", "
      << res.best_report.pose.y << ", " << res.best_report.pose.theta << ")\n";
  log << "results in " << c.out.string() << '\n';
  return kExitOk;
}

/// Accepts either a bare genome or a best-solution file; the latter also
/// supplies the evaluation seed unless one is given explicitly.
inline int cmd_evaluate(const fs::path& genome_file, const RunConfig& c, std::optional<std::uint64_t> seed,
                        std::ostream& out = std::cout) {
  const nlohmann::json j = read_json_file(genome_file);
  const bool wrapped = j.contains("genome");
  const DesignGenome g = genome_from_json(wrapped ? j["genome"] : j);
  std::uint64_t s = c.seed;
  if (seed) s = *seed;
  else if (wrapped && j.contains("evaluation_seed")) s = j["evaluation_seed"].get<std::uint64_t>();
  const EvaluationContext ctx = make_context(c);
  const EvaluationReport r = evaluate(g, ctx, s);
  out << report_to_json(r).dump(2) << '\n';
  return kExitOk;
}

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Linear-interpolation quantiles of a sample.
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("quartiles of an empty sample");
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {q(0.25), q(0.5), q(0.75)};
}

/**
 * CMA-ES against the GA at matched population and generation budget for each
 * seed; writes one per-generation quartile CSV per population size.
 */
inline int cmd_compare(const RunConfig& c, const std::vector<int>& seeds, const std::vector<int>& populations,
                       std::ostream& log = std::cout) {
  if (seeds.size() < 2) throw ValidationError("compare needs at least two seeds");
  const EvaluationContext ctx = make_context(c);
  fs::create_directories(c.out);
  nlohmann::json manifest{{"config", run_config_to_json(c)},
                          {"started", timestamp_utc()},
                          {"seeds", seeds},
                          {"populations", populations},
                          {"library_hash", library_hash(ctx.library)}};
  for (int pop : populations) {
    std::vector<std::vector<GenerationLog>> cma_logs, ga_logs;
    for (int s : seeds) {
      for (const std::string method : {"cmaes", "ga"}) {
        const OptimizationResult r = run_optimizer(c, ctx, method, pop, static_cast<std::uint64_t>(s));
        std::ofstream conv(c.out / (method + "_pop" + std::to_string(pop) + "_seed" + std::to_string(s) + ".csv"));
        write_convergence_csv(conv, r.logs);
        (method == "cmaes" ? cma_logs : ga_logs).push_back(r.logs);
        log << method << " pop " << pop << " seed " << s << " best E " << r.best_report.e << '\n';
      }
    }
    std::ofstream csv(c.out / ("compare_pop" + std::to_string(pop) + ".csv"));
    csv << "generation,evaluations_cmaes,evaluations_ga,cmaes_q1,cmaes_median,cmaes_q3,ga_q1,ga_median,ga_q3\n";
    csv.precision(12);
    for (int g = 0; g < c.generations; ++g) {
      std::vector<double> a, b;
      for (const auto& l : cma_logs) a.push_back(l[static_cast<std::size_t>(g)].best_e);
      for (const auto& l : ga_logs) b.push_back(l[static_cast<std::size_t>(g)].best_e);
      const Quartiles qa = quartiles(a), qb = quartiles(b);
      csv << g + 1 << ',' << cma_logs.front()[static_cast<std::size_t>(g)].evaluations << ','
          << ga_logs.front()[static_cast<std::size_t>(g)].evaluations << ',' << qa.q1 << ',' << qa.median << ','
          << qa.q3 << ',' << qb.q1 << ',' << qb.median << ',' << qb.q3 << '\n';
    }
  }
  manifest["finished"] = timestamp_utc();
  write_json_file(c.out / "manifest.json", manifest);
  return kExitOk;
}

inline int cmd_trajectory(const std::optional<fs::path>& task_path, double dt, std::ostream& out = std::cout) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  write_trajectory_csv(out, drilling_task(load_task(task_path), dt));
  return kExitOk;
}

/// Writes the built-in library, task, environment and config as editable JSON.
inline int cmd_export_defaults(const fs::path& dir) {
  fs::create_directories(dir);
  save_library(dir / "library.json", default_library());
  write_json_file(dir / "task.json", task_to_json(default_drilling_params()));
  write_json_file(dir / "environment.json", environment_to_json(default_environment()));
  RunConfig c;
  c.library_path = "library.json";
  c.task_path = "task.json";
  c.environment_path = "environment.json";
  nlohmann::json j = run_config_to_json(c);
  j.erase("out");
  write_json_file(dir / "config.json", j);
  return kExitOk;
}

}  // namespace morphopt
