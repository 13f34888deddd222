#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "morphopt/evaluation.hpp"
#include "morphopt/morphology.hpp"
#include "morphopt/parallel.hpp"

namespace morphopt {

struct GenerationLog {
  int generation = 0;
  double best_e = std::numeric_limits<double>::infinity();  // best so far
  double mean_e = 0.0;                                      // this generation's samples
  VecX best;                                                // best-so-far point
  long evaluations = 0;                                     // cumulative
  double sigma = 0.0;
  bool restarted = false;
};

inline void write_convergence_csv(std::ostream& out, const std::vector<GenerationLog>& logs) {
  out << "generation,best_E,mean_E,evaluations,sigma,restarted\n";
  out.precision(12);
  for (const auto& g : logs)
    out << g.generation << ',' << g.best_e << ',' << g.mean_e << ',' << g.evaluations << ',' << g.sigma << ','
        << (g.restarted ? 1 : 0) << '\n';
}

// ------------------------------------------------------------------ CMA-ES

struct CmaesConfig {
  int population = 20;
  int generations = 100;
  double sigma0 = 0.25;
  std::uint64_t seed = 1;
  VecX lower;  // empty = unbounded
  VecX upper;
};

inline void validate_cmaes_config(const CmaesConfig& c, Eigen::Index dim) {
  if (c.population < 4) throw ValidationError("CMA-ES population must be at least 4");
  if (c.generations < 1) throw ValidationError("CMA-ES needs at least one generation");
  if (!(c.sigma0 > 0.0)) throw ValidationError("sigma0 must be positive");
  if (c.lower.size() != c.upper.size()) throw DimensionError("bound vectors differ in size");
  if (c.lower.size() != 0) {
    if (c.lower.size() != dim) throw DimensionError("bounds do not match the search dimension");
    if ((c.lower.array() > c.upper.array()).any()) throw ValidationError("lower bound above upper bound");
  }
}

/// Strategy constants of the (mu/mu_w, lambda) scheme with default settings.
struct CmaesConstants {
  int n = 0;
  int lambda = 0;
  int mu = 0;
  VecX weights;
  double mu_eff = 0.0;
  double c_c = 0.0;
  double c_sigma = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double d_sigma = 0.0;
  double chi_n = 0.0;
};

inline CmaesConstants cmaes_constants(int n, int lambda) {
  CmaesConstants k;
  k.n = n;
  k.lambda = lambda;
  k.mu = lambda / 2;
  k.weights.resize(k.mu);
  for (int i = 0; i < k.mu; ++i) k.weights[i] = std::log(lambda / 2.0 + 0.5) - std::log(i + 1.0);
  k.weights /= k.weights.sum();
  k.mu_eff = 1.0 / k.weights.squaredNorm();
  const double nd = n;
  k.c_c = (4.0 + k.mu_eff / nd) / (nd + 4.0 + 2.0 * k.mu_eff / nd);
  k.c_sigma = (k.mu_eff + 2.0) / (nd + k.mu_eff + 5.0);
  k.c_1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + k.mu_eff);
  k.c_mu = std::min(1.0 - k.c_1, 2.0 * (k.mu_eff - 2.0 + 1.0 / k.mu_eff) / ((nd + 2.0) * (nd + 2.0) + k.mu_eff));
  k.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((k.mu_eff - 1.0) / (nd + 1.0)) - 1.0) + k.c_sigma;
  k.chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));
  return k;
}

inline nlohmann::json cmaes_constants_json(const CmaesConstants& k) {
  return {{"n", k.n},
          {"lambda", k.lambda},
          {"mu", k.mu},
          {"weights", std::vector<double>(k.weights.data(), k.weights.data() + k.weights.size())},
          {"mu_eff", k.mu_eff},
          {"c_c", k.c_c},
          {"c_sigma", k.c_sigma},
          {"c_1", k.c_1},
          {"c_mu", k.c_mu},
          {"d_sigma", k.d_sigma},
          {"chi_n", k.chi_n}};
}

struct CmaesResult {
  VecX best_x;
  double best_f = std::numeric_limits<double>::infinity();
  std::vector<GenerationLog> logs;
  int restarts = 0;
  long evaluations = 0;
};

/// Evaluates a whole generation at once, so callers can fan it out.
using BatchObjective = std::function<std::vector<double>(const std::vector<VecX>&)>;

/**
 * CMA-ES minimization from mean x0 with step size sigma0.  Samples are
 * clamped into the bounds before evaluation and the update uses the clamped
 * points.  A degenerate covariance or step size restarts the search at the
 * best point so far with sigma0 and an identity covariance.
 */
inline CmaesResult cmaes_minimize(const BatchObjective& objective, const VecX& x0, const CmaesConfig& cfg) {
  const Eigen::Index n = x0.size();
  if (n < 1) throw DimensionError("empty search space");
  validate_cmaes_config(cfg, n);
  const bool bounded = cfg.lower.size() != 0;
  const CmaesConstants k = cmaes_constants(static_cast<int>(n), cfg.population);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  VecX mean = bounded ? VecX(x0.cwiseMax(cfg.lower).cwiseMin(cfg.upper)) : x0;
  double sigma = cfg.sigma0;
  MatX cov = MatX::Identity(n, n);
  MatX basis = MatX::Identity(n, n);
  VecX scales = VecX::Ones(n);
  VecX p_sigma = VecX::Zero(n);
  VecX p_c = VecX::Zero(n);
  int generation_in_run = 0;

  CmaesResult res;
  res.best_x = mean;
  bool restart_pending = false;

  std::vector<VecX> xs(static_cast<std::size_t>(k.lambda));
  std::vector<VecX> ys(static_cast<std::size_t>(k.lambda));
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    const bool restarted = restart_pending;
    restart_pending = false;
    for (int i = 0; i < k.lambda; ++i) {
      VecX z(n);
      for (Eigen::Index j = 0; j < n; ++j) z[j] = gauss(rng);
      VecX x = mean + sigma * (basis * scales.cwiseProduct(z));
      if (bounded) x = x.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
      ys[static_cast<std::size_t>(i)] = (x - mean) / sigma;
      xs[static_cast<std::size_t>(i)] = std::move(x);
    }
    const std::vector<double> f = objective(xs);
    if (static_cast<int>(f.size()) != k.lambda) throw DimensionError("objective returned the wrong number of values");
    res.evaluations += k.lambda;

    std::vector<int> order(static_cast<std::size_t>(k.lambda));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
    if (f[order[0]] < res.best_f) {
      res.best_f = f[order[0]];
      res.best_x = xs[static_cast<std::size_t>(order[0])];
    }

    GenerationLog log;
    log.generation = gen;
    log.best_e = res.best_f;
    log.mean_e = std::accumulate(f.begin(), f.end(), 0.0) / k.lambda;
    log.best = res.best_x;
    log.evaluations = res.evaluations;
    log.restarted = restarted;

    // Recombination and path updates.
    VecX y_w = VecX::Zero(n);
    for (int i = 0; i < k.mu; ++i) y_w += k.weights[i] * ys[static_cast<std::size_t>(order[i])];
    mean += sigma * y_w;
    ++generation_in_run;
    const VecX inv_sqrt_y = basis * (basis.transpose() * y_w).cwiseQuotient(scales);
    p_sigma = (1.0 - k.c_sigma) * p_sigma + std::sqrt(k.c_sigma * (2.0 - k.c_sigma) * k.mu_eff) * inv_sqrt_y;
    const double ps_norm = p_sigma.norm();
    const double h_sigma_lhs = ps_norm / std::sqrt(1.0 - std::pow(1.0 - k.c_sigma, 2.0 * generation_in_run));
    const double h_sigma = h_sigma_lhs < (1.4 + 2.0 / (static_cast<double>(n) + 1.0)) * k.chi_n ? 1.0 : 0.0;
    p_c = (1.0 - k.c_c) * p_c + h_sigma * std::sqrt(k.c_c * (2.0 - k.c_c) * k.mu_eff) * y_w;

    MatX rank_mu = MatX::Zero(n, n);
    for (int i = 0; i < k.mu; ++i) {
      const VecX& y = ys[static_cast<std::size_t>(order[i])];
      rank_mu.noalias() += k.weights[i] * y * y.transpose();
    }
    const double decay = 1.0 - k.c_1 - k.c_mu + (1.0 - h_sigma) * k.c_1 * k.c_c * (2.0 - k.c_c);
    cov = decay * cov + k.c_1 * p_c * p_c.transpose() + k.c_mu * rank_mu;
    cov = 0.5 * (cov + cov.transpose());
    sigma *= std::exp((k.c_sigma / k.d_sigma) * (ps_norm / k.chi_n - 1.0));

    // Flat fitness: widen the search.
    if (f[order[0]] == f[order[static_cast<std::size_t>(std::ceil(0.7 * k.lambda)) - 1]])
      sigma *= std::exp(0.2 + k.c_sigma / k.d_sigma);

    Eigen::SelfAdjointEigenSolver<MatX> eig(cov);
    bool degenerate = eig.info() != Eigen::Success || !cov.allFinite() || !std::isfinite(sigma);
    if (!degenerate) {
      const VecX ev = eig.eigenvalues();
      degenerate = ev.minCoeff() <= 0.0 || ev.maxCoeff() > 1e14 * ev.minCoeff() ||
                   sigma * std::sqrt(ev.maxCoeff()) < 1e-12 || sigma * std::sqrt(ev.maxCoeff()) > 1e12;
      if (!degenerate) {
        basis = eig.eigenvectors();
        scales = ev.cwiseSqrt();
      }
    }
    if (degenerate) {
      mean = res.best_x;
      sigma = cfg.sigma0;
      cov.setIdentity();
      basis.setIdentity();
      scales.setOnes();
      p_sigma.setZero();
      p_c.setZero();
      generation_in_run = 0;
      ++res.restarts;
      restart_pending = true;
    }
    log.sigma = sigma;
    res.logs.push_back(std::move(log));
  }
  return res;
}

// ------------------------------------------------------------------ genome search

using GenomeEvaluator = std::function<EvaluationReport(const DesignGenome&)>;

struct OptimizationResult {
  DesignGenome best_genome;
  EvaluationReport best_report;
  std::vector<GenerationLog> logs;
  int restarts = 0;
  long evaluations = 0;
};

/// Evaluates genomes in parallel; results come back in input order.
inline std::vector<EvaluationReport> evaluate_batch(const GenomeEvaluator& eval, const std::vector<DesignGenome>& genomes,
                                                    int threads) {
  std::vector<EvaluationReport> out(genomes.size());
  parallel_for(genomes.size(), threads, [&](std::size_t i) { out[i] = eval(genomes[i]); });
  return out;
}

/// Keeps the first strictly-better report, scanning in sample order.
struct BestTracker {
  DesignGenome genome;
  EvaluationReport report;
  bool any = false;

  void offer(const DesignGenome& g, const EvaluationReport& r) {
    if (!any || r.e < report.e) {
      genome = g;
      report = r;
      any = true;
    }
  }
};

/**
 * CMA-ES over the design genome.  The search runs in coordinates normalized
 * to the unit box, so sigma0 is a fraction of each variable's range; the
 * initial mean is a random genome drawn from the seed.
 */
inline OptimizationResult cmaes_optimize(const GenomeEvaluator& eval, int module_count, const Workcell& cell,
                                         CmaesConfig cfg, int threads = 1) {
  const auto [lo, hi] = genome_bounds(module_count, cell);
  const VecX range = (hi - lo).cwiseMax(1e-300);
  auto to_genome = [&](const VecX& u) { return DesignGenome::from_vector(lo + u.cwiseProduct(range)); };

  const DesignGenome start = random_genome(cfg.seed, cell, module_count);
  const VecX x0 = (start.to_vector() - lo).cwiseQuotient(range);
  cfg.lower = VecX::Zero(lo.size());
  cfg.upper = VecX::Ones(lo.size());

  BestTracker best;
  BatchObjective objective = [&](const std::vector<VecX>& xs) {
    std::vector<DesignGenome> genomes;
    genomes.reserve(xs.size());
    for (const auto& x : xs) genomes.push_back(to_genome(x));
    const std::vector<EvaluationReport> reports = evaluate_batch(eval, genomes, threads);
    std::vector<double> f(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      best.offer(genomes[i], reports[i]);
      f[i] = reports[i].e;
    }
    return f;
  };
  CmaesResult raw = cmaes_minimize(objective, x0, cfg);

  OptimizationResult out;
  out.best_genome = best.genome;
  out.best_report = best.report;
  out.restarts = raw.restarts;
  out.evaluations = raw.evaluations;
  out.logs = std::move(raw.logs);
  for (auto& g : out.logs) g.best = lo + g.best.cwiseProduct(range);
  return out;
}

// ------------------------------------------------------------------ pose grid

struct PoseGrid {
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> thetas;

  std::size_t size() const { return xs.size() * ys.size() * thetas.size(); }
  MountedPose at(int ix, int iy, int it) const {
    return {xs[static_cast<std::size_t>(ix)], ys[static_cast<std::size_t>(iy)], thetas[static_cast<std::size_t>(it)]};
  }
};

/**
 * Positions at whole multiples of `position_step` from the workcell centre
 * that lie strictly inside the workcell (the centre itself is always kept);
 * yaw from theta_min in steps of `angle_step` over the half-open range.
 */
inline PoseGrid pose_grid(const Workcell& cell, double position_step = 0.2, double angle_step = kPi / 2.0) {
  if (!(position_step > 0.0) || !(angle_step > 0.0)) throw ValidationError("grid steps must be positive");
  if (!cell.valid()) throw ValidationError("invalid workcell");
  auto axis = [&](double lo, double hi) {
    const double centre = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    const int k_max = static_cast<int>(std::floor(half / position_step + 1e-9));
    std::vector<double> v;
    for (int k = -k_max; k <= k_max; ++k) {
      const double offset = k * position_step;
      if (k == 0 || std::abs(offset) < half - 1e-9) v.push_back(centre + offset);
    }
    return v;
  };
  PoseGrid g;
  g.xs = axis(cell.x_min, cell.x_max);
  g.ys = axis(cell.y_min, cell.y_max);
  const double span = cell.theta_max - cell.theta_min;
  for (int k = 0;; ++k) {
    const double t = cell.theta_min + k * angle_step;
    if (k > 0 && t > cell.theta_max - 1e-9) break;
    g.thetas.push_back(t);
    if (span <= 0.0) break;
  }
  if (g.size() == 0) throw ValidationError("empty pose grid");
  return g;
}

inline std::vector<MountedPose> discretize_pose(const Workcell& cell, double position_step = 0.2,
                                                double angle_step = kPi / 2.0) {
  const PoseGrid g = pose_grid(cell, position_step, angle_step);
  std::vector<MountedPose> out;
  out.reserve(g.size());
  for (double x : g.xs)
    for (double y : g.ys)
      for (double t : g.thetas) out.push_back({x, y, t});
  return out;
}

// ------------------------------------------------------------------ GA baseline

struct GaConfig {
  int population = 20;
  int generations = 100;
  double mutation_prob = 0.5;
  double crossover_prob = 0.1;
  double position_step = 0.2;
  double angle_step = kPi / 2.0;
  std::uint64_t seed = 1;
};

inline void validate_ga_config(const GaConfig& c) {
  if (c.population < 2) throw ValidationError("GA population must be at least 2");
  if (c.generations < 1) throw ValidationError("GA needs at least one generation");
  if (!(c.mutation_prob >= 0.0 && c.mutation_prob <= 1.0) || !(c.crossover_prob >= 0.0 && c.crossover_prob <= 1.0))
    throw ValidationError("GA probabilities must lie in [0, 1]");
}

/// Permutation of all module ids plus indices into the pose grid.
struct Chromosome {
  std::vector<int> permutation;
  std::array<int, 3> pose{0, 0, 0};
  bool operator==(const Chromosome&) const = default;
};

inline bool is_permutation_of_ids(const std::vector<int>& p) {
  std::vector<int> s = p;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] != static_cast<int>(i) + 1) return false;
  return true;
}

/// Ordered crossover: the child keeps a slice of `a` and fills the rest in
/// the order the remaining ids appear in `b`, starting after the slice.
inline std::vector<int> ordered_crossover(const std::vector<int>& a, const std::vector<int>& b, std::size_t cut1,
                                          std::size_t cut2) {
  const std::size_t n = a.size();
  if (b.size() != n) throw DimensionError("parents differ in length");
  if (cut1 > cut2 || cut2 >= n) throw std::out_of_range("invalid crossover cut points");
  std::vector<int> child(n, 0);
  std::vector<char> used(n + 1, 0);
  for (std::size_t i = cut1; i <= cut2; ++i) {
    child[i] = a[i];
    used[static_cast<std::size_t>(a[i])] = 1;
  }
  std::size_t pos = (cut2 + 1) % n;
  for (std::size_t k = 0; k < n; ++k) {
    const int id = b[(cut2 + 1 + k) % n];
    if (used[static_cast<std::size_t>(id)]) continue;
    child[pos] = id;
    used[static_cast<std::size_t>(id)] = 1;
    pos = (pos + 1) % n;
  }
  return child;
}

inline std::array<int, 3> pose_dims(const PoseGrid& g) {
  return {static_cast<int>(g.xs.size()), static_cast<int>(g.ys.size()), static_cast<int>(g.thetas.size())};
}

inline Chromosome random_chromosome(std::mt19937_64& rng, int module_count, const std::array<int, 3>& dims) {
  Chromosome c;
  c.permutation.resize(static_cast<std::size_t>(module_count));
  std::iota(c.permutation.begin(), c.permutation.end(), 1);
  std::shuffle(c.permutation.begin(), c.permutation.end(), rng);
  for (int g = 0; g < 3; ++g) c.pose[g] = std::uniform_int_distribution<int>(0, dims[g] - 1)(rng);
  return c;
}

inline std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b, std::mt19937_64& rng) {
  const std::size_t n = a.permutation.size();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t c1 = pick(rng), c2 = pick(rng);
  if (c1 > c2) std::swap(c1, c2);
  Chromosome x{ordered_crossover(a.permutation, b.permutation, c1, c2), a.pose};
  Chromosome y{ordered_crossover(b.permutation, a.permutation, c1, c2), b.pose};
  std::bernoulli_distribution coin(0.5);
  for (int g = 0; g < 3; ++g)
    if (coin(rng)) std::swap(x.pose[g], y.pose[g]);
  return {x, y};
}

inline void mutate(Chromosome& c, const std::array<int, 3>& dims, std::mt19937_64& rng) {
  const std::size_t n = c.permutation.size();
  if (n >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    std::swap(c.permutation[i], c.permutation[j]);
  }
  const int gene = std::uniform_int_distribution<int>(0, 2)(rng);
  c.pose[gene] = std::uniform_int_distribution<int>(0, dims[gene] - 1)(rng);
}

/// Strictly decreasing states along the permutation, so decoding reproduces
/// it without ties: the module at rank r gets (n - r) / n.
inline DesignGenome chromosome_to_genome(const Chromosome& c, const PoseGrid& grid) {
  const auto n = static_cast<Eigen::Index>(c.permutation.size());
  DesignGenome g;
  g.module_states.resize(n);
  for (Eigen::Index r = 0; r < n; ++r)
    g.module_states[c.permutation[static_cast<std::size_t>(r)] - 1] = static_cast<double>(n - r) / static_cast<double>(n);
  g.pose = grid.at(c.pose[0], c.pose[1], c.pose[2]);
  return g;
}

/**
 * Generational GA over (permutation, pose-grid) chromosomes.  Each generation
 * evaluates `population` chromosomes; after the first, children come from
 * binary tournaments, crossover and mutation, and the previous best replaces
 * the worst child.
 */
inline OptimizationResult ga_optimize(const GenomeEvaluator& eval, int module_count, const Workcell& cell,
                                      const GaConfig& cfg, int threads = 1) {
  validate_ga_config(cfg);
  const PoseGrid grid = pose_grid(cell, cfg.position_step, cfg.angle_step);
  const std::array<int, 3> dims = pose_dims(grid);
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution do_cross(cfg.crossover_prob);
  std::bernoulli_distribution do_mutate(cfg.mutation_prob);
  std::uniform_int_distribution<int> pick(0, cfg.population - 1);

  struct Member {
    Chromosome c;
    EvaluationReport r;
  };
  auto evaluate_all = [&](const std::vector<Chromosome>& cs) {
    std::vector<DesignGenome> genomes;
    genomes.reserve(cs.size());
    for (const auto& c : cs) genomes.push_back(chromosome_to_genome(c, grid));
    const auto reports = evaluate_batch(eval, genomes, threads);
    std::vector<Member> out;
    out.reserve(cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) out.push_back({cs[i], reports[i]});
    return out;
  };

  OptimizationResult res;
  BestTracker best;
  std::vector<Chromosome> seeds;
  for (int i = 0; i < cfg.population; ++i) seeds.push_back(random_chromosome(rng, module_count, dims));
  std::vector<Member> pop = evaluate_all(seeds);

  for (int gen = 1; gen <= cfg.generations; ++gen) {
    if (gen > 1) {
      const auto elite = std::min_element(pop.begin(), pop.end(),
                                          [](const Member& a, const Member& b) { return a.r.e < b.r.e; });
      const Member kept = *elite;
      auto tournament = [&]() -> const Chromosome& {
        const Member& a = pop[static_cast<std::size_t>(pick(rng))];
        const Member& b = pop[static_cast<std::size_t>(pick(rng))];
        return b.r.e < a.r.e ? b.c : a.c;
      };
      std::vector<Chromosome> children;
      while (static_cast<int>(children.size()) < cfg.population) {
        Chromosome x = tournament();
        Chromosome y = tournament();
        if (do_cross(rng)) std::tie(x, y) = crossover(x, y, rng);
        if (do_mutate(rng)) mutate(x, dims, rng);
        if (do_mutate(rng)) mutate(y, dims, rng);
        children.push_back(std::move(x));
        if (static_cast<int>(children.size()) < cfg.population) children.push_back(std::move(y));
      }
      pop = evaluate_all(children);
      auto worst = std::max_element(pop.begin(), pop.end(),
                                    [](const Member& a, const Member& b) { return a.r.e < b.r.e; });
      *worst = kept;
    }
    res.evaluations += cfg.population;
    double sum = 0.0;
    for (const auto& m : pop) {
      best.offer(chromosome_to_genome(m.c, grid), m.r);
      sum += m.r.e;
    }
    GenerationLog log;
    log.generation = gen;
    log.best_e = best.report.e;
    log.mean_e = sum / cfg.population;
    log.best = best.genome.to_vector();
    log.evaluations = res.evaluations;
    res.logs.push_back(std::move(log));
  }
  res.best_genome = best.genome;
  res.best_report = best.report;
  return res;
}

}  // namespace morphopt
