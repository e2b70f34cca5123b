#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mirrorlab/drift.hpp"
#include "mirrorlab/trainer.hpp"

namespace mirrorlab {

struct EsConfig {
  int population_size = 8;  // even: antithetic pairs
  double sigma_init = 0.04;
  double sigma_decay = 0.999;
  double sigma_limit = 0.01;
  int n_generations = 20;
  double outer_lr = 0.003;
  int fitness_eval_episodes = 10;
  bool rank_normalise = true;

  // learned-drift parameterisation shared by every candidate
  bool ppo_residual = true;
  std::vector<int> drift_hidden = {128};
  Act drift_activation = Act::kTanh;
  std::uint8_t feature_mask = kAllFeatures;
  double clip_eps = 0.2;
  double xi = 1e-6;

  int baseline_runs = 3;  // PPO runs per env for fitness z-scoring
  TrainConfig inner;
  std::vector<EnvSpec> envs;
  std::string checkpoint_path;  // written every generation when non-empty

  int n_pairs() const { return population_size / 2; }
  std::size_t meta_param_count() const {
    return learned_drift_net_spec(drift_hidden, drift_activation).param_count();
  }
  void validate() const;
};

// sigma_g = max(sigma_limit, sigma_init * sigma_decay^g)
double sigma_at(const EsConfig& cfg, int generation);

LearnedDrift drift_from_meta_params(const EsConfig& cfg,
                                    std::span<const double> phi);

// Perturbation for (seed, pair_index): reproducible standard-normal vector.
std::vector<double> es_perturbation(int dim, std::uint64_t seed, int pair_index);

// Fitness callback: phi and an evaluation seed (shared within a pair).
using FitnessFn =
    std::function<double(std::span<const double>, std::uint64_t)>;

struct EsGradientResult {
  std::vector<double> grad;
  std::vector<double> fitness_pos;        // per pair, F(phi + sigma eps)
  std::vector<double> fitness_neg;        // per pair, F(phi - sigma eps)
  std::vector<double> pair_directional;   // (F+ - F-) / (2 sigma)
  int n_dropped = 0;                      // NaN pairs excluded
};

// Antithetic ES estimate (1 / (2 m sigma)) sum_i [F+ - F-] eps_i over the m
// surviving pairs; with rank_normalise the fitnesses are first mapped to
// utilities in [-0.5, 0.5] by rank. Pairs whose fitness is NaN are dropped.
EsGradientResult es_gradient(std::span<const double> phi,
                             const FitnessFn& fitness, int n_pairs,
                             double sigma, std::uint64_t seed,
                             bool rank_normalise = false);

struct EnvBaseline {
  double mean = 0.0;
  double stddev = 1.0;
};

// PPO-clip reference statistics used to z-score per-env fitness so
// mixed-environment returns share a scale.
std::vector<EnvBaseline> compute_env_baselines(const EsConfig& cfg,
                                               std::uint64_t seed);

// Final-policy return of the inner training under the candidate drift,
// averaged over the env mixture after per-env z-scoring. NaN on divergence.
double meta_objective(std::span<const double> phi, const EsConfig& cfg,
                      const std::vector<EnvBaseline>& baselines,
                      std::uint64_t seed);
// Raw per-env returns (NaN marks a diverged inner run).
std::vector<double> meta_objective_returns(std::span<const double> phi,
                                           const EsConfig& cfg,
                                           std::uint64_t seed);

struct MetaHistoryRow {
  int generation = 0;
  double sigma = 0.0;
  double fitness_mean = 0.0;
  double fitness_max = 0.0;
  double best_so_far = 0.0;
  int n_diverged = 0;  // fitness evals repaired with the generation's worst
};

struct MetaCheckpoint {
  int version = 1;
  std::uint64_t seed = 0;
  int generation = 0;  // next generation to run
  std::vector<double> phi;
  AdamState adam;
  std::vector<double> best_phi;
  double best_fitness = 0.0;
  bool has_best = false;
  std::vector<EnvBaseline> baselines;
  std::vector<MetaHistoryRow> history;
  std::vector<std::vector<double>> phi_trajectory;
};

struct MetaResult {
  std::vector<double> phi;
  std::vector<double> best_phi;
  double best_fitness = 0.0;
  std::vector<MetaHistoryRow> history;
  std::vector<std::vector<double>> phi_trajectory;  // phi after each generation
  std::vector<EnvBaseline> baselines;
};

// Synchronous generations: sample antithetic pairs, evaluate fitness in
// parallel, rank-shape, Adam ascent on phi, decay sigma. Checkpoints make a
// resumed run bit-identical to an uninterrupted one. fitness_override
// replaces the inner-training objective (used by tests and ablations keep
// the real one).
MetaResult meta_train(const EsConfig& cfg, std::uint64_t seed,
                      const FitnessFn& fitness_override = {});
MetaResult meta_train_resume(const EsConfig& cfg, const MetaCheckpoint& ckpt,
                             const FitnessFn& fitness_override = {});

}  // namespace mirrorlab
