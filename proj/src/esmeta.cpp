#include "mirrorlab/esmeta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mirrorlab/parallel.hpp"
#include "mirrorlab/serialize.hpp"

namespace mirrorlab {

void EsConfig::validate() const {
  if (population_size < 2 || population_size % 2 != 0)
    throw std::invalid_argument("population_size must be even and >= 2");
  if (!(sigma_init > 0.0)) throw std::invalid_argument("sigma_init must be > 0");
  if (!(sigma_decay > 0.0 && sigma_decay <= 1.0))
    throw std::invalid_argument("sigma_decay must be in (0,1]");
  if (!(sigma_limit > 0.0 && sigma_limit <= sigma_init))
    throw std::invalid_argument("sigma_limit must be in (0, sigma_init]");
  if (n_generations < 1) throw std::invalid_argument("n_generations must be >= 1");
  if (!(outer_lr > 0.0)) throw std::invalid_argument("outer_lr must be > 0");
  if (fitness_eval_episodes < 1)
    throw std::invalid_argument("fitness_eval_episodes must be >= 1");
  if (baseline_runs < 1) throw std::invalid_argument("baseline_runs must be >= 1");
  if (envs.empty()) throw std::invalid_argument("env mixture must not be empty");
  if (drift_hidden.empty()) throw std::invalid_argument("drift_hidden must not be empty");
  if (feature_mask == 0) throw std::invalid_argument("feature mask must not be empty");
  inner.validate();
  for (const EnvSpec& e : envs) e.validate();
}

double sigma_at(const EsConfig& cfg, int generation) {
  return std::max(cfg.sigma_limit,
                  cfg.sigma_init *
                      std::pow(cfg.sigma_decay, static_cast<double>(generation)));
}

LearnedDrift drift_from_meta_params(const EsConfig& cfg,
                                    std::span<const double> phi) {
  LearnedDrift d;
  d.net = learned_drift_net_spec(cfg.drift_hidden, cfg.drift_activation);
  if (phi.size() != d.net.param_count())
    throw std::invalid_argument("meta parameter length mismatch");
  d.weights.data.assign(phi.begin(), phi.end());
  d.ppo_residual = cfg.ppo_residual;
  d.clip_eps = cfg.clip_eps;
  d.xi = cfg.xi;
  d.feature_mask = cfg.feature_mask;
  return d;
}

std::vector<double> es_perturbation(int dim, std::uint64_t seed,
                                    int pair_index) {
  Rng rng(derive_seed(seed, kStreamEsNoise,
                      static_cast<std::uint64_t>(pair_index)));
  std::vector<double> eps(dim);
  for (double& e : eps) e = rng.normal();
  return eps;
}

namespace {

// ranks over all surviving fitnesses mapped to [-0.5, 0.5]
void rank_shape(std::vector<double>& fpos, std::vector<double>& fneg) {
  const int m = static_cast<int>(fpos.size());
  std::vector<std::pair<double, int>> order;  // (value, slot)
  order.reserve(2 * m);
  for (int i = 0; i < m; ++i) {
    order.emplace_back(fpos[i], 2 * i);
    order.emplace_back(fneg[i], 2 * i + 1);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const double denom = order.size() > 1 ? static_cast<double>(order.size() - 1) : 1.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const double u = static_cast<double>(rank) / denom - 0.5;
    const int slot = order[rank].second;
    if (slot % 2 == 0)
      fpos[slot / 2] = u;
    else
      fneg[slot / 2] = u;
  }
}

std::vector<double> es_combine(int dim, const std::vector<double>& fpos,
                               const std::vector<double>& fneg, double sigma,
                               std::uint64_t seed,
                               const std::vector<int>& pair_ids) {
  const int m = static_cast<int>(fpos.size());
  std::vector<double> grad(dim, 0.0);
  const double scale = 1.0 / (2.0 * m * sigma);
  for (int i = 0; i < m; ++i) {
    const std::vector<double> eps = es_perturbation(dim, seed, pair_ids[i]);
    const double w = (fpos[i] - fneg[i]) * scale;
    for (int k = 0; k < dim; ++k) grad[k] += w * eps[k];
  }
  return grad;
}

}  // namespace

EsGradientResult es_gradient(std::span<const double> phi,
                             const FitnessFn& fitness, int n_pairs,
                             double sigma, std::uint64_t seed,
                             bool rank_normalise) {
  if (n_pairs < 1) throw std::invalid_argument("es_gradient: n_pairs must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("es_gradient: sigma must be > 0");
  const int dim = static_cast<int>(phi.size());

  EsGradientResult res;
  res.fitness_pos.assign(n_pairs, 0.0);
  res.fitness_neg.assign(n_pairs, 0.0);
  res.pair_directional.assign(n_pairs, 0.0);

  parallel_for(2 * n_pairs, [&](int t) {
    const int pair = t / 2;
    const bool positive = (t % 2 == 0);
    const std::vector<double> eps = es_perturbation(dim, seed, pair);
    std::vector<double> cand(phi.begin(), phi.end());
    const double s = positive ? sigma : -sigma;
    for (int k = 0; k < dim; ++k) cand[k] += s * eps[k];
    const double f = fitness(cand, derive_seed(seed, kStreamEsFitness, pair));
    (positive ? res.fitness_pos : res.fitness_neg)[pair] = f;
  });

  std::vector<double> fpos, fneg;
  std::vector<int> pair_ids;
  for (int i = 0; i < n_pairs; ++i) {
    res.pair_directional[i] =
        (res.fitness_pos[i] - res.fitness_neg[i]) / (2.0 * sigma);
    if (std::isnan(res.fitness_pos[i]) || std::isnan(res.fitness_neg[i])) {
      ++res.n_dropped;
      continue;
    }
    fpos.push_back(res.fitness_pos[i]);
    fneg.push_back(res.fitness_neg[i]);
    pair_ids.push_back(i);
  }
  if (fpos.empty())
    throw std::runtime_error("es_gradient: every pair returned NaN fitness");
  if (rank_normalise) rank_shape(fpos, fneg);
  res.grad = es_combine(dim, fpos, fneg, sigma, seed, pair_ids);
  return res;
}

std::vector<double> meta_objective_returns(std::span<const double> phi,
                                           const EsConfig& cfg,
                                           std::uint64_t seed) {
  const LearnedDrift drift = drift_from_meta_params(cfg, phi);
  std::vector<double> returns(cfg.envs.size(),
                              std::numeric_limits<double>::quiet_NaN());
  for (std::size_t e = 0; e < cfg.envs.size(); ++e) {
    TrainConfig inner = cfg.inner;
    inner.seed = derive_seed(seed, kStreamInnerTrain, e);
    RunRecord rec;
    try {
      rec = train(cfg.envs[e], DriftSpec(drift), inner);
    } catch (const std::runtime_error&) {
      continue;  // leaves NaN
    }
    if (rec.diverged) continue;
    returns[e] = evaluate(rec.policy, cfg.envs[e], cfg.fitness_eval_episodes,
                          derive_seed(seed, kStreamEsFitness, e),
                          inner.deterministic_eval);
  }
  return returns;
}

double meta_objective(std::span<const double> phi, const EsConfig& cfg,
                      const std::vector<EnvBaseline>& baselines,
                      std::uint64_t seed) {
  if (baselines.size() != cfg.envs.size())
    throw std::invalid_argument("meta_objective: baseline count mismatch");
  const std::vector<double> returns = meta_objective_returns(phi, cfg, seed);
  double sum = 0.0;
  for (std::size_t e = 0; e < returns.size(); ++e) {
    if (std::isnan(returns[e])) return std::numeric_limits<double>::quiet_NaN();
    sum += (returns[e] - baselines[e].mean) / baselines[e].stddev;
  }
  return sum / static_cast<double>(returns.size());
}

std::vector<EnvBaseline> compute_env_baselines(const EsConfig& cfg,
                                               std::uint64_t seed) {
  const std::size_t n_envs = cfg.envs.size();
  const int runs = cfg.baseline_runs;
  std::vector<double> results(n_envs * runs, 0.0);
  parallel_for(static_cast<int>(n_envs * runs), [&](int t) {
    const std::size_t e = static_cast<std::size_t>(t) / runs;
    const int j = t % static_cast<int>(runs);
    TrainConfig inner = cfg.inner;
    inner.seed = derive_seed(seed, kStreamBaseline, e, static_cast<std::uint64_t>(j));
    const RunRecord rec =
        train(cfg.envs[e], DriftSpec(PpoClipDrift{cfg.clip_eps}), inner);
    results[t] = rec.diverged
                     ? std::numeric_limits<double>::quiet_NaN()
                     : evaluate(rec.policy, cfg.envs[e], cfg.fitness_eval_episodes,
                                derive_seed(seed, kStreamBaseline, e, 1000 + j),
                                inner.deterministic_eval);
  });
  std::vector<EnvBaseline> baselines(n_envs);
  for (std::size_t e = 0; e < n_envs; ++e) {
    double sum = 0.0;
    int n = 0;
    for (int j = 0; j < runs; ++j) {
      const double v = results[e * runs + j];
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    }
    if (n == 0) throw std::runtime_error("baseline runs all diverged");
    const double mean = sum / n;
    double var = 0.0;
    for (int j = 0; j < runs; ++j) {
      const double v = results[e * runs + j];
      if (!std::isnan(v)) var += (v - mean) * (v - mean);
    }
    var /= n;
    baselines[e].mean = mean;
    baselines[e].stddev = std::max(std::sqrt(var), 1.0);
  }
  return baselines;
}

namespace {

MetaResult run_generations(const EsConfig& cfg, MetaCheckpoint state,
                           const FitnessFn& fitness) {
  const int dim = static_cast<int>(cfg.meta_param_count());
  const int n_pairs = cfg.n_pairs();

  for (int gen = state.generation; gen < cfg.n_generations; ++gen) {
    const double sigma = sigma_at(cfg, gen);
    const std::uint64_t gen_seed = derive_seed(state.seed, kStreamEsNoise,
                                               static_cast<std::uint64_t>(gen));

    std::vector<double> fpos(n_pairs), fneg(n_pairs);
    parallel_for(2 * n_pairs, [&](int t) {
      const int pair = t / 2;
      const bool positive = (t % 2 == 0);
      const std::vector<double> eps = es_perturbation(dim, gen_seed, pair);
      std::vector<double> cand(state.phi);
      const double s = positive ? sigma : -sigma;
      for (int k = 0; k < dim; ++k) cand[k] += s * eps[k];
      const std::uint64_t fit_seed = derive_seed(
          state.seed, kStreamEsFitness, static_cast<std::uint64_t>(gen), pair);
      (positive ? fpos : fneg)[pair] = fitness(cand, fit_seed);
    });

    // inner divergence: repair with the worst observed fitness this
    // generation, flagged in the history
    MetaHistoryRow row;
    row.generation = gen;
    row.sigma = sigma;
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_pairs; ++i) {
      if (!std::isnan(fpos[i])) worst = std::min(worst, fpos[i]);
      if (!std::isnan(fneg[i])) worst = std::min(worst, fneg[i]);
    }
    if (!std::isfinite(worst))
      throw std::runtime_error("meta_train: all fitness evaluations diverged");
    for (int i = 0; i < n_pairs; ++i) {
      if (std::isnan(fpos[i])) {
        fpos[i] = worst;
        ++row.n_diverged;
      }
      if (std::isnan(fneg[i])) {
        fneg[i] = worst;
        ++row.n_diverged;
      }
    }

    double sum = 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    int best_slot = -1;
    for (int i = 0; i < n_pairs; ++i) {
      sum += fpos[i] + fneg[i];
      if (fpos[i] > mx) {
        mx = fpos[i];
        best_slot = 2 * i;
      }
      if (fneg[i] > mx) {
        mx = fneg[i];
        best_slot = 2 * i + 1;
      }
    }
    row.fitness_mean = sum / (2.0 * n_pairs);
    row.fitness_max = mx;
    if (!state.has_best || mx > state.best_fitness) {
      state.best_fitness = mx;
      state.has_best = true;
      const int pair = best_slot / 2;
      const double s = (best_slot % 2 == 0) ? sigma : -sigma;
      const std::vector<double> eps = es_perturbation(dim, gen_seed, pair);
      state.best_phi = state.phi;
      for (int k = 0; k < dim; ++k) state.best_phi[k] += s * eps[k];
    }
    row.best_so_far = state.best_fitness;

    std::vector<double> shaped_pos(fpos), shaped_neg(fneg);
    if (cfg.rank_normalise) rank_shape(shaped_pos, shaped_neg);
    std::vector<int> pair_ids(n_pairs);
    std::iota(pair_ids.begin(), pair_ids.end(), 0);
    const std::vector<double> grad =
        es_combine(dim, shaped_pos, shaped_neg, sigma, gen_seed, pair_ids);

    // gradient ascent on the meta objective
    std::vector<double> neg_grad(grad.size());
    for (std::size_t k = 0; k < grad.size(); ++k) neg_grad[k] = -grad[k];
    adam_step(state.adam, state.phi, neg_grad);

    state.history.push_back(row);
    state.phi_trajectory.push_back(state.phi);
    state.generation = gen + 1;
    if (!cfg.checkpoint_path.empty())
      write_meta_checkpoint(cfg.checkpoint_path, cfg, state);
  }

  MetaResult res;
  res.phi = std::move(state.phi);
  res.best_phi = state.has_best ? state.best_phi : res.phi;
  res.best_fitness = state.best_fitness;
  res.history = std::move(state.history);
  res.phi_trajectory = std::move(state.phi_trajectory);
  res.baselines = std::move(state.baselines);
  return res;
}

FitnessFn real_fitness(const EsConfig& cfg,
                       const std::vector<EnvBaseline>& baselines) {
  return [cfg, baselines](std::span<const double> phi, std::uint64_t seed) {
    return meta_objective(phi, cfg, baselines, seed);
  };
}

}  // namespace

MetaResult meta_train(const EsConfig& cfg, std::uint64_t seed,
                      const FitnessFn& fitness_override) {
  cfg.validate();
  MetaCheckpoint state;
  state.seed = seed;
  state.generation = 0;
  state.phi.assign(cfg.meta_param_count(), 0.0);
  // from-scratch drifts start from a small random net; the residual mode
  // starts at exactly PPO (phi = 0)
  if (!cfg.ppo_residual) {
    Rng rng(derive_seed(seed, kStreamPolicyInit, 777));
    const MlpSpec net = learned_drift_net_spec(cfg.drift_hidden, cfg.drift_activation);
    state.phi = mlp_init(net, rng).data;
  }
  state.adam = adam_init(state.phi.size(), cfg.outer_lr);
  if (!fitness_override)
    state.baselines = compute_env_baselines(cfg, seed);
  else
    state.baselines.assign(cfg.envs.size(), EnvBaseline{});
  const FitnessFn fitness =
      fitness_override ? fitness_override : real_fitness(cfg, state.baselines);
  return run_generations(cfg, std::move(state), fitness);
}

MetaResult meta_train_resume(const EsConfig& cfg, const MetaCheckpoint& ckpt,
                             const FitnessFn& fitness_override) {
  cfg.validate();
  if (ckpt.phi.size() != cfg.meta_param_count())
    throw std::invalid_argument("checkpoint phi length mismatch");
  const FitnessFn fitness =
      fitness_override ? fitness_override : real_fitness(cfg, ckpt.baselines);
  return run_generations(cfg, ckpt, fitness);
}

}  // namespace mirrorlab
