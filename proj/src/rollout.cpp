#include "mirrorlab/rollout.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <ostream>
#include <stdexcept>

namespace mirrorlab {

Batch collect(const PolicyParams& policy, const MlpSpec& critic_spec,
              const MlpWeights& critic_w, VecEnv& env, int unroll_length,
              std::uint64_t seed) {
  if (unroll_length < 1)
    throw std::invalid_argument("collect: unroll_length must be >= 1");
  const int n = env.n_envs();
  const int obs_dim = env.obs_dim();
  const bool discrete = env_is_discrete(env.spec().id);
  const int act_dim = discrete ? 1 : env_action_dim(env.spec().id);

  Batch b;
  b.unroll_length = unroll_length;
  b.n_envs = n;
  b.obs_dim = obs_dim;
  b.act_dim = act_dim;
  const std::size_t total = static_cast<std::size_t>(unroll_length) * n;
  b.states.resize(total * obs_dim);
  b.actions.resize(total * act_dim);
  b.old_log_probs.resize(total);
  b.rewards.resize(total);
  b.dones.resize(total);
  b.values.resize(total);
  b.bootstrap_values.resize(n);

  Rng rng(derive_seed(seed, kStreamCollect));
  std::vector<double> obs(static_cast<std::size_t>(n) * obs_dim);
  if (env.initialized())
    env.current_obs(obs.data());  // episodes continue across batches
  else
    env.reset(obs.data());

  MlpBatchCache critic_cache;
  for (int t = 0; t < unroll_length; ++t) {
    const std::size_t row = static_cast<std::size_t>(t) * n;
    std::copy(obs.begin(), obs.end(), b.states.begin() + row * obs_dim);

    policy_sample(policy, obs.data(), n, rng, b.actions.data() + row * act_dim,
                  b.old_log_probs.data() + row);
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(b.old_log_probs[row + i]))
        throw std::runtime_error("collect: non-finite log-prob at step " +
                                 std::to_string(t));

    mlp_forward_batch(critic_spec, critic_w, obs.data(), n, critic_cache);
    const auto& v = mlp_batch_output(critic_spec, critic_cache);
    for (int i = 0; i < n; ++i) b.values[row + i] = v[i];

    env.step(b.actions.data() + row * act_dim, obs.data(),
             b.rewards.data() + row, b.dones.data() + row);
  }
  mlp_forward_batch(critic_spec, critic_w, obs.data(), n, critic_cache);
  const auto& v = mlp_batch_output(critic_spec, critic_cache);
  for (int i = 0; i < n; ++i) b.bootstrap_values[i] = v[i];
  return b;
}

GaeResult gae(const std::vector<double>& rewards,
              const std::vector<double>& values,
              const std::vector<std::uint8_t>& dones,
              const std::vector<double>& bootstrap_values, int unroll_length,
              int n_envs, double gamma, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("gae: lambda must be in [0,1]");
  const std::size_t total = static_cast<std::size_t>(unroll_length) * n_envs;
  if (rewards.size() != total || values.size() != total || dones.size() != total)
    throw std::invalid_argument("gae: input length mismatch");
  GaeResult out;
  out.advantages_raw.assign(total, 0.0);
  out.returns.assign(total, 0.0);
  for (int i = 0; i < n_envs; ++i) {
    double carry = 0.0;
    for (int t = unroll_length - 1; t >= 0; --t) {
      const std::size_t k = static_cast<std::size_t>(t) * n_envs + i;
      const double not_done = dones[k] ? 0.0 : 1.0;
      const double next_v =
          (t == unroll_length - 1)
              ? bootstrap_values[i]
              : values[static_cast<std::size_t>(t + 1) * n_envs + i];
      const double delta = rewards[k] + gamma * next_v * not_done - values[k];
      carry = delta + gamma * lambda * not_done * carry;
      out.advantages_raw[k] = carry;
      out.returns[k] = carry + values[k];
    }
  }
  return out;
}

std::vector<double> normalise_advantages(const std::vector<double>& adv_raw,
                                         bool* degenerate) {
  if (adv_raw.size() < 2)
    throw std::invalid_argument("normalise_advantages: batch size must be >= 2");
  if (degenerate) *degenerate = false;
  double mean = 0.0;
  for (double a : adv_raw) mean += a;
  mean /= static_cast<double>(adv_raw.size());
  double var = 0.0;
  for (double a : adv_raw) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv_raw.size());  // 1/N convention
  std::vector<double> out(adv_raw.size());
  if (var <= 0.0) {
    std::cerr << "[mirrorlab] warning: zero-variance advantages, returning zeros\n";
    if (degenerate) *degenerate = true;
    return out;
  }
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < adv_raw.size(); ++i)
    out[i] = (adv_raw[i] - mean) * inv_std;
  return out;
}

void compute_advantages(Batch& batch, double gamma, double lambda) {
  GaeResult g = gae(batch.rewards, batch.values, batch.dones,
                    batch.bootstrap_values, batch.unroll_length, batch.n_envs,
                    gamma, lambda);
  batch.returns = std::move(g.returns);
  batch.advantages = normalise_advantages(g.advantages_raw);
}

void write_batch_csv(const Batch& batch, std::ostream& os) {
  os << "index";
  for (int k = 0; k < batch.obs_dim; ++k) os << ",state" << k;
  for (int k = 0; k < batch.act_dim; ++k) os << ",action" << k;
  os << ",old_log_prob,reward,done,value,advantage,return\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (int idx = 0; idx < batch.size(); ++idx) {
    os << idx;
    for (int k = 0; k < batch.obs_dim; ++k)
      put(batch.states[static_cast<std::size_t>(idx) * batch.obs_dim + k]);
    for (int k = 0; k < batch.act_dim; ++k)
      put(batch.actions[static_cast<std::size_t>(idx) * batch.act_dim + k]);
    put(batch.old_log_probs[idx]);
    put(batch.rewards[idx]);
    os << ',' << (batch.dones[idx] ? 1 : 0);
    put(batch.values[idx]);
    put(batch.advantages.empty() ? 0.0 : batch.advantages[idx]);
    put(batch.returns.empty() ? 0.0 : batch.returns[idx]);
    os << '\n';
  }
}

}  // namespace mirrorlab
