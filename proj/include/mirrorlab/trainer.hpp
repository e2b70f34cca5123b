#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirrorlab/drift.hpp"
#include "mirrorlab/envs.hpp"
#include "mirrorlab/policy.hpp"
#include "mirrorlab/rollout.hpp"

namespace mirrorlab {

struct DriftInvalidError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  long long total_timesteps = 163840;
  int unroll_length = 128;  // T
  int n_envs = 16;          // N
  int n_minibatches = 32;
  int n_update_epochs = 4;
  double learning_rate = 3e-4;
  double grad_clip_norm = 0.5;
  double value_loss_coeff = 0.5;
  double entropy_bonus_coeff = 0.0;  // zero in all headline runs
  double gamma = 0.99;
  double lambda = 0.95;
  std::uint64_t seed = 0;
  int eval_episodes = 10;
  std::vector<int> policy_hidden = {64, 64};
  Act activation = Act::kTanh;
  double log_std_init = 0.0;
  bool deterministic_eval = false;
  bool verify_drift_at_start = true;
  std::string dump_batch_path;  // debug: write the first batch as CSV

  int batch_size() const { return unroll_length * n_envs; }
  int n_iterations() const {
    return static_cast<int>(total_timesteps / batch_size());
  }
  void validate() const;
};

struct IterationStats {
  long long timesteps = 0;
  double mean_return = 0.0;
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double drift_mean = 0.0;
  // recorded at epoch 0, minibatch 0: ratios must equal 1 and the drift
  // must vanish before the first gradient step
  double first_pass_max_ratio_dev = 0.0;
  double first_pass_drift_mean = 0.0;
  std::uint64_t ratio_clamps = 0;
};

struct RunRecord {
  bool diverged = false;
  std::string divergence_reason;
  std::vector<IterationStats> iterations;
  PolicyParams policy;
  MlpSpec critic_spec;
  MlpWeights critic;
  double final_eval_return = 0.0;
};

// Actor-critic parameter bundle flattened as [trunk | log_std | critic].
struct ActorCriticLayout {
  PolicyKind kind = PolicyKind::kCategorical;
  MlpSpec trunk;
  MlpSpec critic;
  int log_std_dim = 0;

  std::size_t trunk_size() const { return trunk.param_count(); }
  std::size_t log_std_offset() const { return trunk_size(); }
  std::size_t critic_offset() const { return trunk_size() + log_std_dim; }
  std::size_t total_size() const {
    return critic_offset() + critic.param_count();
  }
};

struct MinibatchStats {
  double total_loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double drift_mean = 0.0;
  double max_ratio_dev = 0.0;
  std::uint64_t ratio_clamps = 0;
};

// Surrogate loss over the indexed minibatch rows:
//   -mean[r*A - drift(r, A)] + vf_coeff * 0.5 * mean[(V - ret)^2]
//   - ent_coeff * entropy,
// with r = exp(clamp(log pi(a|s) - old_log_prob, -20, 20)). When grad is
// non-null it receives the full gradient in the layout above.
MinibatchStats minibatch_loss(const ActorCriticLayout& layout,
                              const std::vector<double>& params,
                              const Batch& batch, std::span<const int> indices,
                              const DriftSpec& drift, double vf_coeff,
                              double ent_coeff, std::vector<double>* grad);

RunRecord train(const EnvSpec& env_spec, const DriftSpec& drift,
                const TrainConfig& cfg);

// Mean undiscounted return over n_episodes complete episodes; actions are
// sampled stochastically unless deterministic is set.
double evaluate(const PolicyParams& policy, const EnvSpec& env_spec,
                int n_episodes, std::uint64_t seed,
                bool deterministic = false);

}  // namespace mirrorlab
