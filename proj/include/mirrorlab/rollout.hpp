#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mirrorlab/envs.hpp"
#include "mirrorlab/policy.hpp"

namespace mirrorlab {

// Fixed-length rollout bundle, time-major: index t * n_envs + i. Immutable
// after collection apart from the advantage/return fill-in.
struct Batch {
  int unroll_length = 0;  // T
  int n_envs = 0;         // N
  int obs_dim = 0;
  int act_dim = 0;  // values per action slot (1 for categorical indices)

  std::vector<double> states;         // [T*N x obs_dim]
  std::vector<double> actions;        // [T*N x act_dim]
  std::vector<double> old_log_probs;  // [T*N]
  std::vector<double> rewards;        // [T*N]
  std::vector<std::uint8_t> dones;    // [T*N]
  std::vector<double> values;         // [T*N] critic at collection time
  std::vector<double> bootstrap_values;  // [N] critic at the post-batch obs
  std::vector<double> advantages;     // [T*N] normalised
  std::vector<double> returns;        // [T*N] value targets

  int size() const { return unroll_length * n_envs; }
};

// Rolls the policy for T steps across every instance of env, evaluating the
// critic alongside for GAE. old_log_probs are the exact log-densities of the
// sampled actions under the collecting policy. Throws std::runtime_error on
// non-finite log-probs.
Batch collect(const PolicyParams& policy, const MlpSpec& critic_spec,
              const MlpWeights& critic_w, VecEnv& env, int unroll_length,
              std::uint64_t seed);

struct GaeResult {
  std::vector<double> advantages_raw;
  std::vector<double> returns;
};
// Time-major inputs as in Batch; done flags cut the recursion, bootstrap
// values close the final step.
GaeResult gae(const std::vector<double>& rewards,
              const std::vector<double>& values,
              const std::vector<std::uint8_t>& dones,
              const std::vector<double>& bootstrap_values, int unroll_length,
              int n_envs, double gamma, double lambda);

// Zero-mean unit-std normalisation with the 1/N variance convention.
// Degenerate (zero-variance) input returns all zeros and logs a warning;
// *degenerate is set when provided.
std::vector<double> normalise_advantages(const std::vector<double>& adv_raw,
                                         bool* degenerate = nullptr);

// Fills batch.advantages / batch.returns from its rewards/values.
void compute_advantages(Batch& batch, double gamma, double lambda);

// Debug dump, one column per field (flag-gated by callers).
void write_batch_csv(const Batch& batch, std::ostream& os);

}  // namespace mirrorlab
