#pragma once

#include <span>
#include <vector>

#include "mirrorlab/envs.hpp"
#include "mirrorlab/nn.hpp"

namespace mirrorlab {

enum class PolicyKind { kCategorical, kGaussian };

// Policy trunk plus, for Gaussian policies, a state-independent log-std
// vector. Categorical trunks output logits; Gaussian trunks output means.
struct PolicyParams {
  PolicyKind kind = PolicyKind::kCategorical;
  MlpSpec trunk;
  MlpWeights w;
  std::vector<double> log_std;  // Gaussian only

  int action_dim() const { return trunk.output_dim; }
  std::size_t param_count() const {
    return w.data.size() + log_std.size();
  }
};

PolicyParams make_policy(EnvId env, const std::vector<int>& hidden,
                         Act activation, double log_std_init, Rng& rng);

// Samples one action per row of obs; writes log-densities of the sampled
// actions. For categorical policies actions holds the index as a double.
void policy_sample(const PolicyParams& p, const double* obs, int n, Rng& rng,
                   double* actions, double* log_probs);
// Mode / mean instead of a sample (deterministic evaluation).
void policy_mode(const PolicyParams& p, const double* obs, int n,
                 double* actions);

double policy_log_prob(const PolicyParams& p, std::span<const double> state,
                       std::span<const double> action);

// Distribution primitives shared by sampling and training so ratios are
// exactly 1 on the first pass after collection.
double categorical_log_prob(const double* logits, int n_actions, int action);
double gaussian_log_prob(const double* mean, const double* log_std, int dim,
                         const double* action);

// Mean policy entropy over the given states. Categorical: -sum p log p;
// diagonal Gaussian: sum_d 0.5 ln(2 pi e sigma_d^2), state-independent.
double policy_entropy(const PolicyParams& p, const double* obs, int n);

}  // namespace mirrorlab
