#include "mirrorlab/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace mirrorlab {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
}  // namespace

// log-softmax of one logits row at the taken action
double categorical_log_prob(const double* logits, int n_actions, int action) {
  double mx = logits[0];
  for (int j = 1; j < n_actions; ++j) mx = std::max(mx, logits[j]);
  double sum = 0.0;
  for (int j = 0; j < n_actions; ++j) sum += std::exp(logits[j] - mx);
  return logits[action] - mx - std::log(sum);
}

double gaussian_log_prob(const double* mean, const double* log_std, int dim,
                         const double* action) {
  double lp = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double sigma = std::exp(log_std[d]);
    const double z = (action[d] - mean[d]) / sigma;
    lp += -0.5 * z * z - log_std[d] - 0.5 * kLog2Pi;
  }
  return lp;
}

PolicyParams make_policy(EnvId env, const std::vector<int>& hidden,
                         Act activation, double log_std_init, Rng& rng) {
  PolicyParams p;
  p.kind = env_is_discrete(env) ? PolicyKind::kCategorical : PolicyKind::kGaussian;
  p.trunk.layer_widths.push_back(env_obs_dim(env));
  p.trunk.layer_widths.insert(p.trunk.layer_widths.end(), hidden.begin(),
                              hidden.end());
  p.trunk.output_dim = env_action_dim(env);
  p.trunk.activation = activation;
  p.trunk.use_bias = true;
  p.trunk.validate();
  p.w = mlp_init(p.trunk, rng);
  if (p.kind == PolicyKind::kGaussian)
    p.log_std.assign(env_action_dim(env), log_std_init);
  return p;
}

void policy_sample(const PolicyParams& p, const double* obs, int n, Rng& rng,
                   double* actions, double* log_probs) {
  MlpBatchCache cache;
  mlp_forward_batch(p.trunk, p.w, obs, n, cache);
  const auto& out = mlp_batch_output(p.trunk, cache);
  const int adim = p.action_dim();
  if (p.kind == PolicyKind::kCategorical) {
    for (int i = 0; i < n; ++i) {
      const double* logits = out.data() + static_cast<std::size_t>(i) * adim;
      double mx = logits[0];
      for (int j = 1; j < adim; ++j) mx = std::max(mx, logits[j]);
      double sum = 0.0;
      for (int j = 0; j < adim; ++j) sum += std::exp(logits[j] - mx);
      // inverse CDF over the softmax
      const double u = rng.uniform(0.0, 1.0) * sum;
      double acc = 0.0;
      int a = adim - 1;
      for (int j = 0; j < adim; ++j) {
        acc += std::exp(logits[j] - mx);
        if (u <= acc) {
          a = j;
          break;
        }
      }
      actions[i] = static_cast<double>(a);
      log_probs[i] = categorical_log_prob(logits, adim, a);
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const double* mean = out.data() + static_cast<std::size_t>(i) * adim;
      double* ai = actions + static_cast<std::size_t>(i) * adim;
      for (int d = 0; d < adim; ++d)
        ai[d] = mean[d] + std::exp(p.log_std[d]) * rng.normal();
      log_probs[i] = gaussian_log_prob(mean, p.log_std.data(), adim, ai);
    }
  }
}

void policy_mode(const PolicyParams& p, const double* obs, int n,
                 double* actions) {
  MlpBatchCache cache;
  mlp_forward_batch(p.trunk, p.w, obs, n, cache);
  const auto& out = mlp_batch_output(p.trunk, cache);
  const int adim = p.action_dim();
  if (p.kind == PolicyKind::kCategorical) {
    for (int i = 0; i < n; ++i) {
      const double* logits = out.data() + static_cast<std::size_t>(i) * adim;
      int best = 0;
      for (int j = 1; j < adim; ++j)
        if (logits[j] > logits[best]) best = j;
      actions[i] = static_cast<double>(best);
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < adim; ++d)
        actions[static_cast<std::size_t>(i) * adim + d] =
            out[static_cast<std::size_t>(i) * adim + d];
  }
}

double policy_log_prob(const PolicyParams& p, std::span<const double> state,
                       std::span<const double> action) {
  if (static_cast<int>(state.size()) != p.trunk.input_dim())
    throw std::invalid_argument("policy_log_prob: state dimension mismatch");
  const auto out = mlp_forward(p.trunk, p.w, state);
  if (p.kind == PolicyKind::kCategorical) {
    const int a = static_cast<int>(action[0]);
    if (a < 0 || a >= p.action_dim())
      throw std::invalid_argument("policy_log_prob: action index out of range");
    return categorical_log_prob(out.data(), p.action_dim(), a);
  }
  if (static_cast<int>(action.size()) != p.action_dim())
    throw std::invalid_argument("policy_log_prob: action dimension mismatch");
  return gaussian_log_prob(out.data(), p.log_std.data(), p.action_dim(),
                           action.data());
}

double policy_entropy(const PolicyParams& p, const double* obs, int n) {
  if (p.kind == PolicyKind::kGaussian) {
    double h = 0.0;
    for (double ls : p.log_std) h += 0.5 * (kLog2Pi + 1.0) + ls;
    return h;
  }
  MlpBatchCache cache;
  mlp_forward_batch(p.trunk, p.w, obs, n, cache);
  const auto& out = mlp_batch_output(p.trunk, cache);
  const int adim = p.action_dim();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* logits = out.data() + static_cast<std::size_t>(i) * adim;
    double mx = logits[0];
    for (int j = 1; j < adim; ++j) mx = std::max(mx, logits[j]);
    double sum = 0.0;
    for (int j = 0; j < adim; ++j) sum += std::exp(logits[j] - mx);
    const double log_sum = std::log(sum);
    double h = 0.0;
    for (int j = 0; j < adim; ++j) {
      const double logp = logits[j] - mx - log_sum;
      h -= std::exp(logp) * logp;
    }
    total += h;
  }
  return total / n;
}

}  // namespace mirrorlab
