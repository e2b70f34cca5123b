#include "mirrorlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace mirrorlab {

namespace {

constexpr double kLogRatioClamp = 20.0;

void clip_global_norm(std::vector<double>& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
}

void params_to_nets(const ActorCriticLayout& layout,
                    const std::vector<double>& params, PolicyParams& policy,
                    MlpWeights& critic) {
  std::copy(params.begin(), params.begin() + layout.trunk_size(),
            policy.w.data.begin());
  std::copy(params.begin() + layout.log_std_offset(),
            params.begin() + layout.log_std_offset() + layout.log_std_dim,
            policy.log_std.begin());
  std::copy(params.begin() + layout.critic_offset(), params.end(),
            critic.data.begin());
}

}  // namespace

void TrainConfig::validate() const {
  if (unroll_length < 1) throw std::invalid_argument("unroll_length must be >= 1");
  if (n_envs < 1) throw std::invalid_argument("n_envs must be >= 1");
  if (n_minibatches < 1) throw std::invalid_argument("n_minibatches must be >= 1");
  if (batch_size() % n_minibatches != 0)
    throw std::invalid_argument("minibatch count must divide the batch size");
  if (n_update_epochs < 0) throw std::invalid_argument("n_update_epochs must be >= 0");
  if (total_timesteps < batch_size())
    throw std::invalid_argument("total_timesteps smaller than one batch");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("grad_clip_norm must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in (0,1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must be in [0,1]");
  if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  if (policy_hidden.empty()) throw std::invalid_argument("policy_hidden must not be empty");
}

MinibatchStats minibatch_loss(const ActorCriticLayout& layout,
                              const std::vector<double>& params,
                              const Batch& batch, std::span<const int> indices,
                              const DriftSpec& drift, double vf_coeff,
                              double ent_coeff, std::vector<double>* grad) {
  const int m = static_cast<int>(indices.size());
  if (m < 1) throw std::invalid_argument("minibatch_loss: empty minibatch");
  if (params.size() != layout.total_size())
    throw std::invalid_argument("minibatch_loss: parameter length mismatch");

  const int obs_dim = batch.obs_dim;
  const int act_dim = layout.trunk.output_dim;
  std::vector<double> obs(static_cast<std::size_t>(m) * obs_dim);
  std::vector<double> actions(static_cast<std::size_t>(m) * batch.act_dim);
  for (int i = 0; i < m; ++i) {
    const int row = indices[i];
    std::copy_n(batch.states.begin() + static_cast<std::size_t>(row) * obs_dim,
                obs_dim, obs.begin() + static_cast<std::size_t>(i) * obs_dim);
    std::copy_n(
        batch.actions.begin() + static_cast<std::size_t>(row) * batch.act_dim,
        batch.act_dim, actions.begin() + static_cast<std::size_t>(i) * batch.act_dim);
  }

  const std::span<const double> trunk_w(params.data(), layout.trunk_size());
  const std::span<const double> log_std(params.data() + layout.log_std_offset(),
                                        layout.log_std_dim);
  const std::span<const double> critic_w(params.data() + layout.critic_offset(),
                                         layout.critic.param_count());

  MlpBatchCache trunk_cache;
  mlp_forward_batch(layout.trunk, trunk_w, obs.data(), m, trunk_cache);
  const auto& out = mlp_batch_output(layout.trunk, trunk_cache);
  MlpBatchCache critic_cache;
  mlp_forward_batch(layout.critic, critic_w, obs.data(), m, critic_cache);
  const auto& values = mlp_batch_output(layout.critic, critic_cache);

  MinibatchStats st;
  const double inv_m = 1.0 / m;
  std::vector<double> d_out(static_cast<std::size_t>(m) * act_dim, 0.0);
  std::vector<double> d_values(m, 0.0);
  std::vector<double> d_log_std(layout.log_std_dim, 0.0);

  double surrogate_sum = 0.0;
  double value_sq_sum = 0.0;
  double entropy_sum = 0.0;
  for (int i = 0; i < m; ++i) {
    const int row = indices[i];
    const double adv = batch.advantages[row];
    const double* oi = out.data() + static_cast<std::size_t>(i) * act_dim;

    double new_lp;
    if (layout.kind == PolicyKind::kCategorical) {
      new_lp = categorical_log_prob(oi, act_dim, static_cast<int>(actions[i]));
    } else {
      new_lp = gaussian_log_prob(
          oi, log_std.data(), act_dim,
          actions.data() + static_cast<std::size_t>(i) * act_dim);
    }
    double delta = new_lp - batch.old_log_probs[row];
    const bool clamped = std::abs(delta) >= kLogRatioClamp;
    delta = std::min(std::max(delta, -kLogRatioClamp), kLogRatioClamp);
    const double ratio = std::exp(delta);
    if (ratio < kRatioMin) st.ratio_clamps += 1;
    st.max_ratio_dev = std::max(st.max_ratio_dev, std::abs(ratio - 1.0));

    const double f = drift_eval(drift, ratio, adv);
    const double fdr = drift_dr(drift, ratio, adv).value;
    st.drift_mean += f * inv_m;
    surrogate_sum += ratio * adv - f;

    // d loss / d log pi = -(A - df/dr) * dr/dlogp, zero past the ratio clamp
    const double dratio = clamped ? 0.0 : ratio;
    const double coef = -(adv - fdr) * dratio * inv_m;

    double* di = d_out.data() + static_cast<std::size_t>(i) * act_dim;
    if (layout.kind == PolicyKind::kCategorical) {
      const int a = static_cast<int>(actions[i]);
      double mx = oi[0];
      for (int j = 1; j < act_dim; ++j) mx = std::max(mx, oi[j]);
      double sum = 0.0;
      for (int j = 0; j < act_dim; ++j) sum += std::exp(oi[j] - mx);
      const double log_sum = std::log(sum);
      double h_i = 0.0;
      for (int j = 0; j < act_dim; ++j) {
        const double logp = oi[j] - mx - log_sum;
        h_i -= std::exp(logp) * logp;
      }
      entropy_sum += h_i;
      for (int j = 0; j < act_dim; ++j) {
        const double p_j = std::exp(oi[j] - mx - log_sum);
        di[j] = coef * ((j == a ? 1.0 : 0.0) - p_j);
        if (ent_coeff != 0.0) {
          const double logp_j = oi[j] - mx - log_sum;
          di[j] += ent_coeff * inv_m * p_j * (logp_j + h_i);
        }
      }
    } else {
      const double* ai = actions.data() + static_cast<std::size_t>(i) * act_dim;
      for (int d = 0; d < act_dim; ++d) {
        const double sigma = std::exp(log_std[d]);
        const double z = (ai[d] - oi[d]) / sigma;
        di[d] = coef * z / sigma;
        d_log_std[d] += coef * (z * z - 1.0);
      }
    }

    const double verr = values[i] - batch.returns[row];
    value_sq_sum += verr * verr;
    d_values[i] = vf_coeff * verr * inv_m;
  }

  if (layout.kind == PolicyKind::kGaussian) {
    double h = 0.0;
    for (int d = 0; d < layout.log_std_dim; ++d)
      h += 0.5 * (1.8378770664093454836 + 1.0) + log_std[d];
    entropy_sum = h * m;  // state-independent
    if (ent_coeff != 0.0)
      for (int d = 0; d < layout.log_std_dim; ++d) d_log_std[d] += -ent_coeff;
  }

  st.policy_loss = -surrogate_sum * inv_m;
  st.value_loss = 0.5 * value_sq_sum * inv_m;
  st.entropy = entropy_sum * inv_m;
  st.total_loss =
      st.policy_loss + vf_coeff * st.value_loss - ent_coeff * st.entropy;

  if (grad != nullptr) {
    if (grad->size() != layout.total_size())
      throw std::invalid_argument("minibatch_loss: gradient length mismatch");
    mlp_backward_batch(layout.trunk, trunk_w, trunk_cache, d_out.data(),
                       grad->data(), nullptr);
    for (int d = 0; d < layout.log_std_dim; ++d)
      (*grad)[layout.log_std_offset() + d] += d_log_std[d];
    mlp_backward_batch(layout.critic, critic_w, critic_cache, d_values.data(),
                       grad->data() + layout.critic_offset(), nullptr);
  }
  return st;
}

double evaluate(const PolicyParams& policy, const EnvSpec& env_spec,
                int n_episodes, std::uint64_t seed, bool deterministic) {
  if (n_episodes < 1)
    throw std::invalid_argument("evaluate: n_episodes must be >= 1");
  VecEnv env(env_spec, n_episodes, derive_seed(seed, kStreamEval, 0));
  Rng rng(derive_seed(seed, kStreamEval, 1));
  const int n = n_episodes;
  const int obs_dim = env.obs_dim();
  const bool discrete = env_is_discrete(env_spec.id);
  const int act_dim = discrete ? 1 : env_action_dim(env_spec.id);

  std::vector<double> obs(static_cast<std::size_t>(n) * obs_dim);
  std::vector<double> actions(static_cast<std::size_t>(n) * act_dim);
  std::vector<double> log_probs(n);
  std::vector<double> rewards(n);
  std::vector<std::uint8_t> dones(n);
  std::vector<std::uint8_t> finished(n, 0);
  std::vector<double> returns(n, 0.0);

  env.reset(obs.data());
  int remaining = n;
  for (int step = 0; step < env_spec.horizon && remaining > 0; ++step) {
    if (deterministic)
      policy_mode(policy, obs.data(), n, actions.data());
    else
      policy_sample(policy, obs.data(), n, rng, actions.data(), log_probs.data());
    env.step(actions.data(), obs.data(), rewards.data(), dones.data());
    for (int i = 0; i < n; ++i) {
      if (finished[i]) continue;
      returns[i] += rewards[i];
      if (dones[i]) {
        finished[i] = 1;
        --remaining;
      }
    }
  }
  return std::accumulate(returns.begin(), returns.end(), 0.0) / n;
}

RunRecord train(const EnvSpec& env_spec, const DriftSpec& drift,
                const TrainConfig& cfg) {
  env_spec.validate();
  cfg.validate();
  validate_drift_spec(drift);
  if (cfg.verify_drift_at_start) {
    const ValidityReport rep = verify_drift(drift);
    if (!rep.valid)
      throw DriftInvalidError("drift '" + drift_name(drift) +
                              "' failed the validity checks");
  }

  Rng policy_rng(derive_seed(cfg.seed, kStreamPolicyInit));
  PolicyParams policy = make_policy(env_spec.id, cfg.policy_hidden,
                                    cfg.activation, cfg.log_std_init, policy_rng);
  MlpSpec critic_spec;
  critic_spec.layer_widths.push_back(env_obs_dim(env_spec.id));
  critic_spec.layer_widths.insert(critic_spec.layer_widths.end(),
                                  cfg.policy_hidden.begin(),
                                  cfg.policy_hidden.end());
  critic_spec.output_dim = 1;
  critic_spec.activation = cfg.activation;
  critic_spec.use_bias = true;
  Rng critic_rng(derive_seed(cfg.seed, kStreamCriticInit));
  MlpWeights critic = mlp_init(critic_spec, critic_rng);

  ActorCriticLayout layout;
  layout.kind = policy.kind;
  layout.trunk = policy.trunk;
  layout.critic = critic_spec;
  layout.log_std_dim = static_cast<int>(policy.log_std.size());

  std::vector<double> params;
  params.reserve(layout.total_size());
  params.insert(params.end(), policy.w.data.begin(), policy.w.data.end());
  params.insert(params.end(), policy.log_std.begin(), policy.log_std.end());
  params.insert(params.end(), critic.data.begin(), critic.data.end());

  AdamState adam = adam_init(params.size(), cfg.learning_rate);
  VecEnv env(env_spec, cfg.n_envs, cfg.seed);
  Rng shuffle_rng(derive_seed(cfg.seed, kStreamShuffle));

  RunRecord rec;
  rec.critic_spec = critic_spec;
  const int batch_size = cfg.batch_size();
  const int minibatch_size = batch_size / cfg.n_minibatches;
  const int n_iterations = cfg.n_iterations();
  std::vector<int> perm(batch_size);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> grad(params.size(), 0.0);

  for (int iter = 0; iter < n_iterations; ++iter) {
    params_to_nets(layout, params, policy, critic);
    IterationStats st;
    st.timesteps = static_cast<long long>(iter + 1) * batch_size;
    try {
      Batch batch = collect(policy, critic_spec, critic, env, cfg.unroll_length,
                            derive_seed(cfg.seed, kStreamCollect, iter));
      compute_advantages(batch, cfg.gamma, cfg.lambda);
      if (iter == 0 && !cfg.dump_batch_path.empty()) {
        std::ofstream f(cfg.dump_batch_path);
        write_batch_csv(batch, f);
      }

      bool first_pass = true;
      double policy_loss = 0.0, value_loss = 0.0, drift_mean = 0.0;
      int n_minibatches_done = 0;
      for (int epoch = 0; epoch < cfg.n_update_epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), shuffle_rng.engine());
        for (int mb = 0; mb < cfg.n_minibatches; ++mb) {
          const std::span<const int> idx(perm.data() + mb * minibatch_size,
                                         minibatch_size);
          std::fill(grad.begin(), grad.end(), 0.0);
          const MinibatchStats ms =
              minibatch_loss(layout, params, batch, idx, drift,
                             cfg.value_loss_coeff, cfg.entropy_bonus_coeff, &grad);
          if (first_pass) {
            st.first_pass_max_ratio_dev = ms.max_ratio_dev;
            st.first_pass_drift_mean = ms.drift_mean;
            first_pass = false;
          }
          if (!std::isfinite(ms.total_loss))
            throw std::runtime_error("non-finite loss");
          clip_global_norm(grad, cfg.grad_clip_norm);
          adam_step(adam, params, grad);
          policy_loss += ms.policy_loss;
          value_loss += ms.value_loss;
          drift_mean += ms.drift_mean;
          st.ratio_clamps += ms.ratio_clamps;
          ++n_minibatches_done;
        }
      }
      if (n_minibatches_done > 0) {
        st.policy_loss = policy_loss / n_minibatches_done;
        st.value_loss = value_loss / n_minibatches_done;
        st.drift_mean = drift_mean / n_minibatches_done;
      }

      params_to_nets(layout, params, policy, critic);
      st.mean_return = evaluate(policy, env_spec, cfg.eval_episodes,
                                derive_seed(cfg.seed, kStreamEval, iter),
                                cfg.deterministic_eval);
      st.entropy = policy_entropy(policy, batch.states.data(), batch.size());
      rec.iterations.push_back(st);
    } catch (const std::runtime_error& e) {
      rec.diverged = true;
      rec.divergence_reason = e.what();
      rec.iterations.push_back(st);
      break;
    }
  }

  params_to_nets(layout, params, policy, critic);
  rec.policy = policy;
  rec.critic = critic;
  if (!rec.diverged)
    rec.final_eval_return =
        evaluate(policy, env_spec, cfg.eval_episodes,
                 derive_seed(cfg.seed, kStreamEval,
                             static_cast<std::uint64_t>(n_iterations)),
                 cfg.deterministic_eval);
  return rec;
}

}  // namespace mirrorlab
