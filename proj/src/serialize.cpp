#include "mirrorlab/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace mirrorlab {

namespace {

std::string act_to_string(Act a) { return a == Act::kTanh ? "tanh" : "relu"; }

Act act_from_string(const std::string& s) {
  if (s == "tanh") return Act::kTanh;
  if (s == "relu") return Act::kRelu;
  throw std::invalid_argument("unknown activation: " + s);
}

}  // namespace

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_sci9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.8e", v);
  return buf;
}

json mlp_spec_to_json(const MlpSpec& spec) {
  return json{{"layer_widths", spec.layer_widths},
              {"output_dim", spec.output_dim},
              {"activation", act_to_string(spec.activation)},
              {"use_bias", spec.use_bias}};
}

MlpSpec mlp_spec_from_json(const json& j) {
  MlpSpec spec;
  spec.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.activation = act_from_string(j.at("activation").get<std::string>());
  spec.use_bias = j.at("use_bias").get<bool>();
  spec.validate();
  return spec;
}

json mlp_weights_to_json(const MlpSpec& spec, const MlpWeights& w) {
  return json{{"spec", mlp_spec_to_json(spec)}, {"data", w.data}};
}

void mlp_weights_from_json(const json& j, MlpSpec& spec, MlpWeights& w) {
  spec = mlp_spec_from_json(j.at("spec"));
  w.data = j.at("data").get<std::vector<double>>();
  if (w.data.size() != spec.param_count())
    throw std::invalid_argument("weights file: data length does not match spec");
}

json drift_spec_to_json(const DriftSpec& spec) {
  return std::visit(
      [](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PpoClipDrift>) {
          return json{{"kind", "ppo_clip"}, {"clip_eps", d.clip_eps}};
        } else if constexpr (std::is_same_v<T, DpoDrift>) {
          return json{{"kind", "dpo"}, {"alpha", d.alpha}, {"beta", d.beta}};
        } else if constexpr (std::is_same_v<T, LearnedDrift>) {
          return json{{"kind", "learned"},
                      {"net", mlp_spec_to_json(d.net)},
                      {"weights", d.weights.data},
                      {"ppo_residual", d.ppo_residual},
                      {"clip_eps", d.clip_eps},
                      {"xi", d.xi},
                      {"feature_mask", static_cast<int>(d.feature_mask)}};
        } else {
          return json{{"kind", "constant"}, {"value", d.value}};
        }
      },
      spec);
}

DriftSpec drift_spec_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ppo_clip") {
    PpoClipDrift d;
    d.clip_eps = j.value("clip_eps", 0.2);
    return d;
  }
  if (kind == "dpo") {
    DpoDrift d;
    d.alpha = j.value("alpha", 2.0);
    d.beta = j.value("beta", 0.6);
    return d;
  }
  if (kind == "learned") {
    LearnedDrift d;
    d.net = mlp_spec_from_json(j.at("net"));
    d.weights.data = j.at("weights").get<std::vector<double>>();
    d.ppo_residual = j.value("ppo_residual", true);
    d.clip_eps = j.value("clip_eps", 0.2);
    d.xi = j.value("xi", 1e-6);
    d.feature_mask = static_cast<std::uint8_t>(j.value("feature_mask", 255));
    return d;
  }
  if (kind == "constant") {
    ConstantDrift d;
    d.value = j.value("value", 1.0);
    return d;
  }
  throw std::invalid_argument("unknown drift kind: " + kind);
}

json env_spec_to_json(const EnvSpec& spec) {
  return json{{"id", env_id_to_string(spec.id)},
              {"horizon", spec.horizon},
              {"gamma", spec.gamma}};
}

EnvSpec env_spec_from_json(const json& j) {
  EnvSpec spec = default_env_spec(env_id_from_string(j.at("id").get<std::string>()));
  spec.horizon = j.value("horizon", spec.horizon);
  spec.gamma = j.value("gamma", spec.gamma);
  spec.validate();
  return spec;
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"total_timesteps", cfg.total_timesteps},
              {"unroll_length", cfg.unroll_length},
              {"n_envs", cfg.n_envs},
              {"n_minibatches", cfg.n_minibatches},
              {"n_update_epochs", cfg.n_update_epochs},
              {"learning_rate", cfg.learning_rate},
              {"grad_clip_norm", cfg.grad_clip_norm},
              {"value_loss_coeff", cfg.value_loss_coeff},
              {"entropy_bonus_coeff", cfg.entropy_bonus_coeff},
              {"gamma", cfg.gamma},
              {"lambda", cfg.lambda},
              {"seed", cfg.seed},
              {"eval_episodes", cfg.eval_episodes},
              {"policy_hidden", cfg.policy_hidden},
              {"activation", act_to_string(cfg.activation)},
              {"log_std_init", cfg.log_std_init},
              {"deterministic_eval", cfg.deterministic_eval},
              {"verify_drift_at_start", cfg.verify_drift_at_start}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.total_timesteps = j.value("total_timesteps", cfg.total_timesteps);
  cfg.unroll_length = j.value("unroll_length", cfg.unroll_length);
  cfg.n_envs = j.value("n_envs", cfg.n_envs);
  cfg.n_minibatches = j.value("n_minibatches", cfg.n_minibatches);
  cfg.n_update_epochs = j.value("n_update_epochs", cfg.n_update_epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.grad_clip_norm = j.value("grad_clip_norm", cfg.grad_clip_norm);
  cfg.value_loss_coeff = j.value("value_loss_coeff", cfg.value_loss_coeff);
  cfg.entropy_bonus_coeff = j.value("entropy_bonus_coeff", cfg.entropy_bonus_coeff);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.eval_episodes = j.value("eval_episodes", cfg.eval_episodes);
  cfg.policy_hidden = j.value("policy_hidden", cfg.policy_hidden);
  cfg.activation = act_from_string(j.value("activation", std::string("tanh")));
  cfg.log_std_init = j.value("log_std_init", cfg.log_std_init);
  cfg.deterministic_eval = j.value("deterministic_eval", cfg.deterministic_eval);
  cfg.verify_drift_at_start = j.value("verify_drift_at_start", cfg.verify_drift_at_start);
  return cfg;
}

json es_config_to_json(const EsConfig& cfg) {
  json envs = json::array();
  for (const EnvSpec& e : cfg.envs) envs.push_back(env_spec_to_json(e));
  return json{{"population_size", cfg.population_size},
              {"sigma_init", cfg.sigma_init},
              {"sigma_decay", cfg.sigma_decay},
              {"sigma_limit", cfg.sigma_limit},
              {"n_generations", cfg.n_generations},
              {"outer_lr", cfg.outer_lr},
              {"fitness_eval_episodes", cfg.fitness_eval_episodes},
              {"rank_normalise", cfg.rank_normalise},
              {"ppo_residual", cfg.ppo_residual},
              {"drift_hidden", cfg.drift_hidden},
              {"drift_activation", act_to_string(cfg.drift_activation)},
              {"feature_mask", static_cast<int>(cfg.feature_mask)},
              {"clip_eps", cfg.clip_eps},
              {"xi", cfg.xi},
              {"baseline_runs", cfg.baseline_runs},
              {"inner", train_config_to_json(cfg.inner)},
              {"envs", envs}};
}

EsConfig es_config_from_json(const json& j) {
  EsConfig cfg;
  cfg.population_size = j.value("population_size", cfg.population_size);
  cfg.sigma_init = j.value("sigma_init", cfg.sigma_init);
  cfg.sigma_decay = j.value("sigma_decay", cfg.sigma_decay);
  cfg.sigma_limit = j.value("sigma_limit", cfg.sigma_limit);
  cfg.n_generations = j.value("n_generations", cfg.n_generations);
  cfg.outer_lr = j.value("outer_lr", cfg.outer_lr);
  cfg.fitness_eval_episodes = j.value("fitness_eval_episodes", cfg.fitness_eval_episodes);
  cfg.rank_normalise = j.value("rank_normalise", cfg.rank_normalise);
  cfg.ppo_residual = j.value("ppo_residual", cfg.ppo_residual);
  cfg.drift_hidden = j.value("drift_hidden", cfg.drift_hidden);
  cfg.drift_activation = act_from_string(j.value("drift_activation", std::string("tanh")));
  cfg.feature_mask = static_cast<std::uint8_t>(j.value("feature_mask", 255));
  cfg.clip_eps = j.value("clip_eps", cfg.clip_eps);
  cfg.xi = j.value("xi", cfg.xi);
  cfg.baseline_runs = j.value("baseline_runs", cfg.baseline_runs);
  if (j.contains("inner")) cfg.inner = train_config_from_json(j.at("inner"));
  cfg.envs.clear();
  if (j.contains("envs"))
    for (const json& e : j.at("envs")) cfg.envs.push_back(env_spec_from_json(e));
  return cfg;
}

json validity_report_to_json(const ValidityReport& rep) {
  return json{{"valid", rep.valid},
              {"drift", rep.drift},
              {"checks",
               {{"nonnegative", rep.nonnegative},
                {"zero_at_identity", rep.zero_at_identity},
                {"zero_gradient_at_identity", rep.zero_gradient_at_identity}}},
              {"min_value", rep.min_value},
              {"min_value_r", rep.min_value_r},
              {"min_value_a", rep.min_value_a},
              {"max_abs_identity", rep.max_abs_identity},
              {"max_abs_identity_a", rep.max_abs_identity_a},
              {"max_abs_identity_grad", rep.max_abs_identity_grad},
              {"max_abs_identity_grad_a", rep.max_abs_identity_grad_a},
              {"tol_identity", rep.tol_identity},
              {"tol_gradient", rep.tol_gradient},
              {"grid",
               {{"r_min", rep.grid.r_min},
                {"r_max", rep.grid.r_max},
                {"a_min", rep.grid.a_min},
                {"a_max", rep.grid.a_max},
                {"r_steps", rep.grid.r_steps},
                {"a_steps", rep.grid.a_steps}}}};
}

namespace {

json iteration_to_json(const IterationStats& it) {
  return json{{"timesteps", it.timesteps},
              {"mean_return", it.mean_return},
              {"entropy", it.entropy},
              {"policy_loss", it.policy_loss},
              {"value_loss", it.value_loss},
              {"drift_mean", it.drift_mean},
              {"first_pass_max_ratio_dev", it.first_pass_max_ratio_dev},
              {"first_pass_drift_mean", it.first_pass_drift_mean},
              {"ratio_clamps", it.ratio_clamps}};
}

IterationStats iteration_from_json(const json& j) {
  IterationStats it;
  it.timesteps = j.value("timesteps", 0LL);
  it.mean_return = j.value("mean_return", 0.0);
  it.entropy = j.value("entropy", 0.0);
  it.policy_loss = j.value("policy_loss", 0.0);
  it.value_loss = j.value("value_loss", 0.0);
  it.drift_mean = j.value("drift_mean", 0.0);
  it.first_pass_max_ratio_dev = j.value("first_pass_max_ratio_dev", 0.0);
  it.first_pass_drift_mean = j.value("first_pass_drift_mean", 0.0);
  it.ratio_clamps = j.value("ratio_clamps", 0ULL);
  return it;
}

}  // namespace

json run_record_to_json(const RunRecord& rec) {
  json iters = json::array();
  for (const IterationStats& it : rec.iterations)
    iters.push_back(iteration_to_json(it));
  json policy{{"kind", rec.policy.kind == PolicyKind::kCategorical
                           ? "categorical"
                           : "gaussian"},
              {"trunk", mlp_spec_to_json(rec.policy.trunk)},
              {"weights", rec.policy.w.data},
              {"log_std", rec.policy.log_std}};
  return json{{"diverged", rec.diverged},
              {"divergence_reason", rec.divergence_reason},
              {"final_eval_return", rec.final_eval_return},
              {"iterations", iters},
              {"policy", policy},
              {"critic", mlp_weights_to_json(rec.critic_spec, rec.critic)}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord rec;
  rec.diverged = j.value("diverged", false);
  rec.divergence_reason = j.value("divergence_reason", std::string());
  rec.final_eval_return = j.value("final_eval_return", 0.0);
  for (const json& it : j.at("iterations"))
    rec.iterations.push_back(iteration_from_json(it));
  const json& p = j.at("policy");
  rec.policy.kind = p.at("kind").get<std::string>() == "categorical"
                        ? PolicyKind::kCategorical
                        : PolicyKind::kGaussian;
  rec.policy.trunk = mlp_spec_from_json(p.at("trunk"));
  rec.policy.w.data = p.at("weights").get<std::vector<double>>();
  rec.policy.log_std = p.at("log_std").get<std::vector<double>>();
  mlp_weights_from_json(j.at("critic"), rec.critic_spec, rec.critic);
  return rec;
}

json meta_checkpoint_to_json(const EsConfig& cfg, const MetaCheckpoint& ckpt) {
  json baselines = json::array();
  for (const EnvBaseline& b : ckpt.baselines)
    baselines.push_back(json{{"mean", b.mean}, {"stddev", b.stddev}});
  json history = json::array();
  for (const MetaHistoryRow& row : ckpt.history)
    history.push_back(json{{"generation", row.generation},
                           {"sigma", row.sigma},
                           {"fitness_mean", row.fitness_mean},
                           {"fitness_max", row.fitness_max},
                           {"best_so_far", row.best_so_far},
                           {"n_diverged", row.n_diverged}});
  return json{{"version", ckpt.version},
              {"es_config", es_config_to_json(cfg)},
              {"seed", ckpt.seed},
              {"generation", ckpt.generation},
              {"phi", ckpt.phi},
              {"adam",
               {{"m", ckpt.adam.m},
                {"v", ckpt.adam.v},
                {"step", ckpt.adam.step},
                {"lr", ckpt.adam.lr},
                {"beta1", ckpt.adam.beta1},
                {"beta2", ckpt.adam.beta2},
                {"eps", ckpt.adam.eps}}},
              {"best_phi", ckpt.best_phi},
              {"best_fitness", ckpt.best_fitness},
              {"has_best", ckpt.has_best},
              {"baselines", baselines},
              {"history", history},
              {"phi_trajectory", ckpt.phi_trajectory}};
}

void meta_checkpoint_from_json(const json& j, EsConfig& cfg,
                               MetaCheckpoint& ckpt) {
  if (j.value("version", 0) != 1)
    throw std::invalid_argument("unsupported checkpoint version");
  cfg = es_config_from_json(j.at("es_config"));
  ckpt.version = 1;
  ckpt.seed = j.at("seed").get<std::uint64_t>();
  ckpt.generation = j.at("generation").get<int>();
  ckpt.phi = j.at("phi").get<std::vector<double>>();
  const json& a = j.at("adam");
  ckpt.adam.m = a.at("m").get<std::vector<double>>();
  ckpt.adam.v = a.at("v").get<std::vector<double>>();
  ckpt.adam.step = a.at("step").get<long long>();
  ckpt.adam.lr = a.at("lr").get<double>();
  ckpt.adam.beta1 = a.at("beta1").get<double>();
  ckpt.adam.beta2 = a.at("beta2").get<double>();
  ckpt.adam.eps = a.at("eps").get<double>();
  ckpt.best_phi = j.value("best_phi", std::vector<double>());
  ckpt.best_fitness = j.value("best_fitness", 0.0);
  ckpt.has_best = j.value("has_best", false);
  ckpt.baselines.clear();
  for (const json& b : j.at("baselines"))
    ckpt.baselines.push_back(
        EnvBaseline{b.at("mean").get<double>(), b.at("stddev").get<double>()});
  ckpt.history.clear();
  for (const json& row : j.at("history")) {
    MetaHistoryRow r;
    r.generation = row.at("generation").get<int>();
    r.sigma = row.at("sigma").get<double>();
    r.fitness_mean = row.at("fitness_mean").get<double>();
    r.fitness_max = row.at("fitness_max").get<double>();
    r.best_so_far = row.at("best_so_far").get<double>();
    r.n_diverged = row.at("n_diverged").get<int>();
    ckpt.history.push_back(r);
  }
  ckpt.phi_trajectory =
      j.value("phi_trajectory", std::vector<std::vector<double>>());
}

void write_meta_checkpoint(const std::string& path, const EsConfig& cfg,
                           const MetaCheckpoint& ckpt) {
  write_json_file(path, meta_checkpoint_to_json(cfg, ckpt));
}

void read_meta_checkpoint(const std::string& path, EsConfig& cfg,
                          MetaCheckpoint& ckpt) {
  meta_checkpoint_from_json(load_json_file(path), cfg, ckpt);
}

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json j;
  f >> j;
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

void write_metrics_csv(const RunRecord& rec, std::ostream& os) {
  os << "iteration,timesteps,mean_return,entropy,policy_loss,value_loss,"
        "drift_mean,first_pass_max_ratio_dev,first_pass_drift_mean,"
        "ratio_clamps\n";
  for (std::size_t i = 0; i < rec.iterations.size(); ++i) {
    const IterationStats& it = rec.iterations[i];
    os << i << ',' << it.timesteps << ',' << format_full(it.mean_return) << ','
       << format_full(it.entropy) << ',' << format_full(it.policy_loss) << ','
       << format_full(it.value_loss) << ',' << format_full(it.drift_mean) << ','
       << format_full(it.first_pass_max_ratio_dev) << ','
       << format_full(it.first_pass_drift_mean) << ',' << it.ratio_clamps
       << '\n';
  }
}

void write_summary_csv(const std::vector<RunRecord>& runs, std::ostream& os) {
  os << "iteration,mean_return_mean,mean_return_se,entropy_mean,entropy_se\n";
  if (runs.empty()) return;
  std::size_t n_iters = runs.front().iterations.size();
  for (const RunRecord& r : runs)
    n_iters = std::min(n_iters, r.iterations.size());
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < n_iters; ++i) {
    double ret_mean = 0.0, ent_mean = 0.0;
    for (const RunRecord& r : runs) {
      ret_mean += r.iterations[i].mean_return;
      ent_mean += r.iterations[i].entropy;
    }
    ret_mean /= n;
    ent_mean /= n;
    double ret_var = 0.0, ent_var = 0.0;
    for (const RunRecord& r : runs) {
      ret_var += (r.iterations[i].mean_return - ret_mean) *
                 (r.iterations[i].mean_return - ret_mean);
      ent_var += (r.iterations[i].entropy - ent_mean) *
                 (r.iterations[i].entropy - ent_mean);
    }
    // standard error: sample std (1/(N-1)) over sqrt(N)
    const double ret_se =
        runs.size() > 1 ? std::sqrt(ret_var / (n - 1.0)) / std::sqrt(n) : 0.0;
    const double ent_se =
        runs.size() > 1 ? std::sqrt(ent_var / (n - 1.0)) / std::sqrt(n) : 0.0;
    os << i << ',' << format_full(ret_mean) << ',' << format_full(ret_se) << ','
       << format_full(ent_mean) << ',' << format_full(ent_se) << '\n';
  }
}

void write_heatmap_csv(const HeatmapData& data, std::ostream& os) {
  for (double r : data.r_values) os << ',' << format_sci9(r);
  os << '\n';
  for (std::size_t row = 0; row < data.a_values.size(); ++row) {
    os << format_sci9(data.a_values[row]);
    const double* cells = data.cells.data() + row * data.r_values.size();
    for (std::size_t col = 0; col < data.r_values.size(); ++col)
      os << ',' << format_sci9(cells[col]);
    os << '\n';
  }
}

void write_slices_csv(const DriftSpec& spec, double r_min, double r_max,
                      int resolution, std::ostream& os) {
  os << "r";
  for (double a : kSliceAdvantages) os << ",A=" << a;
  os << '\n';
  for (int i = 0; i < resolution; ++i) {
    const double r =
        r_min + (r_max - r_min) * static_cast<double>(i) / (resolution - 1);
    os << format_sci9(r);
    for (double a : kSliceAdvantages)
      os << ',' << format_sci9(a - drift_dr(spec, r, a).value);
    os << '\n';
  }
}

void write_fitness_history_csv(const std::vector<MetaHistoryRow>& history,
                               std::ostream& os) {
  os << "generation,sigma,fitness_mean,fitness_max,best_so_far,n_diverged\n";
  for (const MetaHistoryRow& row : history)
    os << row.generation << ',' << format_full(row.sigma) << ','
       << format_full(row.fitness_mean) << ',' << format_full(row.fitness_max)
       << ',' << format_full(row.best_so_far) << ',' << row.n_diverged << '\n';
}

void write_compare_csv(const std::vector<std::string>& names,
                       const std::vector<RunRecord>& runs, std::ostream& os) {
  os << "iteration";
  for (const std::string& n : names) os << ',' << n << "_return," << n << "_entropy";
  for (std::size_t k = 1; k < names.size(); ++k)
    os << ",delta_return_" << names[k] << ",delta_entropy_" << names[k];
  os << '\n';
  if (runs.empty()) return;
  std::size_t n_iters = runs.front().iterations.size();
  for (const RunRecord& r : runs)
    n_iters = std::min(n_iters, r.iterations.size());
  for (std::size_t i = 0; i < n_iters; ++i) {
    os << i;
    for (const RunRecord& r : runs)
      os << ',' << format_full(r.iterations[i].mean_return) << ','
         << format_full(r.iterations[i].entropy);
    for (std::size_t k = 1; k < runs.size(); ++k) {
      os << ','
         << format_full(runs[k].iterations[i].mean_return -
                        runs[0].iterations[i].mean_return)
         << ','
         << format_full(runs[k].iterations[i].entropy -
                        runs[0].iterations[i].entropy);
    }
    os << '\n';
  }
}

}  // namespace mirrorlab
