#include "mirrorlab/drift.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mirrorlab/parallel.hpp"

namespace mirrorlab {

namespace {

std::atomic<std::uint64_t> g_ratio_clamps{0};

// finite-difference step for the zero-gradient-at-identity check; small
// enough that shifted-ReLU drifts are identically zero on both sides
constexpr double kIdentityFdStep = 1e-9;

double clamp_ratio(double r) {
  if (r < kRatioMin) {
    g_ratio_clamps.fetch_add(1, std::memory_order_relaxed);
    return kRatioMin;
  }
  return r;
}

// right-hand derivative of ReLU(u(r)) given u and du/dr
double relu_dr(double u, double du) {
  if (u > 0.0) return du;
  if (u == 0.0 && du > 0.0) return du;
  return 0.0;
}

double clip(double r, double lo, double hi) {
  return std::min(std::max(r, lo), hi);
}

// PPO drift pre-activation (r - clip(r, 1 +- eps)) * A and its
// right-hand derivative.
struct PreAct {
  double u;
  double du;
};
PreAct ppo_preact(double r, double adv, double eps) {
  const double c = clip(r, 1.0 - eps, 1.0 + eps);
  const double dclip = (r >= 1.0 - eps && r < 1.0 + eps) ? 1.0 : 0.0;
  return {(r - c) * adv, (1.0 - dclip) * adv};
}

bool ppo_at_kink(double r, double adv, double eps) {
  return (r == 1.0 + eps && adv > 0.0) || (r == 1.0 - eps && adv < 0.0);
}

double sech_sq(double x) {
  const double c = std::cosh(x);
  return 1.0 / (c * c);
}

PreAct dpo_preact(double r, double adv, double alpha, double beta) {
  if (adv >= 0.0) {
    const double s = (r - 1.0) * adv;
    return {s - alpha * std::tanh(s / alpha),
            adv - adv * sech_sq(s / alpha)};
  }
  const double s = std::log(r) * adv;
  return {s - beta * std::tanh(s / beta),
          (adv / r) * (1.0 - sech_sq(s / beta))};
}

thread_local MlpBatchCache t_learned_cache;

double learned_pre(const LearnedDrift& d, double r, double adv,
                   double* dpre_dr) {
  const FeatureVector x = drift_features(r, adv, d.feature_mask);
  mlp_forward_batch(d.net, d.weights, x.data(), 1, t_learned_cache);
  const double raw = mlp_batch_output(d.net, t_learned_cache)[0];
  if (dpre_dr != nullptr) {
    const FeatureVector dx_dr = drift_features_dr(r, adv, d.feature_mask);
    double upstream = 1.0;
    FeatureVector dx{};
    std::vector<double> dw(d.net.param_count(), 0.0);
    mlp_backward_batch(d.net, d.weights, t_learned_cache, &upstream, dw.data(),
                       dx.data());
    double s = 0.0;
    for (int k = 0; k < kNumDriftFeatures; ++k) s += dx[k] * dx_dr[k];
    *dpre_dr = s;
  }
  return raw;
}

}  // namespace

std::uint64_t ratio_clamp_count() { return g_ratio_clamps.load(); }
void reset_ratio_clamp_count() { g_ratio_clamps.store(0); }

FeatureVector drift_features(double r, double adv, std::uint8_t mask) {
  r = clamp_ratio(r);
  const double one = 1.0 - r;
  const double lg = std::log(r);
  FeatureVector x = {one,      one * one,      one * adv,     one * one * adv,
                     lg,       lg * lg,        lg * adv,      lg * lg * adv};
  for (int k = 0; k < kNumDriftFeatures; ++k)
    if (!(mask & (1u << k))) x[k] = 0.0;
  return x;
}

FeatureVector drift_features_dr(double r, double adv, std::uint8_t mask) {
  r = clamp_ratio(r);
  const double one = 1.0 - r;
  const double lg = std::log(r);
  FeatureVector dx = {-1.0,          -2.0 * one,        -adv,
                      -2.0 * one * adv, 1.0 / r,        2.0 * lg / r,
                      adv / r,       2.0 * lg * adv / r};
  for (int k = 0; k < kNumDriftFeatures; ++k)
    if (!(mask & (1u << k))) dx[k] = 0.0;
  return dx;
}

void validate_drift_spec(const DriftSpec& spec) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PpoClipDrift>) {
          if (!(d.clip_eps > 0.0))
            throw std::invalid_argument("ppo_clip: eps must be > 0");
        } else if constexpr (std::is_same_v<T, DpoDrift>) {
          if (!(d.alpha > 0.0) || !(d.beta > 0.0))
            throw std::invalid_argument("dpo: alpha and beta must be > 0");
        } else if constexpr (std::is_same_v<T, LearnedDrift>) {
          d.net.validate();
          if (d.net.use_bias)
            throw std::invalid_argument(
                "learned drift: network must be bias-free (f(1,A)=0)");
          if (d.net.input_dim() != kNumDriftFeatures)
            throw std::invalid_argument("learned drift: input width must be 8");
          if (d.net.output_dim != 1)
            throw std::invalid_argument("learned drift: output must be scalar");
          if (d.weights.data.size() != d.net.param_count())
            throw std::invalid_argument("learned drift: weight length mismatch");
          if (!(d.xi > 0.0))
            throw std::invalid_argument("learned drift: xi must be > 0");
          if (!(d.clip_eps > 0.0))
            throw std::invalid_argument("learned drift: eps must be > 0");
          if (d.feature_mask == 0)
            throw std::invalid_argument("learned drift: empty feature mask");
        }
      },
      spec);
}

std::string drift_name(const DriftSpec& spec) {
  return std::visit(
      [](const auto& d) -> std::string {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PpoClipDrift>) return "ppo_clip";
        else if constexpr (std::is_same_v<T, DpoDrift>) return "dpo";
        else if constexpr (std::is_same_v<T, LearnedDrift>)
          return d.ppo_residual ? "learned_residual" : "learned";
        else return "constant";
      },
      spec);
}

MlpSpec learned_drift_net_spec(const std::vector<int>& hidden, Act activation) {
  MlpSpec spec;
  spec.layer_widths.push_back(kNumDriftFeatures);
  spec.layer_widths.insert(spec.layer_widths.end(), hidden.begin(), hidden.end());
  spec.output_dim = 1;
  spec.activation = activation;
  spec.use_bias = false;
  spec.validate();
  return spec;
}

LearnedDrift make_learned_drift(const std::vector<int>& hidden, Act activation,
                                Rng& rng, bool ppo_residual, double clip_eps,
                                double xi, std::uint8_t feature_mask) {
  LearnedDrift d;
  d.net = learned_drift_net_spec(hidden, activation);
  d.weights = mlp_init(d.net, rng);
  d.ppo_residual = ppo_residual;
  d.clip_eps = clip_eps;
  d.xi = xi;
  d.feature_mask = feature_mask;
  return d;
}

double drift_eval(const DriftSpec& spec, double r, double adv) {
  r = clamp_ratio(r);
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PpoClipDrift>) {
          return std::max(ppo_preact(r, adv, d.clip_eps).u, 0.0);
        } else if constexpr (std::is_same_v<T, DpoDrift>) {
          return std::max(dpo_preact(r, adv, d.alpha, d.beta).u, 0.0);
        } else if constexpr (std::is_same_v<T, LearnedDrift>) {
          double pre = learned_pre(d, r, adv, nullptr) - d.xi;
          if (d.ppo_residual)
            pre += std::max(ppo_preact(r, adv, d.clip_eps).u, 0.0);
          return std::max(pre, 0.0);
        } else {
          return d.value;
        }
      },
      spec);
}

DriftDeriv drift_dr(const DriftSpec& spec, double r, double adv) {
  r = clamp_ratio(r);
  return std::visit(
      [&](const auto& d) -> DriftDeriv {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PpoClipDrift>) {
          const PreAct p = ppo_preact(r, adv, d.clip_eps);
          return {relu_dr(p.u, p.du), ppo_at_kink(r, adv, d.clip_eps)};
        } else if constexpr (std::is_same_v<T, DpoDrift>) {
          const PreAct p = dpo_preact(r, adv, d.alpha, d.beta);
          return {relu_dr(p.u, p.du), false};
        } else if constexpr (std::is_same_v<T, LearnedDrift>) {
          double dnet = 0.0;
          double pre = learned_pre(d, r, adv, &dnet) - d.xi;
          double dpre = dnet;
          bool kink = false;
          if (d.ppo_residual) {
            const PreAct g = ppo_preact(r, adv, d.clip_eps);
            pre += std::max(g.u, 0.0);
            dpre += relu_dr(g.u, g.du);
            kink = ppo_at_kink(r, adv, d.clip_eps);
          }
          kink = kink || (pre == 0.0 && dpre != 0.0);
          return {relu_dr(pre, dpre), kink};
        } else {
          return {0.0, false};
        }
      },
      spec);
}

double objective_per_sample(const DriftSpec& spec, double r, double adv) {
  r = clamp_ratio(r);
  return r * adv - drift_eval(spec, r, adv);
}

ValidityReport verify_drift(const DriftSpec& spec, const GridSpec& grid,
                            double tol_identity, double tol_gradient) {
  validate_drift_spec(spec);
  ValidityReport rep;
  rep.grid = grid;
  rep.tol_identity = tol_identity;
  rep.tol_gradient = tol_gradient;
  rep.drift = drift_name(spec);

  auto grid_value = [](double lo, double hi, int steps, int i) {
    if (steps == 1) return lo;
    return lo + (hi - lo) * static_cast<double>(i) / (steps - 1);
  };

  rep.min_value = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia < grid.a_steps; ++ia) {
    const double a = grid_value(grid.a_min, grid.a_max, grid.a_steps, ia);
    for (int ir = 0; ir < grid.r_steps; ++ir) {
      const double r = grid_value(grid.r_min, grid.r_max, grid.r_steps, ir);
      const double f = drift_eval(spec, r, a);
      if (f < rep.min_value) {
        rep.min_value = f;
        rep.min_value_r = r;
        rep.min_value_a = a;
      }
    }
    const double f_id = std::abs(drift_eval(spec, 1.0, a));
    if (f_id > rep.max_abs_identity) {
      rep.max_abs_identity = f_id;
      rep.max_abs_identity_a = a;
    }
    const double h = kIdentityFdStep;
    const double fd =
        std::abs((drift_eval(spec, 1.0 + h, a) - drift_eval(spec, 1.0 - h, a)) /
                 (2.0 * h));
    if (fd > rep.max_abs_identity_grad) {
      rep.max_abs_identity_grad = fd;
      rep.max_abs_identity_grad_a = a;
    }
  }

  rep.nonnegative = rep.min_value >= 0.0;
  rep.zero_at_identity = rep.max_abs_identity <= tol_identity;
  rep.zero_gradient_at_identity = rep.max_abs_identity_grad <= tol_gradient;
  rep.valid = rep.nonnegative && rep.zero_at_identity &&
              rep.zero_gradient_at_identity;
  return rep;
}

HeatmapData objective_derivative_heatmap(const DriftSpec& spec,
                                         const GridSpec& grid) {
  if (grid.r_steps < 16 || grid.a_steps < 16)
    throw std::invalid_argument("heatmap: resolution must be >= 16");
  HeatmapData h;
  h.r_values.resize(grid.r_steps);
  h.a_values.resize(grid.a_steps);
  for (int i = 0; i < grid.r_steps; ++i)
    h.r_values[i] =
        grid.r_min + (grid.r_max - grid.r_min) * static_cast<double>(i) /
                         (grid.r_steps - 1);
  for (int i = 0; i < grid.a_steps; ++i)
    h.a_values[i] =
        grid.a_min + (grid.a_max - grid.a_min) * static_cast<double>(i) /
                         (grid.a_steps - 1);
  h.cells.assign(static_cast<std::size_t>(grid.a_steps) * grid.r_steps, 0.0);
  parallel_for(grid.a_steps, [&](int row) {
    const double a = h.a_values[row];
    double* cells = h.cells.data() + static_cast<std::size_t>(row) * grid.r_steps;
    for (int col = 0; col < grid.r_steps; ++col)
      cells[col] = a - drift_dr(spec, h.r_values[col], a).value;
  });
  return h;
}

}  // namespace mirrorlab
