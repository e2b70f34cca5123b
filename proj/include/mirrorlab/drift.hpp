#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mirrorlab/nn.hpp"

namespace mirrorlab {

// Ratios below this are clamped before taking logs; occurrences are counted
// and surfaced in training records.
inline constexpr double kRatioMin = 1e-8;
inline constexpr int kNumDriftFeatures = 8;
inline constexpr std::uint8_t kAllFeatures = 0xFF;

using FeatureVector = std::array<double, kNumDriftFeatures>;

// [(1-r), (1-r)^2, (1-r)A, (1-r)^2 A, log r, (log r)^2, (log r)A, (log r)^2 A]
FeatureVector drift_features(double r, double adv,
                             std::uint8_t feature_mask = kAllFeatures);
// d/dr of each feature, same masking
FeatureVector drift_features_dr(double r, double adv,
                                std::uint8_t feature_mask = kAllFeatures);

std::uint64_t ratio_clamp_count();
void reset_ratio_clamp_count();

struct PpoClipDrift {
  double clip_eps = 0.2;
};

struct DpoDrift {
  double alpha = 2.0;  // A >= 0 branch
  double beta = 0.6;   // A < 0 branch
};

struct LearnedDrift {
  MlpSpec net;         // 8 inputs, scalar output, no bias terms
  MlpWeights weights;
  bool ppo_residual = true;
  double clip_eps = 0.2;  // residual term
  double xi = 1e-6;       // output shift: ReLU(pre - xi)
  std::uint8_t feature_mask = kAllFeatures;
};

// Deliberately invalid drift (f == value everywhere). Negative control for
// the validity checker; never used for training.
struct ConstantDrift {
  double value = 1.0;
};

using DriftSpec = std::variant<PpoClipDrift, DpoDrift, LearnedDrift, ConstantDrift>;

// Throws std::invalid_argument on malformed specs (biased learned net,
// non-positive eps/xi, empty feature mask, weight length mismatch).
void validate_drift_spec(const DriftSpec& spec);
std::string drift_name(const DriftSpec& spec);

// Default spec for a learned drift network: 8 -> hidden... -> 1, bias-free.
MlpSpec learned_drift_net_spec(const std::vector<int>& hidden, Act activation);
LearnedDrift make_learned_drift(const std::vector<int>& hidden, Act activation,
                                Rng& rng, bool ppo_residual,
                                double clip_eps = 0.2, double xi = 1e-6,
                                std::uint8_t feature_mask = kAllFeatures);

double drift_eval(const DriftSpec& spec, double r, double adv);

struct DriftDeriv {
  double value = 0.0;   // right-hand derivative where f has a kink
  bool at_kink = false;
};
DriftDeriv drift_dr(const DriftSpec& spec, double r, double adv);

// r*A - drift_eval(spec, r, A); for PPO-clip this matches the clipped
// surrogate min(rA, clip(r, 1 +- eps) A).
double objective_per_sample(const DriftSpec& spec, double r, double adv);

struct GridSpec {
  double r_min = 0.1;
  double r_max = 3.0;
  double a_min = -3.0;
  double a_max = 3.0;
  int r_steps = 300;
  int a_steps = 300;
};

struct ValidityReport {
  bool valid = false;
  bool nonnegative = false;
  bool zero_at_identity = false;
  bool zero_gradient_at_identity = false;
  double min_value = 0.0;       // over the grid; must be >= 0
  double min_value_r = 0.0;
  double min_value_a = 0.0;
  double max_abs_identity = 0.0;  // max_A |f(1, A)|
  double max_abs_identity_a = 0.0;
  double max_abs_identity_grad = 0.0;  // central finite diff at r = 1
  double max_abs_identity_grad_a = 0.0;
  double tol_identity = 1e-12;
  double tol_gradient = 1e-6;
  GridSpec grid;
  std::string drift;
};

ValidityReport verify_drift(const DriftSpec& spec, const GridSpec& grid = {},
                            double tol_identity = 1e-12,
                            double tol_gradient = 1e-6);

// Ratio-derivative of the per-sample objective, A - df/dr, over a grid.
// Rows are A values, columns are r values; rows are sharded across workers.
struct HeatmapData {
  std::vector<double> r_values;
  std::vector<double> a_values;
  std::vector<double> cells;  // row-major [a_steps x r_steps]
};
HeatmapData objective_derivative_heatmap(const DriftSpec& spec,
                                         const GridSpec& grid);

inline constexpr std::array<double, 4> kSliceAdvantages = {-3.0, -1.0, 1.0, 3.0};

}  // namespace mirrorlab
