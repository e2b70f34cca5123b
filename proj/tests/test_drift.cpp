#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mirrorlab/drift.hpp"

using namespace mirrorlab;

namespace {

LearnedDrift random_learned(std::uint64_t seed, bool residual,
                            const std::vector<int>& hidden = {128},
                            Act act = Act::kTanh) {
  Rng rng(seed);
  return make_learned_drift(hidden, act, rng, residual);
}

double grid_at(double lo, double hi, int steps, int i) {
  return lo + (hi - lo) * static_cast<double>(i) / (steps - 1);
}

}  // namespace

TEST_SUITE("drift") {

TEST_CASE("feature vector formulas") {
  SUBCASE("r = 1 zeroes every feature") {
    const FeatureVector x = drift_features(1.0, 2.7);
    for (double v : x) CHECK(v == 0.0);
  }
  SUBCASE("log features at r = e") {
    const FeatureVector x = drift_features(std::exp(1.0), 2.0);
    CHECK(x[4] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x[5] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x[6] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x[7] == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("full vector matches the direct formulas") {
    const double r = 0.5, a = -1.0;
    const FeatureVector x = drift_features(r, a);
    const double one = 1.0 - r, lg = std::log(r);
    const double want[8] = {one,     one * one,  one * a, one * one * a,
                            lg,      lg * lg,    lg * a,  lg * lg * a};
    for (int k = 0; k < 8; ++k) CHECK(x[k] == doctest::Approx(want[k]).epsilon(1e-15));
  }
  SUBCASE("feature mask zeroes excluded entries") {
    const FeatureVector x = drift_features(0.5, -1.0, 0x0F);
    for (int k = 0; k < 4; ++k) CHECK(x[k] != 0.0);
    for (int k = 4; k < 8; ++k) CHECK(x[k] == 0.0);
    const FeatureVector dx = drift_features_dr(0.5, -1.0, 0xF0);
    for (int k = 0; k < 4; ++k) CHECK(dx[k] == 0.0);
    for (int k = 4; k < 8; ++k) CHECK(dx[k] != 0.0);
  }
  SUBCASE("non-positive ratios clamp and count") {
    reset_ratio_clamp_count();
    const FeatureVector x = drift_features(-0.5, 1.0);
    CHECK(ratio_clamp_count() == 1);
    for (double v : x) CHECK(std::isfinite(v));
    CHECK(x[0] == doctest::Approx(1.0 - kRatioMin));
    reset_ratio_clamp_count();
  }
}

TEST_CASE("ppo-clip drift values") {
  const DriftSpec ppo = PpoClipDrift{0.2};
  CHECK(drift_eval(ppo, 1.3, 1.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(drift_eval(ppo, 0.7, -1.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(drift_eval(ppo, 1.1, 1.0) == 0.0);
  CHECK(drift_eval(ppo, 1.0, 5.0) == 0.0);
}

TEST_CASE("dpo drift values") {
  const DriftSpec dpo = DpoDrift{2.0, 0.6};
  CHECK(drift_eval(dpo, 2.0, 4.0) ==
        doctest::Approx(4.0 - 2.0 * std::tanh(2.0)).epsilon(1e-14));
  CHECK(drift_eval(dpo, 2.0, 4.0) == doctest::Approx(2.07194).epsilon(1e-4));
  // (r-1)A <= 0 forces the A>=0 branch to zero
  CHECK(drift_eval(dpo, 0.9, 3.0) == 0.0);
  CHECK(drift_eval(dpo, 1.0, -2.5) == 0.0);
}

TEST_CASE("every variant vanishes at the identity ratio") {
  const std::vector<DriftSpec> specs = {
      PpoClipDrift{0.2}, DpoDrift{2.0, 0.6}, DriftSpec(random_learned(5, true)),
      DriftSpec(random_learned(6, false))};
  for (const DriftSpec& s : specs)
    for (double a : {-3.0, -0.5, 0.0, 1.0, 3.0}) {
      CHECK(drift_eval(s, 1.0, a) == 0.0);
      CHECK(objective_per_sample(s, 1.0, a) == a);
      CHECK(drift_dr(s, 1.0, a).value == 0.0);
    }
}

TEST_CASE("ppo objective equals the clipped surrogate") {
  const double eps = 0.2;
  const DriftSpec ppo = PpoClipDrift{eps};
  CHECK(objective_per_sample(ppo, 1.5, 2.0) == doctest::Approx(2.4).epsilon(1e-12));
  // min/ReLU identity on a grid (full 300x300 grid lives in the acceptance suite)
  for (int ia = 0; ia < 101; ++ia) {
    const double a = grid_at(-3.0, 3.0, 101, ia);
    for (int ir = 0; ir < 101; ++ir) {
      const double r = grid_at(0.01, 3.0, 101, ir);
      const double clipped = std::min(std::max(r, 1.0 - eps), 1.0 + eps);
      const double want = std::min(r * a, clipped * a);
      CHECK(std::abs(objective_per_sample(ppo, r, a) - want) <= 1e-12);
    }
  }
}

TEST_CASE("dpo objective example") {
  const DriftSpec dpo = DpoDrift{2.0, 0.6};
  CHECK(objective_per_sample(dpo, 2.0, 4.0) ==
        doctest::Approx(8.0 - (4.0 - 2.0 * std::tanh(2.0))).epsilon(1e-14));
  CHECK(objective_per_sample(dpo, 2.0, 4.0) == doctest::Approx(5.92806).epsilon(1e-4));
}

TEST_CASE("dpo closed-form derivatives match the published formulas") {
  const DpoDrift d{2.0, 0.6};
  const DriftSpec spec = d;
  Rng rng(99);
  int active = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const double r = rng.uniform(0.1, 3.0);
    const double a = rng.uniform(-3.0, 3.0);
    if (a >= 0.0) {
      const double s = (r - 1.0) * a;
      const double pre = s - d.alpha * std::tanh(s / d.alpha);
      if (pre <= 1e-6) continue;
      const double cosh_term = std::cosh(s / d.alpha);
      const double want = a - a / (cosh_term * cosh_term);
      CHECK(std::abs(drift_dr(spec, r, a).value - want) <= 1e-10);
    } else {
      const double s = std::log(r) * a;
      const double pre = s - d.beta * std::tanh(s / d.beta);
      if (pre <= 1e-6) continue;
      const double cosh_term = std::cosh(s / d.beta);
      const double want = (a / r) * (1.0 - 1.0 / (cosh_term * cosh_term));
      CHECK(std::abs(drift_dr(spec, r, a).value - want) <= 1e-10);
    }
    ++active;
  }
  CHECK(active > 200);
}

TEST_CASE("derivatives agree with finite differences away from kinks") {
  const double h = 1e-5;
  const std::vector<DriftSpec> specs = {
      PpoClipDrift{0.2}, DpoDrift{2.0, 0.6},
      DriftSpec(random_learned(17, false, {32})),
      DriftSpec(random_learned(18, true, {32}))};
  Rng rng(123);
  for (const DriftSpec& spec : specs) {
    int compared = 0;
    for (int trial = 0; trial < 800 && compared < 300; ++trial) {
      const double r = rng.uniform(0.12, 3.0);
      const double a = rng.uniform(-3.0, 3.0);
      const double f0 = drift_eval(spec, r, a);
      const double fp = drift_eval(spec, r + h, a);
      const double fm = drift_eval(spec, r - h, a);
      const bool all_active = f0 > 1e-4 && fp > 1e-4 && fm > 1e-4;
      const bool all_zero = f0 == 0.0 && fp == 0.0 && fm == 0.0;
      if (!all_active && !all_zero) continue;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = drift_dr(spec, r, a).value;
      if (all_zero) {
        CHECK(an == 0.0);
      } else {
        const double scale = std::max({1.0, std::abs(an), std::abs(fd)});
        CHECK(std::abs(fd - an) <= 1e-5 * scale);
      }
      ++compared;
    }
    CHECK(compared >= 200);
  }
}

TEST_CASE("kink points are flagged with right-hand derivatives") {
  const DriftSpec ppo = PpoClipDrift{0.2};
  const DriftDeriv at_upper = drift_dr(ppo, 1.2, 1.5);
  CHECK(at_upper.at_kink);
  CHECK(at_upper.value == doctest::Approx(1.5));  // right side grows with slope A
  const DriftDeriv inside = drift_dr(ppo, 1.1, 1.5);
  CHECK_FALSE(inside.at_kink);
  CHECK(inside.value == 0.0);
  const DriftDeriv at_lower = drift_dr(ppo, 0.8, -2.0);
  CHECK(at_lower.at_kink);
  CHECK(at_lower.value == 0.0);  // right side enters the clip band
}

TEST_CASE("dpo zero regions are exact on the verification grid") {
  const DriftSpec dpo = DpoDrift{2.0, 0.6};
  for (int ia = 0; ia < 300; ++ia) {
    const double a = grid_at(-3.0, 3.0, 300, ia);
    for (int ir = 0; ir < 300; ++ir) {
      const double r = grid_at(0.1, 3.0, 300, ir);
      if (a >= 0.0 && (r - 1.0) * a <= 0.0) CHECK(drift_eval(dpo, r, a) == 0.0);
      if (a < 0.0 && std::log(r) * a <= 0.0) CHECK(drift_eval(dpo, r, a) == 0.0);
    }
  }
}

TEST_CASE("validity verification") {
  SUBCASE("ppo-clip is a valid drift") {
    const ValidityReport rep = verify_drift(PpoClipDrift{0.2});
    CHECK(rep.valid);
    CHECK(rep.min_value >= 0.0);
    CHECK(rep.max_abs_identity <= 1e-12);
    CHECK(rep.max_abs_identity_grad <= 1e-6);
  }
  SUBCASE("dpo is a valid drift") { CHECK(verify_drift(DpoDrift{2.0, 0.6}).valid); }
  SUBCASE("random learned drifts are valid by construction") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      CHECK(verify_drift(DriftSpec(random_learned(seed, false, {64}))).valid);
      CHECK(verify_drift(DriftSpec(random_learned(seed + 50, true, {64}))).valid);
    }
    // LPO-Zero style architecture
    CHECK(verify_drift(DriftSpec(random_learned(7, false, {256, 256}, Act::kRelu))).valid);
  }
  SUBCASE("a constant drift is rejected and pinpointed") {
    const ValidityReport rep = verify_drift(ConstantDrift{1.0});
    CHECK_FALSE(rep.valid);
    CHECK_FALSE(rep.zero_at_identity);
    CHECK(rep.max_abs_identity == doctest::Approx(1.0));
  }
  SUBCASE("malformed learned specs are fatal") {
    LearnedDrift d = random_learned(3, true);
    d.net.use_bias = true;
    CHECK_THROWS_AS(validate_drift_spec(DriftSpec(d)), std::invalid_argument);
    LearnedDrift d2 = random_learned(3, true);
    d2.feature_mask = 0;
    CHECK_THROWS_AS(validate_drift_spec(DriftSpec(d2)), std::invalid_argument);
    LearnedDrift d3 = random_learned(3, true);
    d3.xi = 0.0;
    CHECK_THROWS_AS(validate_drift_spec(DriftSpec(d3)), std::invalid_argument);
  }
}

TEST_CASE("drift is non-negative over the grid for random learned specs") {
  for (std::uint64_t seed = 100; seed < 106; ++seed) {
    const DriftSpec spec = random_learned(seed, seed % 2 == 0, {32});
    double min_f = 1e300;
    for (int ia = 0; ia < 60; ++ia)
      for (int ir = 0; ir < 60; ++ir)
        min_f = std::min(min_f, drift_eval(spec, grid_at(0.1, 3.0, 60, ir),
                                           grid_at(-3.0, 3.0, 60, ia)));
    CHECK(min_f >= 0.0);
  }
}

TEST_CASE("residual drift with zero weights stays within xi of ppo") {
  LearnedDrift d = random_learned(1, true);
  std::fill(d.weights.data.begin(), d.weights.data.end(), 0.0);
  const DriftSpec learned = d;
  const DriftSpec ppo = PpoClipDrift{d.clip_eps};
  for (int ia = 0; ia < 120; ++ia)
    for (int ir = 0; ir < 120; ++ir) {
      const double r = grid_at(0.1, 3.0, 120, ir);
      const double a = grid_at(-3.0, 3.0, 120, ia);
      CHECK(std::abs(drift_eval(learned, r, a) - drift_eval(ppo, r, a)) <= d.xi);
    }
}

TEST_CASE("heatmap reproduces the ppo clipping structure") {
  GridSpec grid;
  grid.r_steps = 64;
  grid.a_steps = 16;
  grid.a_min = 1.0;  // single positive-advantage band
  grid.a_max = 3.0;
  const HeatmapData h = objective_derivative_heatmap(PpoClipDrift{0.2}, grid);
  REQUIRE(h.cells.size() == 64u * 16u);
  // row with A = 1
  const double a = h.a_values[0];
  CHECK(a == doctest::Approx(1.0));
  for (int col = 0; col < 64; ++col) {
    const double r = h.r_values[col];
    const double cell = h.cells[col];
    if (r < 1.2 - 1e-9)
      CHECK(cell == doctest::Approx(a));
    else if (r > 1.2 + 1e-9)
      CHECK(cell == doctest::Approx(0.0));
  }
}

TEST_CASE("dpo heatmap shows rollback and cautious optimism") {
  const DriftSpec dpo = DpoDrift{2.0, 0.6};
  // rollback: negative advantage, ratio below 1 - eps: positive incentive
  const double rollback = -1.0 - drift_dr(dpo, 0.5, -1.0).value;
  CHECK(rollback > 0.0);
  // cautious optimism: positive advantage, incentive decays as r grows
  const double near = 1.0 - drift_dr(dpo, 1.3, 1.0).value;
  const double mid = 1.0 - drift_dr(dpo, 2.0, 1.0).value;
  const double far = 1.0 - drift_dr(dpo, 2.9, 1.0).value;
  CHECK(near > mid);
  CHECK(mid > far);
  CHECK(far > 0.0);
  CHECK(far < 0.4);
}

TEST_CASE("heatmap resolution precondition") {
  GridSpec grid;
  grid.r_steps = 8;
  CHECK_THROWS_AS((void)objective_derivative_heatmap(PpoClipDrift{0.2}, grid),
                  std::invalid_argument);
}

}  // TEST_SUITE
