#include <doctest.h>

#include <cmath>
#include <vector>

#include "mirrorlab/nn.hpp"

using namespace mirrorlab;

namespace {

// independent layer-by-layer oracle built on the unflattened view
std::vector<double> naive_forward(const MlpSpec& spec, const MlpWeights& w,
                                  std::vector<double> x) {
  const MlpLayerView view = mlp_unflatten(spec, w);
  for (int l = 0; l < spec.n_layers(); ++l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    std::vector<double> y(out, 0.0);
    for (int o = 0; o < out; ++o) {
      for (int k = 0; k < in; ++k) y[o] += view.weights[l][o * in + k] * x[k];
      if (spec.use_bias) y[o] += view.biases[l][o];
      if (l + 1 < spec.n_layers())
        y[o] = spec.activation == Act::kTanh ? std::tanh(y[o])
                                             : std::max(y[o], 0.0);
    }
    x = std::move(y);
  }
  return x;
}

MlpSpec random_spec(Rng& rng, bool use_bias, Act act) {
  MlpSpec spec;
  const int n_hidden = 1 + rng.uniform_int(2);
  spec.layer_widths.push_back(1 + rng.uniform_int(5));
  for (int i = 0; i < n_hidden; ++i)
    spec.layer_widths.push_back(1 + rng.uniform_int(6));
  spec.output_dim = 1 + rng.uniform_int(3);
  spec.activation = act;
  spec.use_bias = use_bias;
  return spec;
}

double loss_of(const MlpSpec& spec, const MlpWeights& w,
               const std::vector<double>& x, const std::vector<double>& up) {
  const std::vector<double> y = mlp_forward(spec, w, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += up[i] * y[i];
  return s;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("bias-free net maps zero input to zero output") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MlpSpec spec = random_spec(rng, false, trial % 2 ? Act::kTanh : Act::kRelu);
    const MlpWeights w = mlp_init(spec, rng);
    const std::vector<double> zero(spec.input_dim(), 0.0);
    for (double v : mlp_forward(spec, w, zero)) CHECK(v == 0.0);
  }
}

TEST_CASE("identity-wired single hidden layer gives tanh(x)") {
  MlpSpec spec;
  spec.layer_widths = {3, 3};
  spec.output_dim = 3;
  spec.activation = Act::kTanh;
  spec.use_bias = false;
  MlpWeights w;
  w.data.assign(spec.param_count(), 0.0);
  for (int i = 0; i < 3; ++i) {
    w.data[spec.weight_offset(0) + i * 3 + i] = 1.0;
    w.data[spec.weight_offset(1) + i * 3 + i] = 1.0;
  }
  const std::vector<double> x = {0.3, -1.2, 2.0};
  const std::vector<double> y = mlp_forward(spec, w, x);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(std::tanh(x[i])).epsilon(1e-15));
}

TEST_CASE("forward matches the independent layer-by-layer oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const MlpSpec spec =
        random_spec(rng, trial % 2 == 0, trial % 3 ? Act::kTanh : Act::kRelu);
    const MlpWeights w = mlp_init(spec, rng);
    std::vector<double> x(spec.input_dim());
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    const std::vector<double> got = mlp_forward(spec, w, x);
    const std::vector<double> want = naive_forward(spec, w, x);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("head-layer gradient is the outer product upstream x hidden") {
  // relu trunk with identity weights and positive input keeps h == x
  MlpSpec spec;
  spec.layer_widths = {3, 3};
  spec.output_dim = 2;
  spec.activation = Act::kRelu;
  spec.use_bias = false;
  MlpWeights w;
  w.data.assign(spec.param_count(), 0.0);
  for (int i = 0; i < 3; ++i) w.data[spec.weight_offset(0) + i * 3 + i] = 1.0;
  for (std::size_t i = spec.weight_offset(1); i < spec.param_count(); ++i)
    w.data[i] = 0.25;
  const std::vector<double> x = {0.5, 1.5, 2.0};
  const std::vector<double> up = {2.0, -3.0};
  const MlpGrad g = mlp_grad(spec, w, x, up);
  for (int o = 0; o < 2; ++o)
    for (int k = 0; k < 3; ++k)
      CHECK(g.dw[spec.weight_offset(1) + o * 3 + k] ==
            doctest::Approx(up[o] * x[k]).epsilon(1e-15));
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(7);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const MlpSpec spec =
        random_spec(rng, trial % 2 == 1, trial % 4 ? Act::kTanh : Act::kRelu);
    MlpWeights w = mlp_init(spec, rng);
    std::vector<double> x(spec.input_dim());
    for (double& v : x) v = rng.uniform(-1.5, 1.5);
    std::vector<double> up(spec.output_dim);
    for (double& v : up) v = rng.uniform(-1.0, 1.0);
    const MlpGrad g = mlp_grad(spec, w, x, up);

    double max_abs = 1.0;
    for (double v : g.dw) max_abs = std::max(max_abs, std::abs(v));
    for (double v : g.dx) max_abs = std::max(max_abs, std::abs(v));

    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double orig = w.data[i];
      w.data[i] = orig + h;
      const double lp = loss_of(spec, w, x, up);
      w.data[i] = orig - h;
      const double lm = loss_of(spec, w, x, up);
      w.data[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      CHECK(std::abs(fd - g.dw[i]) <= 1e-4 * max_abs);
      ++checked;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd =
          (loss_of(spec, w, xp, up) - loss_of(spec, w, xm, up)) / (2.0 * h);
      CHECK(std::abs(fd - g.dx[i]) <= 1e-4 * max_abs);
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("flatten/unflatten round-trips exactly") {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const MlpSpec spec = random_spec(rng, trial % 2 == 0, Act::kTanh);
    const MlpWeights w = mlp_init(spec, rng);
    const MlpWeights back = mlp_flatten(spec, mlp_unflatten(spec, w));
    REQUIRE(back.data.size() == w.data.size());
    for (std::size_t i = 0; i < w.data.size(); ++i)
      CHECK(back.data[i] == w.data[i]);
  }
}

TEST_CASE("dimension mismatches are fatal") {
  MlpSpec spec;
  spec.layer_widths = {4, 8};
  spec.output_dim = 2;
  Rng rng(3);
  const MlpWeights w = mlp_init(spec, rng);
  const std::vector<double> bad_x(3, 0.0);
  CHECK_THROWS_AS((void)mlp_forward(spec, w, bad_x), std::invalid_argument);
  const std::vector<double> x(4, 0.0);
  const std::vector<double> bad_up(3, 0.0);
  CHECK_THROWS_AS((void)mlp_grad(spec, w, x, bad_up), std::invalid_argument);
  MlpWeights short_w = w;
  short_w.data.pop_back();
  CHECK_THROWS_AS((void)mlp_forward(spec, short_w, x), std::invalid_argument);
}

TEST_CASE("adam leaves weights untouched on zero gradient") {
  AdamState s = adam_init(3, 1e-3);
  std::vector<double> w = {1.0, -2.0, 0.5};
  const std::vector<double> w0 = w;
  const std::vector<double> g(3, 0.0);
  adam_step(s, w, g);
  adam_step(s, w, g);
  CHECK(w == w0);
  CHECK(s.step == 2);
}

TEST_CASE("adam matches the hand recurrence on a scalar") {
  AdamState s = adam_init(1, 3e-4);
  std::vector<double> w = {1.0};
  // reference recurrence
  double m = 0.0, v = 0.0, ref = 1.0;
  for (int t = 1; t <= 10; ++t) {
    const std::vector<double> g = {1.0};
    adam_step(s, w, g);
    m = s.beta1 * m + (1.0 - s.beta1) * 1.0;
    v = s.beta2 * v + (1.0 - s.beta2) * 1.0;
    const double mhat = m / (1.0 - std::pow(s.beta1, t));
    const double vhat = v / (1.0 - std::pow(s.beta2, t));
    ref -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    CHECK(w[0] == doctest::Approx(ref).epsilon(1e-15));
  }
  // first step moves by -lr / (1 + eps), i.e. lr up to the tiny bias term
  AdamState s1 = adam_init(1, 3e-4);
  std::vector<double> w1 = {0.0};
  adam_step(s1, w1, std::vector<double>{1.0});
  CHECK(w1[0] == doctest::Approx(-s1.lr / (1.0 + s1.eps)).epsilon(1e-12));
}

TEST_CASE("adam is deterministic and rejects non-finite gradients") {
  AdamState sa = adam_init(2, 1e-3), sb = adam_init(2, 1e-3);
  std::vector<double> wa = {0.1, 0.2}, wb = {0.1, 0.2};
  const std::vector<double> g = {0.3, -0.7};
  adam_step(sa, wa, g);
  adam_step(sb, wb, g);
  CHECK(wa == wb);
  CHECK(sa.m == sb.m);
  std::vector<double> bad = {1.0, std::nan("")};
  CHECK_THROWS_AS(adam_step(sa, wa, bad), std::runtime_error);
}

}  // TEST_SUITE
