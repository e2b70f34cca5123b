#include "mirrorlab/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace mirrorlab {

namespace {

double activate(double z, Act a) {
  return a == Act::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// derivative from the post-activation value; for ReLU this is the
// subgradient 0 at exactly zero
double activate_grad(double h, Act a) {
  return a == Act::kTanh ? 1.0 - h * h : (h > 0.0 ? 1.0 : 0.0);
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_widths.size() < 2)
    throw std::invalid_argument("MlpSpec: need input width plus at least one hidden layer");
  for (int w : layer_widths)
    if (w < 1) throw std::invalid_argument("MlpSpec: layer widths must be >= 1");
  if (output_dim < 1) throw std::invalid_argument("MlpSpec: output_dim must be >= 1");
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < n_layers(); ++l) {
    n += static_cast<std::size_t>(layer_out(l)) * layer_in(l);
    if (use_bias) n += layer_out(l);
  }
  return n;
}

std::size_t MlpSpec::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(layer_out(l)) * layer_in(l);
    if (use_bias) off += layer_out(l);
  }
  return off;
}

std::size_t MlpSpec::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(layer_out(layer)) * layer_in(layer);
}

MlpWeights mlp_init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpWeights w;
  w.data.assign(spec.param_count(), 0.0);
  for (int l = 0; l < spec.n_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_in(l)));
    double* wl = w.data.data() + spec.weight_offset(l);
    const std::size_t nw = static_cast<std::size_t>(spec.layer_out(l)) * spec.layer_in(l);
    for (std::size_t i = 0; i < nw; ++i) wl[i] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return w;
}

MlpLayerView mlp_unflatten(const MlpSpec& spec, const MlpWeights& w) {
  if (w.data.size() != spec.param_count())
    throw std::invalid_argument("mlp_unflatten: weight vector length mismatch");
  MlpLayerView v;
  for (int l = 0; l < spec.n_layers(); ++l) {
    const double* base = w.data.data() + spec.weight_offset(l);
    v.weights.emplace_back(base, base + static_cast<std::size_t>(spec.layer_out(l)) * spec.layer_in(l));
    if (spec.use_bias) {
      const double* bb = w.data.data() + spec.bias_offset(l);
      v.biases.emplace_back(bb, bb + spec.layer_out(l));
    } else {
      v.biases.emplace_back();
    }
  }
  return v;
}

MlpWeights mlp_flatten(const MlpSpec& spec, const MlpLayerView& view) {
  MlpWeights w;
  w.data.reserve(spec.param_count());
  for (int l = 0; l < spec.n_layers(); ++l) {
    w.data.insert(w.data.end(), view.weights[l].begin(), view.weights[l].end());
    if (spec.use_bias)
      w.data.insert(w.data.end(), view.biases[l].begin(), view.biases[l].end());
  }
  if (w.data.size() != spec.param_count())
    throw std::invalid_argument("mlp_flatten: layer view inconsistent with spec");
  return w;
}

void mlp_forward_batch(const MlpSpec& spec, std::span<const double> w,
                       const double* x, int n, MlpBatchCache& cache) {
  if (w.size() != spec.param_count())
    throw std::invalid_argument("mlp_forward_batch: weight vector length mismatch");
  const int L = spec.n_layers();
  cache.n = n;
  cache.acts.resize(L + 1);
  cache.acts[0].assign(x, x + static_cast<std::size_t>(n) * spec.input_dim());
  for (int l = 0; l < L; ++l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double* wl = w.data() + spec.weight_offset(l);
    const double* bl = spec.use_bias ? w.data() + spec.bias_offset(l) : nullptr;
    const bool last = (l == L - 1);
    auto& src = cache.acts[l];
    auto& dst = cache.acts[l + 1];
    dst.assign(static_cast<std::size_t>(n) * out, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* xi = src.data() + static_cast<std::size_t>(i) * in;
      double* yi = dst.data() + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) {
        const double* row = wl + static_cast<std::size_t>(o) * in;
        double z = bl ? bl[o] : 0.0;
        for (int k = 0; k < in; ++k) z += row[k] * xi[k];
        yi[o] = last ? z : activate(z, spec.activation);
      }
    }
  }
}

const std::vector<double>& mlp_batch_output(const MlpSpec& spec,
                                            const MlpBatchCache& cache) {
  return cache.acts[spec.n_layers()];
}

void mlp_backward_batch(const MlpSpec& spec, std::span<const double> w,
                        const MlpBatchCache& cache, const double* dy,
                        double* dw, double* dx) {
  const int L = spec.n_layers();
  const int n = cache.n;
  std::vector<double> delta(dy, dy + static_cast<std::size_t>(n) * spec.output_dim());
  std::vector<double> delta_prev;
  for (int l = L - 1; l >= 0; --l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double* wl = w.data() + spec.weight_offset(l);
    double* dwl = dw + spec.weight_offset(l);
    double* dbl = spec.use_bias ? dw + spec.bias_offset(l) : nullptr;
    const auto& src = cache.acts[l];

    for (int i = 0; i < n; ++i) {
      const double* xi = src.data() + static_cast<std::size_t>(i) * in;
      const double* di = delta.data() + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) {
        const double g = di[o];
        if (g == 0.0) continue;
        double* row = dwl + static_cast<std::size_t>(o) * in;
        for (int k = 0; k < in; ++k) row[k] += g * xi[k];
        if (dbl) dbl[o] += g;
      }
    }

    const bool need_input_delta = (l > 0) || (dx != nullptr);
    if (!need_input_delta) break;
    delta_prev.assign(static_cast<std::size_t>(n) * in, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* di = delta.data() + static_cast<std::size_t>(i) * out;
      double* dpi = delta_prev.data() + static_cast<std::size_t>(i) * in;
      for (int o = 0; o < out; ++o) {
        const double g = di[o];
        if (g == 0.0) continue;
        const double* row = wl + static_cast<std::size_t>(o) * in;
        for (int k = 0; k < in; ++k) dpi[k] += g * row[k];
      }
    }
    if (l > 0) {
      // multiply by activation derivative of the layer below's output
      const auto& h = cache.acts[l];
      for (std::size_t i = 0; i < delta_prev.size(); ++i)
        delta_prev[i] *= activate_grad(h[i], spec.activation);
    }
    delta.swap(delta_prev);
  }
  if (dx != nullptr)
    std::memcpy(dx, delta.data(), delta.size() * sizeof(double));
}

std::vector<double> mlp_forward(const MlpSpec& spec, const MlpWeights& w,
                                std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  MlpBatchCache cache;
  mlp_forward_batch(spec, w, x.data(), 1, cache);
  return cache.acts[spec.n_layers()];
}

MlpGrad mlp_grad(const MlpSpec& spec, const MlpWeights& w,
                 std::span<const double> x, std::span<const double> upstream) {
  if (static_cast<int>(x.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_grad: input dimension mismatch");
  if (static_cast<int>(upstream.size()) != spec.output_dim)
    throw std::invalid_argument("mlp_grad: upstream dimension mismatch");
  MlpBatchCache cache;
  mlp_forward_batch(spec, w, x.data(), 1, cache);
  MlpGrad g;
  g.dw.assign(spec.param_count(), 0.0);
  g.dx.assign(spec.input_dim(), 0.0);
  mlp_backward_batch(spec, w, cache, upstream.data(), g.dw.data(), g.dx.data());
  return g;
}

AdamState adam_init(std::size_t n_params, double lr) {
  AdamState s;
  s.m.assign(n_params, 0.0);
  s.v.assign(n_params, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, std::vector<double>& w,
               std::span<const double> grad) {
  if (w.size() != state.m.size() || grad.size() != w.size())
    throw std::invalid_argument("adam_step: length mismatch");
  for (double g : grad)
    if (!std::isfinite(g))
      throw std::runtime_error("adam_step: non-finite gradient");
  state.step += 1;
  const double b1c = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2c = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / b1c;
    const double vhat = state.v[i] / b2c;
    w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace mirrorlab
