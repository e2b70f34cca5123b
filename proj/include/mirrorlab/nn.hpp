#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mirrorlab/rng.hpp"

namespace mirrorlab {

enum class Act { kTanh, kRelu };

// Dense MLP: layer_widths = [input, hidden...], then a linear head of
// output_dim units. Hidden layers use `activation`; the head is linear.
struct MlpSpec {
  std::vector<int> layer_widths;
  int output_dim = 1;
  Act activation = Act::kTanh;
  bool use_bias = true;

  int input_dim() const { return layer_widths.front(); }
  // number of linear maps, including the head
  int n_layers() const { return static_cast<int>(layer_widths.size()); }
  int layer_in(int l) const { return layer_widths[l]; }
  int layer_out(int l) const {
    return l + 1 < static_cast<int>(layer_widths.size())
               ? layer_widths[l + 1]
               : output_dim;
  }
  std::size_t param_count() const;
  std::size_t weight_offset(int layer) const;  // start of layer's W block
  std::size_t bias_offset(int layer) const;    // start of layer's b block
  void validate() const;  // throws std::invalid_argument
};

struct MlpWeights {
  std::vector<double> data;
};

MlpWeights mlp_init(const MlpSpec& spec, Rng& rng);

// Per-layer weight matrices/bias vectors unpacked from the flat vector.
// flatten(unflatten(w)) == w exactly; layout is documented in the README.
struct MlpLayerView {
  std::vector<std::vector<double>> weights;  // row-major out x in
  std::vector<std::vector<double>> biases;   // empty vectors when !use_bias
};
MlpLayerView mlp_unflatten(const MlpSpec& spec, const MlpWeights& w);
MlpWeights mlp_flatten(const MlpSpec& spec, const MlpLayerView& view);

std::vector<double> mlp_forward(const MlpSpec& spec, const MlpWeights& w,
                                std::span<const double> x);

struct MlpGrad {
  std::vector<double> dw;  // gradient of <upstream, output> w.r.t. weights
  std::vector<double> dx;  // ... and w.r.t. the input
};
MlpGrad mlp_grad(const MlpSpec& spec, const MlpWeights& w,
                 std::span<const double> x, std::span<const double> upstream);

// Batched versions over row-major [n x dim] buffers. Weights may be any
// span (e.g. a slice of a larger parameter vector). The cache holds the
// layer activations needed for the backward pass.
struct MlpBatchCache {
  std::vector<std::vector<double>> acts;  // acts[0] = input copy
  int n = 0;
};
void mlp_forward_batch(const MlpSpec& spec, std::span<const double> w,
                       const double* x, int n, MlpBatchCache& cache);
inline void mlp_forward_batch(const MlpSpec& spec, const MlpWeights& w,
                              const double* x, int n, MlpBatchCache& cache) {
  mlp_forward_batch(spec, std::span<const double>(w.data), x, n, cache);
}
const std::vector<double>& mlp_batch_output(const MlpSpec& spec,
                                            const MlpBatchCache& cache);
// Accumulates into dw (caller zero-initialises or deliberately reuses).
// dx may be null.
void mlp_backward_batch(const MlpSpec& spec, std::span<const double> w,
                        const MlpBatchCache& cache, const double* dy,
                        double* dw, double* dx);
inline void mlp_backward_batch(const MlpSpec& spec, const MlpWeights& w,
                               const MlpBatchCache& cache, const double* dy,
                               double* dw, double* dx) {
  mlp_backward_batch(spec, std::span<const double>(w.data), cache, dy, dw, dx);
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(std::size_t n_params, double lr);

// Standard Adam with bias correction. Throws std::runtime_error on a
// non-finite gradient so the trainer can abort the update epoch.
void adam_step(AdamState& state, std::vector<double>& w,
               std::span<const double> grad);

}  // namespace mirrorlab
