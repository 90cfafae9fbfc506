#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"
#include "vecmat.hpp"

namespace deid {

enum class Act { Tanh, Linear, Sigmoid };

const char* act_name(Act a);
Act act_from_name(const std::string& name);

// Fully-connected network. Layer i maps sizes[i] -> sizes[i+1] through
// weights w[i] (sizes[i+1] x sizes[i]) and bias b[i], followed by the hidden
// activation (final layer uses final_act).
struct DenseNet {
  std::vector<int> sizes;
  std::vector<Matrix> w;
  std::vector<Vec> b;
  Act hidden_act = Act::Tanh;
  Act final_act = Act::Tanh;

  int layer_count() const { return static_cast<int>(w.size()); }
  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  size_t param_count() const;
};

struct ForwardCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post-activation per layer; post.back() is the output
};

// Gradient accumulator with the exact shapes of a DenseNet's parameters.
struct NetGrads {
  std::vector<Matrix> w;
  std::vector<Vec> b;

  NetGrads() = default;
  explicit NetGrads(const DenseNet& net);
  void zero();
  void scale(double factor);
};

DenseNet init_network(const std::vector<int>& layer_sizes, Act hidden_act,
                      Act final_act, uint64_t seed);

// Forward pass; fills `cache` (when non-null) with everything backward needs.
Vec forward(const DenseNet& net, const Vec& input, ForwardCache* cache = nullptr);

// Exact reverse-mode pass. Accumulates parameter gradients into `grads`
// (skipped when null, e.g. for frozen networks) and returns the input
// gradient.
Vec backward(const DenseNet& net, const ForwardCache& cache,
             const Vec& output_gradient, NetGrads* grads);

// Reverse pass through the first n_layers layers only, seeded with a
// gradient on post-activation n_layers-1. Used for penultimate-feature
// losses.
Vec backward_prefix(const DenseNet& net, const ForwardCache& cache, int n_layers,
                    const Vec& dpost_top, NetGrads* grads);

// Activations entering the final layer. Requires >= 2 layers.
Vec penultimate(const DenseNet& net, const Vec& input);

struct AdamState {
  long long step_count = 0;
  double beta1 = 0.0;      // paper setting
  double beta2 = 0.999;
  double learning_rate = 1e-4;
  double epsilon_fuzz = 1e-8;
  std::vector<Matrix> m_w, v_w;
  std::vector<Vec> m_b, v_b;

  AdamState(const DenseNet& net, double lr, double b1 = 0.0, double b2 = 0.999);
};

// Bias-corrected Adam update in place. Throws a numeric error naming the
// first layer whose gradient is non-finite.
void adam_step(AdamState& state, DenseNet& net, const NetGrads& grads);

// FNV-1a over the raw parameter bytes; used for frozen-model invariance
// checks and protocol (train/eval overlap) detection.
uint64_t param_hash(const DenseNet& net);

}  // namespace deid
