#include "net.hpp"

#include <cmath>
#include <cstring>

#include "error.hpp"

namespace deid {

const char* act_name(Act a) {
  switch (a) {
    case Act::Tanh: return "tanh";
    case Act::Linear: return "linear";
    case Act::Sigmoid: return "sigmoid";
  }
  return "tanh";
}

Act act_from_name(const std::string& name) {
  if (name == "tanh") return Act::Tanh;
  if (name == "linear") return Act::Linear;
  if (name == "sigmoid") return Act::Sigmoid;
  throw Error(ErrorKind::Config, "unknown activation: " + name);
}

namespace {

double apply_act(Act a, double x) {
  switch (a) {
    case Act::Tanh: return std::tanh(x);
    case Act::Linear: return x;
    case Act::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

// Derivative expressed through the post-activation value.
double act_deriv(Act a, double post) {
  switch (a) {
    case Act::Tanh: return 1.0 - post * post;
    case Act::Linear: return 1.0;
    case Act::Sigmoid: return post * (1.0 - post);
  }
  return 1.0;
}

}  // namespace

size_t DenseNet::param_count() const {
  size_t n = 0;
  for (size_t i = 0; i < w.size(); ++i) n += w[i].a.size() + b[i].size();
  return n;
}

NetGrads::NetGrads(const DenseNet& net) {
  for (int i = 0; i < net.layer_count(); ++i) {
    w.emplace_back(net.w[i].rows, net.w[i].cols);
    b.emplace_back(net.b[i].size(), 0.0);
  }
}

void NetGrads::zero() {
  for (auto& m : w) std::fill(m.a.begin(), m.a.end(), 0.0);
  for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
}

void NetGrads::scale(double factor) {
  for (auto& m : w) {
    for (double& v : m.a) v *= factor;
  }
  for (auto& vb : b) {
    for (double& v : vb) v *= factor;
  }
}

DenseNet init_network(const std::vector<int>& layer_sizes, Act hidden_act,
                      Act final_act, uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw Error(ErrorKind::Config, "layer_sizes needs at least 2 entries");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw Error(ErrorKind::Config, "layer sizes must be positive");
  }
  DenseNet net;
  net.sizes = layer_sizes;
  net.hidden_act = hidden_act;
  net.final_act = final_act;
  Rng rng(seed);
  for (size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    int fan_in = layer_sizes[i];
    int fan_out = layer_sizes[i + 1];
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix m(fan_out, fan_in);
    for (double& v : m.a) v = rng.uniform(-limit, limit);
    net.w.push_back(std::move(m));
    net.b.emplace_back(fan_out, 0.0);
  }
  return net;
}

Vec forward(const DenseNet& net, const Vec& input, ForwardCache* cache) {
  if (static_cast<int>(input.size()) != net.input_dim()) {
    throw Error(ErrorKind::Dimension, "forward: input length " +
                                          std::to_string(input.size()) +
                                          " != expected " +
                                          std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->input = input;
    cache->pre.assign(net.layer_count(), {});
    cache->post.assign(net.layer_count(), {});
  }
  Vec x = input;
  for (int l = 0; l < net.layer_count(); ++l) {
    const Matrix& w = net.w[l];
    Vec pre(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      const double* row = &w.a[static_cast<size_t>(r) * w.cols];
      double s = net.b[l][r];
      for (int c = 0; c < w.cols; ++c) s += row[c] * x[c];
      pre[r] = s;
    }
    Act a = (l + 1 == net.layer_count()) ? net.final_act : net.hidden_act;
    Vec post(w.rows);
    for (int r = 0; r < w.rows; ++r) post[r] = apply_act(a, pre[r]);
    if (cache) {
      cache->pre[l] = pre;
      cache->post[l] = post;
    }
    x = std::move(post);
  }
  return x;
}

Vec backward(const DenseNet& net, const ForwardCache& cache,
             const Vec& output_gradient, NetGrads* grads) {
  if (static_cast<int>(output_gradient.size()) != net.output_dim()) {
    throw Error(ErrorKind::Dimension, "backward: gradient shape mismatch");
  }
  return backward_prefix(net, cache, net.layer_count(), output_gradient, grads);
}

Vec backward_prefix(const DenseNet& net, const ForwardCache& cache, int n_layers,
                    const Vec& dpost_top, NetGrads* grads) {
  int k = net.layer_count();
  if (n_layers < 1 || n_layers > k ||
      static_cast<int>(cache.post.size()) != k ||
      dpost_top.size() != cache.post[n_layers - 1].size()) {
    throw Error(ErrorKind::Dimension, "backward: cache/gradient shape mismatch");
  }
  Vec d = dpost_top;
  for (int l = n_layers - 1; l >= 0; --l) {
    Act a = (l + 1 == k) ? net.final_act : net.hidden_act;
    const Vec& post = cache.post[l];
    Vec dpre(post.size());
    for (size_t r = 0; r < post.size(); ++r) {
      dpre[r] = d[r] * act_deriv(a, post[r]);
    }
    const Vec& layer_in = (l == 0) ? cache.input : cache.post[l - 1];
    const Matrix& w = net.w[l];
    if (grads) {
      Matrix& gw = grads->w[l];
      for (int r = 0; r < w.rows; ++r) {
        double g = dpre[r];
        double* grow = &gw.a[static_cast<size_t>(r) * w.cols];
        for (int c = 0; c < w.cols; ++c) grow[c] += g * layer_in[c];
        grads->b[l][r] += g;
      }
    }
    Vec dx(w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
      const double* row = &w.a[static_cast<size_t>(r) * w.cols];
      double g = dpre[r];
      for (int c = 0; c < w.cols; ++c) dx[c] += row[c] * g;
    }
    d = std::move(dx);
  }
  return d;
}

Vec penultimate(const DenseNet& net, const Vec& input) {
  if (net.layer_count() < 2) {
    throw Error(ErrorKind::Config,
                "penultimate features need a network with >= 2 layers");
  }
  ForwardCache cache;
  forward(net, input, &cache);
  return cache.post[net.layer_count() - 2];
}

AdamState::AdamState(const DenseNet& net, double lr, double b1, double b2)
    : beta1(b1), beta2(b2), learning_rate(lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::Config, "learning rate must be positive");
  for (int i = 0; i < net.layer_count(); ++i) {
    m_w.emplace_back(net.w[i].rows, net.w[i].cols);
    v_w.emplace_back(net.w[i].rows, net.w[i].cols);
    m_b.emplace_back(net.b[i].size(), 0.0);
    v_b.emplace_back(net.b[i].size(), 0.0);
  }
}

namespace {

void adam_update(double* p, double* m, double* v, const double* g, size_t n,
                 const AdamState& st, double bc1, double bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
    v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    p[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon_fuzz);
  }
}

}  // namespace

void adam_step(AdamState& state, DenseNet& net, const NetGrads& grads) {
  for (int l = 0; l < net.layer_count(); ++l) {
    for (double g : grads.w[l].a) {
      if (!std::isfinite(g)) {
        throw Error(ErrorKind::Numeric,
                    "non-finite gradient in layer " + std::to_string(l));
      }
    }
    for (double g : grads.b[l]) {
      if (!std::isfinite(g)) {
        throw Error(ErrorKind::Numeric,
                    "non-finite gradient in layer " + std::to_string(l));
      }
    }
  }
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (int l = 0; l < net.layer_count(); ++l) {
    adam_update(net.w[l].a.data(), state.m_w[l].a.data(), state.v_w[l].a.data(),
                grads.w[l].a.data(), grads.w[l].a.size(), state, bc1, bc2);
    adam_update(net.b[l].data(), state.m_b[l].data(), state.v_b[l].data(),
                grads.b[l].data(), grads.b[l].size(), state, bc1, bc2);
  }
}

uint64_t param_hash(const DenseNet& net) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const double* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      uint64_t bits;
      std::memcpy(&bits, &data[i], sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  };
  for (size_t l = 0; l < net.w.size(); ++l) {
    mix(net.w[l].a.data(), net.w[l].a.size());
    mix(net.b[l].data(), net.b[l].size());
  }
  return h;
}

}  // namespace deid
