#include <algorithm>
#include <cmath>

#include "core/net.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace deid;

TEST_SUITE("nn") {

TEST_CASE("init is deterministic per seed") {
  DenseNet a = init_network({2, 2}, Act::Tanh, Act::Tanh, 7);
  DenseNet b = init_network({2, 2}, Act::Tanh, Act::Tanh, 7);
  CHECK(a.w[0].a == b.w[0].a);
  CHECK(a.b[0] == b.b[0]);
  DenseNet c = init_network({2, 2}, Act::Tanh, Act::Tanh, 8);
  CHECK(a.w[0].a != c.w[0].a);
}

TEST_CASE("init produces the right shapes and zero biases") {
  DenseNet net = init_network({3, 5, 4}, Act::Tanh, Act::Linear, 1);
  REQUIRE(net.layer_count() == 2);
  CHECK(net.w[0].rows == 5);
  CHECK(net.w[0].cols == 3);
  CHECK(net.w[1].rows == 4);
  CHECK(net.w[1].cols == 5);
  CHECK(net.b[0].size() == 5);
  CHECK(net.b[1].size() == 4);
  for (double v : net.b[0]) CHECK(v == 0.0);
  double limit = std::sqrt(6.0 / (3 + 5));
  for (double v : net.w[0].a) CHECK(std::abs(v) <= limit);
}

TEST_CASE("degenerate layer lists are configuration errors") {
  CHECK_THROWS_AS(init_network({2}, Act::Tanh, Act::Tanh, 1), Error);
  CHECK_THROWS_AS(init_network({}, Act::Tanh, Act::Tanh, 1), Error);
  CHECK_THROWS_AS(init_network({2, 0}, Act::Tanh, Act::Tanh, 1), Error);
}

TEST_CASE("zero network maps everything to zero under tanh") {
  DenseNet net = init_network({3, 4, 2}, Act::Tanh, Act::Tanh, 1);
  for (auto& m : net.w) std::fill(m.a.begin(), m.a.end(), 0.0);
  Vec out = forward(net, {0.3, -0.7, 2.0});
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("single linear layer is a plain matrix product") {
  DenseNet net = init_network({2, 2}, Act::Tanh, Act::Linear, 1);
  net.w[0].at(0, 0) = 2.0;
  net.w[0].at(0, 1) = 0.0;
  net.w[0].at(1, 0) = 0.0;
  net.w[0].at(1, 1) = 3.0;
  Vec out = forward(net, {1.0, 1.0});
  CHECK(out[0] == doctest::Approx(2.0));
  CHECK(out[1] == doctest::Approx(3.0));
}

TEST_CASE("forward is pure") {
  DenseNet net = init_network({4, 6, 3}, Act::Tanh, Act::Sigmoid, 11);
  Vec x = {0.1, -0.2, 0.3, 0.9};
  CHECK(forward(net, x) == forward(net, x));
}

TEST_CASE("input length mismatch is a dimension error") {
  DenseNet net = init_network({4, 3}, Act::Tanh, Act::Tanh, 1);
  CHECK_THROWS_AS(forward(net, {1.0, 2.0}), Error);
}

TEST_CASE("zero output gradient yields zero parameter gradients") {
  DenseNet net = init_network({3, 5, 2}, Act::Tanh, Act::Tanh, 5);
  ForwardCache cache;
  forward(net, {0.5, -0.5, 0.25}, &cache);
  NetGrads grads(net);
  Vec dx = backward(net, cache, {0.0, 0.0}, &grads);
  for (double v : fd::grad_values(grads)) CHECK(v == 0.0);
  for (double v : dx) CHECK(v == 0.0);
}

TEST_CASE("one-layer linear gradient is the input outer basis row") {
  DenseNet net = init_network({3, 2}, Act::Tanh, Act::Linear, 2);
  Vec x = {0.4, -1.5, 2.5};
  ForwardCache cache;
  forward(net, x, &cache);
  NetGrads grads(net);
  backward(net, cache, {1.0, 0.0}, &grads);  // loss = output[0]
  for (int c = 0; c < 3; ++c) {
    CHECK(grads.w[0].at(0, c) == doctest::Approx(x[c]));
    CHECK(grads.w[0].at(1, c) == 0.0);
  }
  CHECK(grads.b[0][0] == doctest::Approx(1.0));
  CHECK(grads.b[0][1] == 0.0);
}

TEST_CASE("gradients match central finite differences on a random net") {
  DenseNet net = init_network({4, 8, 3}, Act::Tanh, Act::Tanh, 42);
  Rng rng(17);
  Vec x(4), target(3);
  for (double& v : x) v = rng.normal();
  for (double& v : target) v = rng.normal();

  auto eval = [&]() {
    Vec out = forward(net, x);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) {
      double d = out[i] - target[i];
      s += d * d;
    }
    return s;
  };

  ForwardCache cache;
  Vec out = forward(net, x, &cache);
  Vec dout(out.size());
  for (size_t i = 0; i < out.size(); ++i) dout[i] = 2.0 * (out[i] - target[i]);
  NetGrads grads(net);
  backward(net, cache, dout, &grads);

  std::vector<double> analytic = fd::grad_values(grads);
  std::vector<double*> ptrs = fd::param_ptrs(net);
  REQUIRE(analytic.size() == ptrs.size());
  double worst = 0.0;
  for (size_t i = 0; i < ptrs.size(); ++i) {
    double fd_grad = fd::central_difference(eval, ptrs[i]);
    worst = std::max(worst, fd::rel_error(analytic[i], fd_grad));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("input gradients match finite differences") {
  DenseNet net = init_network({5, 7, 4}, Act::Tanh, Act::Sigmoid, 9);
  Rng rng(3);
  Vec x(5);
  for (double& v : x) v = rng.normal();
  auto eval = [&]() {
    Vec out = forward(net, x);
    double s = 0.0;
    for (double v : out) s += v;
    return s;
  };
  ForwardCache cache;
  Vec out = forward(net, x, &cache);
  Vec dx = backward(net, cache, Vec(out.size(), 1.0), nullptr);
  for (size_t i = 0; i < x.size(); ++i) {
    double fd_grad = fd::central_difference(eval, &x[i]);
    CHECK(fd::rel_error(dx[i], fd_grad) < 1e-4);
  }
}

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
  DenseNet net = init_network({2, 3, 1}, Act::Tanh, Act::Tanh, 4);
  DenseNet before = net;
  AdamState state(net, 1e-2);
  NetGrads grads(net);
  adam_step(state, net, grads);
  CHECK(state.step_count == 1);
  for (int l = 0; l < net.layer_count(); ++l) {
    CHECK(net.w[l].a == before.w[l].a);
    CHECK(net.b[l] == before.b[l]);
  }
}

TEST_CASE("first adam update magnitude is learning_rate over (1 + fuzz)") {
  // Scalar parameter, g = 1, beta1 = 0: m = 1, vhat = 1, so the step is
  // lr / (1 + eps).
  DenseNet net = init_network({1, 1}, Act::Tanh, Act::Linear, 1);
  net.w[0].at(0, 0) = 0.5;
  net.b[0][0] = 0.25;
  AdamState state(net, 1e-4, 0.0, 0.999);
  NetGrads grads(net);
  grads.w[0].at(0, 0) = 1.0;
  grads.b[0][0] = 1.0;
  adam_step(state, net, grads);
  double expected_step = 1e-4 / (1.0 + 1e-8);
  CHECK(net.w[0].at(0, 0) == doctest::Approx(0.5 - expected_step).epsilon(1e-12));
  CHECK(net.b[0][0] == doctest::Approx(0.25 - expected_step).epsilon(1e-12));
}

TEST_CASE("non-finite gradients raise a numeric error naming the layer") {
  DenseNet net = init_network({2, 2, 2}, Act::Tanh, Act::Tanh, 1);
  AdamState state(net, 1e-3);
  NetGrads grads(net);
  grads.w[1].at(0, 0) = std::nan("");
  try {
    adam_step(state, net, grads);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("training trajectories are deterministic") {
  auto run = []() {
    DenseNet net = init_network({3, 5, 2}, Act::Tanh, Act::Tanh, 21);
    AdamState state(net, 1e-3);
    NetGrads grads(net);
    Rng rng(77);
    for (int step = 0; step < 25; ++step) {
      Vec x(3), target(2);
      for (double& v : x) v = rng.normal();
      for (double& v : target) v = rng.normal();
      ForwardCache cache;
      Vec out = forward(net, x, &cache);
      Vec dout(out.size());
      for (size_t i = 0; i < out.size(); ++i) dout[i] = 2.0 * (out[i] - target[i]);
      grads.zero();
      backward(net, cache, dout, &grads);
      adam_step(state, net, grads);
    }
    return param_hash(net);
  };
  CHECK(run() == run());
}

TEST_CASE("penultimate returns activations entering the final layer") {
  DenseNet net = init_network({4, 6, 2}, Act::Tanh, Act::Tanh, 2);
  Vec x = {0.1, 0.2, 0.3, 0.4};
  Vec pen = penultimate(net, x);
  CHECK(pen.size() == 6);
  ForwardCache cache;
  forward(net, x, &cache);
  CHECK(pen == cache.post[0]);
  DenseNet single = init_network({4, 2}, Act::Tanh, Act::Tanh, 2);
  CHECK_THROWS_AS(penultimate(single, x), Error);
}

}  // TEST_SUITE
