#include <cmath>

#include "core/obfuscator.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace deid;

namespace {

Vec random_unit_vec(Rng& rng, int dim) {
  Vec v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

}  // namespace

TEST_SUITE("obfuscator") {

TEST_CASE("psi_opp negates and is involutive") {
  Vec z = {0.6, -0.8};
  Vec out = psi_opp(z);
  CHECK(out[0] == doctest::Approx(-0.6));
  CHECK(out[1] == doctest::Approx(0.8));
  CHECK(psi_opp(psi_opp(z)) == z);
  CHECK(loss_deid(z, psi_opp(z)) == doctest::Approx(0.0));
}

TEST_CASE("loss_deid closed-form anchors") {
  Vec z = {1.0, 0.0};
  CHECK(loss_deid(z, z) == doctest::Approx(2.0));
  CHECK(loss_deid(z, {-1.0, 0.0}) == doctest::Approx(0.0));
  CHECK(loss_deid(z, {0.0, 1.0}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(loss_deid(z, {0.0, 0.0}), Error);
}

TEST_CASE("loss_deid stays within [0, 2] on random unit pairs") {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    Vec a = random_unit_vec(rng, 12);
    Vec b = random_unit_vec(rng, 12);
    double l = loss_deid(a, b);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
}

TEST_CASE("loss_kld closed-form anchors and nonnegativity") {
  CHECK(loss_kld({0.0}, {0.0}) == doctest::Approx(0.0));
  CHECK(loss_kld({1.0}, {0.0}) == doctest::Approx(0.5));
  CHECK(loss_kld({0.0}, {std::log(4.0)}) ==
        doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    Vec mu = {rng.normal(), rng.normal()};
    Vec lv = {rng.normal(), rng.normal()};
    CHECK(loss_kld(mu, lv) >= 0.0);
  }
}

TEST_CASE("the opposite point maximizes L2 distance on the sphere") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Vec z = random_unit_vec(rng, 16);
    double opp_dist = l2_distance(z, psi_opp(z));
    for (int c = 0; c < 100; ++c) {
      Vec candidate = random_unit_vec(rng, 16);
      CHECK(l2_distance(z, candidate) <= opp_dist + 1e-12);
    }
  }
}

TEST_CASE("mlp with zero beta is bit-identical to deterministic mode") {
  ObfuscatorSpec spec = make_mlp(8, {16}, 0.0, 3);
  Rng rng(4);
  Vec z = random_unit_vec(rng, 8);
  Rng noise_rng(9);
  Vec noised = psi_mlp(spec, z, ObfMode::TrainNoised, &noise_rng);
  Vec det = psi_mlp(spec, z, ObfMode::Deterministic, nullptr);
  CHECK(noised == det);
}

TEST_CASE("mlp outputs are unit norm and reproducible under a seed") {
  ObfuscatorSpec spec = make_mlp(8, {16}, 0.5, 3);
  Rng rng(4);
  Vec z = random_unit_vec(rng, 8);
  Rng n1(77), n2(77);
  Vec a = psi_mlp(spec, z, ObfMode::TrainNoised, &n1);
  Vec b = psi_mlp(spec, z, ObfMode::TrainNoised, &n2);
  CHECK(a == b);
  CHECK(norm2(a) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("mlp spec guards variant and dimension") {
  ObfuscatorSpec opp = make_opp(8);
  Rng rng(4);
  Vec z = random_unit_vec(rng, 8);
  CHECK_THROWS_AS(psi_mlp(opp, z, ObfMode::Deterministic, nullptr), Error);
  ObfuscatorSpec spec = make_mlp(8, {16}, 0.0, 3);
  CHECK_THROWS_AS(obf_apply(spec, {1.0, 0.0}, ObfMode::Deterministic, nullptr),
                  Error);
}

TEST_CASE("zero-weight encoder gives the standard normal prior") {
  ObfuscatorSpec spec = make_ved(8, {12}, 4, {12}, 1.0, 5);
  for (auto& m : spec.ved_encoder.w) std::fill(m.a.begin(), m.a.end(), 0.0);
  Rng rng(4);
  Vec z = random_unit_vec(rng, 8);
  auto [mu, logvar] = ved_encode(spec, z);
  REQUIRE(mu.size() == 4);
  REQUIRE(logvar.size() == 4);
  for (double v : mu) CHECK(v == 0.0);
  for (double v : logvar) CHECK(v == 0.0);
  auto [mu2, logvar2] = ved_encode(spec, z);
  CHECK(mu == mu2);
  CHECK(logvar == logvar2);
}

TEST_CASE("ved inference with zero alpha returns mu exactly") {
  Vec mu = {0.3, -0.4};
  Vec logvar = {0.2, -0.1};
  Rng rng(6);
  Vec v = ved_sample(mu, logvar, VedSampleMode::InferLaplace, 0.0, &rng);
  CHECK(v == mu);
}

TEST_CASE("collapsed variance pins the sample to mu in both modes") {
  Vec mu = {0.3, -0.4};
  Vec logvar = {-10.0, -10.0};  // clamp floor, sigma = e^-5
  Rng rng(6);
  Vec train = ved_sample(mu, logvar, VedSampleMode::TrainGaussian, 0.0, &rng);
  Vec infer = ved_sample(mu, logvar, VedSampleMode::InferLaplace, 2.0, &rng);
  for (size_t i = 0; i < mu.size(); ++i) {
    CHECK(std::abs(train[i] - mu[i]) < 0.05);
    CHECK(std::abs(infer[i] - mu[i]) < 0.05);
  }
}

TEST_CASE("ved training samples match the reparameterized moments") {
  Vec mu = {0.0};
  Vec logvar = {0.0};
  Rng rng(2024);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = ved_sample(mu, logvar, VedSampleMode::TrainGaussian, 0.0, &rng)[0];
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(sum2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("ved inference with zero alpha equals the deterministic core") {
  ObfuscatorSpec spec = make_ved(8, {12}, 4, {12}, 0.0, 5);
  Rng rng(4);
  Vec z = random_unit_vec(rng, 8);
  Rng noise_rng(9);
  Vec infer = obf_apply(spec, z, ObfMode::InferNoised, &noise_rng);
  Vec det = obf_apply(spec, z, ObfMode::Deterministic, nullptr);
  CHECK(infer == det);
}

TEST_CASE("ved decode is a normalized pure map of the right shape") {
  ObfuscatorSpec spec = make_ved(8, {12}, 4, {12}, 1.0, 5);
  Vec v = {0.1, -0.2, 0.3, 0.4};
  Vec out = ved_decode(spec, v);
  CHECK(out.size() == 8);
  CHECK(norm2(out) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out == ved_decode(spec, v));
}

TEST_CASE("sensitivity of psi_opp on the 2-sphere approaches 2*sqrt(2)") {
  std::vector<Vec> grid;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    double angle = 2.0 * M_PI * i / n;
    grid.push_back({std::cos(angle), std::sin(angle)});
  }
  auto psi = [](const Vec& z) { return psi_opp(z); };
  SensitivityEstimate est = estimate_sensitivity(psi, grid, 20000, 7);
  CHECK(est.delta == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-4));
  // The maximizing pair is antipodal and diagonal.
  CHECK(std::abs(est.arg_a[0]) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-2));
}

TEST_CASE("constant maps have zero sensitivity") {
  std::vector<Vec> vecs;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) vecs.push_back(random_unit_vec(rng, 4));
  auto psi = [](const Vec&) { return Vec{1.0, 0.0, 0.0, 0.0}; };
  CHECK(estimate_sensitivity(psi, vecs, 500, 7).delta == 0.0);
  CHECK_THROWS_AS(estimate_sensitivity(psi, vecs, 0, 7), Error);
}

TEST_CASE("budget arithmetic and reciprocity") {
  PrivacyBudget b = budget(4.0, 2.0);
  CHECK(b.noise_scale == doctest::Approx(2.0));
  CHECK(scale_to_epsilon(b.delta_psi, b.noise_scale) == doctest::Approx(2.0));
  // The formal definition applied to the reported sensitivity 33.92 at
  // noise scale 2 gives epsilon 16.96.
  CHECK(scale_to_epsilon(33.92, 2.0) == doctest::Approx(16.96));
  CHECK_THROWS_AS(budget(0.0, 1.0), Error);
  CHECK_THROWS_AS(budget(1.0, -1.0), Error);
  CHECK_THROWS_AS(scale_to_epsilon(1.0, 0.0), Error);
}

TEST_CASE("mlp training gradients match finite differences") {
  ObfuscatorSpec spec = make_mlp(6, {8}, 0.4, 11);
  Rng rng(2);
  Vec z = random_unit_vec(rng, 6);
  Rng noise_rng(5);
  Vec noise = obf_sample_noise(spec, ObfMode::TrainNoised, &noise_rng);
  const double lambda_deid = 30.0;

  auto eval = [&]() {
    Vec zt = obf_apply_with_noise(spec, z, noise);
    return lambda_deid * loss_deid(z, zt);
  };

  ObfCache cache;
  Vec zt = obf_apply_with_noise(spec, z, noise, &cache);
  ObfGrads grads(spec);
  Vec dzt = cosine_backward_v(z, zt, lambda_deid);
  obf_backward(spec, cache, dzt, 0.0, &grads);

  std::vector<double> analytic = fd::grad_values(grads.mlp);
  std::vector<double*> ptrs = fd::param_ptrs(spec.mlp);
  double worst = 0.0;
  for (size_t i = 0; i < ptrs.size(); ++i) {
    worst = std::max(worst,
                     fd::rel_error(analytic[i], fd::central_difference(eval, ptrs[i])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("ved training gradients (incl. KLD path) match finite differences") {
  ObfuscatorSpec spec = make_ved(6, {8}, 3, {8}, 1.0, 13);
  Rng rng(2);
  Vec z = random_unit_vec(rng, 6);
  Rng noise_rng(5);
  Vec noise = obf_sample_noise(spec, ObfMode::TrainNoised, &noise_rng);
  const double lambda_deid = 30.0;
  const double lambda_kld = 0.2;

  auto eval = [&]() {
    ObfCache c;
    Vec zt = obf_apply_with_noise(spec, z, noise, &c);
    return lambda_deid * loss_deid(z, zt) + lambda_kld * loss_kld(c.mu, c.logvar);
  };

  ObfCache cache;
  Vec zt = obf_apply_with_noise(spec, z, noise, &cache);
  ObfGrads grads(spec);
  Vec dzt = cosine_backward_v(z, zt, lambda_deid);
  obf_backward(spec, cache, dzt, lambda_kld, &grads);

  double worst = 0.0;
  for (auto [g, net] : {std::pair{&grads.enc, &spec.ved_encoder},
                        std::pair{&grads.dec, &spec.ved_decoder}}) {
    std::vector<double> analytic = fd::grad_values(*g);
    std::vector<double*> ptrs = fd::param_ptrs(*net);
    for (size_t i = 0; i < ptrs.size(); ++i) {
      worst = std::max(
          worst, fd::rel_error(analytic[i], fd::central_difference(eval, ptrs[i])));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("null objective leaves obfuscator parameters unchanged") {
  WorldConfig wc;
  wc.n_id_latent = 8;
  wc.n_util_latent = 4;
  wc.n_feature = 32;
  wc.n_identities = 20;
  wc.samples_per_identity = 4;
  wc.seed = 2;
  World world = generate_world(wc);
  ExtractorBuildOptions opts;
  opts.expert_embedding_dim = 16;
  opts.expert_hidden = {64};
  opts.n_z = 16;
  opts.merge_hidden = {32};
  opts.merge_pretrain_epochs = 2;
  opts.expert_options.quality_gate = 0.0;  // tiny world, gate not the point
  EnsembleExtractor extractor = build_extractor(world, opts, 3);

  ObfuscatorSpec spec = make_mlp(16, {16}, 0.3, 4);
  uint64_t before = param_hash(spec.mlp);
  ObfTrainOptions options;
  options.steps = 20;
  options.lambda_deid = 0.0;
  options.lambda_kld = 0.0;
  train_obfuscator(spec, extractor, world, 5, options);
  CHECK(param_hash(spec.mlp) == before);
  ObfuscatorSpec opp = make_opp(16);
  CHECK_THROWS_AS(train_obfuscator(opp, extractor, world, 5, options), Error);
}

TEST_CASE("ved training reduces the de-identification loss") {
  WorldConfig wc;
  wc.n_id_latent = 8;
  wc.n_util_latent = 4;
  wc.n_feature = 32;
  wc.n_identities = 30;
  wc.samples_per_identity = 4;
  wc.seed = 6;
  World world = generate_world(wc);
  ExtractorBuildOptions opts;
  opts.expert_embedding_dim = 16;
  opts.expert_hidden = {64};
  opts.n_z = 16;
  opts.merge_hidden = {32};
  opts.merge_pretrain_epochs = 3;
  opts.expert_options.quality_gate = 0.0;
  EnsembleExtractor extractor = build_extractor(world, opts, 3);

  ObfuscatorSpec spec = make_ved(16, {32}, 8, {32}, 1.0, 4);
  ObfTrainOptions options;
  options.steps = 400;
  ObfTrainResult result = train_obfuscator(spec, extractor, world, 5, options);
  REQUIRE(result.loss_trace.size() == 400);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += result.loss_trace[i];
    tail += result.loss_trace[400 - 50 + i];
  }
  CHECK(tail < head);
}

}  // TEST_SUITE
