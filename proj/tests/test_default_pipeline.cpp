// Spec-sized checks that need the full default world; they share one
// lazily-built fixture to keep the suite fast.
#include <cstdlib>

#include "core/eval.hpp"
#include "core/pipeline.hpp"
#include "doctest.h"

using namespace deid;

namespace {

struct DefaultFixture {
  RunConfig config;
  World world;
  ExpertSet experts;
};

const DefaultFixture& fixture() {
  static DefaultFixture* f = [] {
    auto* out = new DefaultFixture();
    out->config.master_seed = 20240601;
    out->world = build_world(out->config);
    out->experts = build_experts(out->config, out->world);
    return out;
  }();
  return *f;
}

}  // namespace

TEST_SUITE("default_pipeline") {

TEST_CASE("identity experts clear the 95% gate on the default world") {
  const DefaultFixture& f = fixture();
  for (const ExpertModel& expert : f.experts.heldout_identity) {
    CHECK(expert_verification_accuracy(expert, f.world, 17) >= 95.0);
  }
}

TEST_CASE("a noiseless mlp transform learns near-antipodal outputs") {
  const DefaultFixture& f = fixture();
  ObfuscatorSpec spec = make_mlp(f.config.extractor.n_z,
                                 f.config.obfuscator.mlp_hidden, 0.0, 404);
  ObfTrainOptions options;
  options.steps = 2000;
  train_obfuscator(spec, f.experts.extractor, f.world, 405, options);
  double mean_cos = 0.0;
  std::vector<size_t> eval = f.world.eval_indices();
  for (size_t i : eval) {
    Vec z = ensemble_extract(f.experts.extractor, f.world.samples[i].feature);
    mean_cos += cosine(z, obf_apply(spec, z, ObfMode::Deterministic, nullptr));
  }
  mean_cos /= eval.size();
  CHECK(mean_cos < -0.9);
}

TEST_CASE("phase 1 carries the self-swap identity below 0.3 loss") {
  const DefaultFixture& f = fixture();
  Phase1State state = run_phase1(f.config, f.world, f.experts);
  double mean_l_id = 0.0;
  std::vector<size_t> eval = f.world.eval_indices();
  for (size_t i : eval) {
    const Vec& x = f.world.samples[i].feature;
    Vec z = ensemble_extract(state.extractor, x);
    Vec zh = ensemble_extract(state.extractor, swap_forward(state.swap, x, z));
    mean_l_id += 1.0 - cosine(z, zh);
  }
  mean_l_id /= eval.size();
  CHECK(mean_l_id < 0.3);
}

TEST_CASE("evaluation is independent of the thread schedule") {
  const DefaultFixture& f = fixture();
  EvalOptions options;
  options.n_impostor = 2000;
  options.anonymize_draws = 2;
  DistanceSets d1, d2;
  setenv("DEID_THREADS", "1", 1);
  std::vector<ExpertRow> rows1 =
      verification_rows(make_passthrough_anonymizer(), f.world,
                        f.experts.heldout_identity, 3, options, &d1, nullptr);
  setenv("DEID_THREADS", "4", 1);
  std::vector<ExpertRow> rows2 =
      verification_rows(make_passthrough_anonymizer(), f.world,
                        f.experts.heldout_identity, 3, options, &d2, nullptr);
  unsetenv("DEID_THREADS");
  REQUIRE(rows1.size() == rows2.size());
  for (size_t i = 0; i < rows1.size(); ++i) {
    CHECK(rows1[i].tpr == rows2[i].tpr);
    CHECK(rows1[i].accuracy == rows2[i].accuracy);
  }
  CHECK(d1.original_anonymized == d2.original_anonymized);
}

}  // TEST_SUITE
