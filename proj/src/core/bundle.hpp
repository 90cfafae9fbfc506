#pragma once

#include <string>
#include <vector>

#include "obfuscator.hpp"
#include "swap.hpp"
#include "world.hpp"

namespace deid {

// A trained pipeline on disk: swap.ckpt, critic.ckpt, obfuscator.ckpt with a
// JSON sidecar, extractor.ckpt, and manifest.json tying them to the run that
// produced them.
struct PipelineBundle {
  SwapModel swap;
  std::vector<Critic> critics;
  ObfuscatorSpec obfuscator;
  EnsembleExtractor extractor;
  LossWeights weights;

  double delta_psi = 0.0;        // empirical sensitivity of the trained psi
  double noise_scale = 0.0;      // beta or alpha actually in force
  uint64_t master_seed = 0;
  std::string config_hash;
  std::string world_config_hash;
};

void save_bundle(const PipelineBundle& bundle, const std::string& dir);
PipelineBundle load_bundle(const std::string& dir);

void save_expert(const ExpertModel& expert, const std::string& path);
ExpertModel load_expert(const std::string& path);

// Anonymized feature for one sample: g(x, psi_eps(h(x))) with inference-mode
// Laplace noise drawn from `rng`.
Vec anonymize(const PipelineBundle& bundle, const Vec& x, Rng& rng);

}  // namespace deid
