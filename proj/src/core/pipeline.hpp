#pragma once

#include <string>
#include <vector>

#include "bundle.hpp"
#include "config.hpp"
#include "eval.hpp"

namespace deid {

// In-memory building blocks. The file-based commands below wrap these with
// the on-disk artifact layout; sweeps and tests drive them directly.
World build_world(const RunConfig& config);

struct ExpertSet {
  EnsembleExtractor extractor;
  std::vector<ExpertModel> heldout_identity;
  std::vector<ExpertModel> utility;
};

ExpertSet build_experts(const RunConfig& config, const World& world);

// Swap model, critics and extractor after adversarial pretraining. Phase 1
// does not involve the obfuscator, so one state can seed several variants.
struct Phase1State {
  SwapModel swap;
  std::vector<Critic> critics;
  EnsembleExtractor extractor;
};

Phase1State run_phase1(const RunConfig& config, const World& world,
                       const ExpertSet& experts);

// Obfuscator pretraining + joint phase 2 + empirical sensitivity.
PipelineBundle finish_bundle(const RunConfig& config, const World& world,
                             const ExpertSet& experts, const Phase1State& phase1);

// Phase 1 + phase 2 + empirical sensitivity, returning a complete bundle.
PipelineBundle train_bundle(const RunConfig& config, const World& world,
                            const ExpertSet& experts);

PrivacyReport evaluate_bundle(const RunConfig& config, const PipelineBundle& bundle,
                              const World& world, const ExpertSet& experts);

InversionMetrics attack_bundle(const RunConfig& config, const PipelineBundle& bundle,
                               const World& world);

// File-based command surface. Artifacts live under out_dir:
//   world.dat, experts/, bundle/, reports/, sweep/
void run_world_gen(const RunConfig& config, const std::string& out_dir);
void run_expert_train(const RunConfig& config, const std::string& out_dir);
void run_train(const RunConfig& config, const std::string& out_dir);
PrivacyReport run_eval(const RunConfig& config, const std::string& bundle_dir,
                       const std::string& out_dir);
InversionMetrics run_attack(const RunConfig& config, const std::string& bundle_dir,
                            const std::string& out_dir);
LdpAuditResult run_audit(const RunConfig& config, const std::string& out_dir);

struct SweepCell {
  double value = 0.0;
  double swapped_tpr = 0.0;
  double swapped_accuracy = 0.0;
  double inverted_tpr = 0.0;
  double inverted_accuracy = 0.0;
  int n_seeds = 0;
};

// Re-trains the pipeline per noise value (phase 1 shared per seed, since it
// does not involve the obfuscator) and averages de-id and inversion metrics
// over sweep seeds.
std::vector<SweepCell> sweep_over(const RunConfig& config,
                                  const std::string& parameter,
                                  const std::vector<double>& values,
                                  int n_seeds);

void run_sweep(const RunConfig& config, const std::string& parameter,
               const std::vector<double>& values, const std::string& out_dir);

}  // namespace deid
