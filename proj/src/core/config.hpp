#pragma once

#include <string>
#include <vector>

#include "eval.hpp"
#include "obfuscator.hpp"
#include "swap.hpp"
#include "world.hpp"

namespace deid {

// Complete, reproducible description of one experiment. Serialized as JSON;
// unknown keys anywhere in the document are hard errors.
struct RunConfig {
  WorldConfig world;

  struct Experts {
    int n_heldout_identity = 2;
    int n_utility = 2;
    int identity_embedding_dim = 32;
    std::vector<int> identity_hidden = {96};
    int utility_embedding_dim = 16;
    std::vector<int> utility_hidden = {64};
    int epochs = 40;
    double learning_rate = 1e-3;
    double quality_gate = 0.95;
  } experts;

  struct Extractor {
    int n_experts = 1;  // k_Z
    int n_z = 64;
    std::vector<int> merge_hidden = {64};
    int merge_pretrain_epochs = 12;
  } extractor;

  struct Obfuscator {
    std::string variant = "ved";
    double beta = 0.0;
    double alpha = 1.0;
    int n_v = 64;
    std::vector<int> mlp_hidden = {256, 128};
    std::vector<int> ved_encoder_hidden = {128, 128};
    std::vector<int> ved_decoder_hidden = {128, 128};
    int sensitivity_pairs = 100000;
  } obfuscator;

  struct Swap {
    int nu_dim = 12;
    int code_dim = 128;
    std::vector<int> encoder_hidden = {128};
    std::vector<int> injector_hidden = {128};
    std::vector<int> decoder_hidden = {128};
    int k_d = 1;
    std::vector<int> critic_hidden = {128};
  } swap;

  LossWeights weights;

  struct Phases {
    int obf_pretrain_steps = 2000;
    int phase1_steps = 2000;
    int phase2_steps = 3000;
    int batch_size = 4;
    double learning_rate = 1e-4;
    bool train_merge_in_phase1 = true;
  } phases;

  struct Eval {
    double fpr_target = 1e-3;
    int n_impostor = 10000;
    int anonymize_draws = 5;
    int attacker_epochs = 60;
    double attacker_learning_rate = 1e-3;
    int attacker_train_draws = 2;
    int attacker_eval_draws = 5;
    int sweep_seeds = 3;
  } eval;

  struct Audit {
    double delta = 1.0;
    double noise_scale = 1.0;
    long long n_samples = 1000000;
    int n_bins = 200;
    double slack = 0.15;
  } audit;

  std::string output_dir = "out";
  uint64_t master_seed = 1;
};

RunConfig parse_config_json(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& config);

// FNV-1a over the canonical JSON serialization.
std::string config_hash(const RunConfig& config);

std::string world_config_hash(const WorldConfig& config);

}  // namespace deid
