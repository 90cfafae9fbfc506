#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "net.hpp"

namespace deid {

// Configuration of the synthetic identity world. Every sample's feature
// vector is a frozen random mixture of a per-identity unit latent and a
// per-sample utility latent, so ground truth for both factors is known.
struct WorldConfig {
  int n_id_latent = 16;
  int n_util_latent = 8;
  int n_feature = 64;
  int n_identities = 200;
  int samples_per_identity = 10;
  double within_identity_noise = 0.05;
  uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Vec feature;
  int identity_label = 0;
  Vec id_latent_truth;    // unit norm; hidden from the pipeline models
  Vec util_latent_truth;  // hidden from the pipeline models
};

struct World {
  WorldConfig config;
  std::vector<Sample> samples;
  DenseNet mixing_net;
  int n_train_identities = 0;  // identities [0, n_train) train, rest eval

  bool is_train_identity(int label) const { return label < n_train_identities; }
  std::vector<size_t> train_indices() const;
  std::vector<size_t> eval_indices() const;
};

World generate_world(const WorldConfig& config);

// run_config_hash/master_seed tie the artifact to the run that wrote it
// ("-" / 0 when standalone).
void save_world(const World& world, const std::string& path,
                const std::string& run_config_hash = "-",
                uint64_t master_seed = 0);
World load_world(const std::string& path);

enum class ExpertKind { Identity, Utility };

// Frozen embedder standing in for a pretrained recognizer. Identity experts
// emit L2-normalized embeddings; utility experts emit raw regressions.
struct ExpertModel {
  DenseNet net;
  int embedding_dim = 0;
  ExpertKind kind = ExpertKind::Identity;
  bool frozen = false;
  std::string name;
};

struct ExpertTrainOptions {
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double quality_gate = 0.95;  // held-out verification accuracy, identity only
};

ExpertModel train_expert(const World& world, ExpertKind kind, int embedding_dim,
                         const std::vector<int>& hidden_sizes, uint64_t seed,
                         const ExpertTrainOptions& options = {});

Vec expert_embed(const ExpertModel& expert, const Vec& x);
Vec expert_predict(const ExpertModel& expert, const Vec& x);
Vec expert_penultimate(const ExpertModel& expert, const Vec& x);

// Held-out verification accuracy of an identity expert on the eval split.
double expert_verification_accuracy(const ExpertModel& expert, const World& world,
                                    uint64_t seed);

// Ensemble identity extractor: expert embeddings are concatenated, merged by
// an MLP with tanh output, then projected back to the unit sphere.
struct EnsembleExtractor {
  std::vector<ExpertModel> experts;
  DenseNet merge_net;
  int n_z = 0;
};

struct ExtractCache {
  std::vector<ForwardCache> expert_caches;
  std::vector<Vec> expert_raw;  // pre-normalization expert outputs
  Vec merged_input;
  ForwardCache merge_cache;
  Vec merge_raw;  // pre-normalization merge output
  Vec z;
};

Vec ensemble_extract(const EnsembleExtractor& extractor, const Vec& x,
                     ExtractCache* cache = nullptr);

// Reverse pass through normalization, merge net and (frozen) experts.
// Accumulates merge-net parameter gradients when merge_grads is non-null and
// returns the gradient w.r.t. the input feature vector.
Vec extract_backward(const EnsembleExtractor& extractor, const ExtractCache& cache,
                     const Vec& dz, NetGrads* merge_grads);

struct ExtractorBuildOptions {
  int n_experts = 1;
  int expert_embedding_dim = 32;
  std::vector<int> expert_hidden = {96};
  int n_z = 64;
  std::vector<int> merge_hidden = {64};
  int merge_pretrain_epochs = 12;
  ExpertTrainOptions expert_options = {};
};

EnsembleExtractor build_extractor(const World& world,
                                  const ExtractorBuildOptions& options,
                                  uint64_t seed);

uint64_t extractor_param_hash(const EnsembleExtractor& extractor);

}  // namespace deid
