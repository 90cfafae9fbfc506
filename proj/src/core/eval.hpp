#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bundle.hpp"
#include "metrics.hpp"
#include "world.hpp"

namespace deid {

// Maps an original feature to its anonymized version, drawing any mechanism
// randomness from the supplied stream.
using Anonymizer = std::function<Vec(const Vec& x, Rng& rng)>;

Anonymizer make_bundle_anonymizer(const PipelineBundle& bundle);
Anonymizer make_passthrough_anonymizer();

struct EvalOptions {
  double fpr_target = 1e-3;
  int n_impostor = 10000;
  int anonymize_draws = 1;  // genuine (original, anonymized) pairs per sample
};

struct ExpertRow {
  std::string name;
  double tpr = 0.0;       // TPR @ fpr_target on (original, anonymized) pairs
  double accuracy = 0.0;  // verification accuracy in percent
};

struct UtilityDriftRow {
  std::string name;
  double prediction_mae = 0.0;   // mean |pred(x) - pred(x_tilde)| per dim
  double penultimate_gap = 0.0;  // mean L1 gap of penultimate features
};

struct InversionMetrics {
  double tpr = 0.0;
  double accuracy = 0.0;
};

// Distance populations behind the first held-out expert's row, for
// histogram/ROC exports.
struct DistanceSets {
  std::vector<double> original_positive;
  std::vector<double> original_negative;
  std::vector<double> original_anonymized;
};

struct PrivacyReport {
  std::vector<ExpertRow> per_expert;
  ExpertRow average;
  std::vector<UtilityDriftRow> utility_drift;
  std::optional<InversionMetrics> inversion;
  double delta_psi = 0.0;
  double noise_scale = 0.0;
  double epsilon_formal = 0.0;            // delta / scale; 0 when undefined
  double epsilon_paper_convention = 0.0;  // delta * scale; 0 when undefined
  double fpr_target = 0.0;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> warnings;
  DistanceSets distances;
};

// Verification rows of a generic anonymizer against held-out identity
// experts, plus the distance populations of the first expert.
std::vector<ExpertRow> verification_rows(const Anonymizer& anonymizer,
                                         const World& world,
                                         const std::vector<ExpertModel>& heldout,
                                         uint64_t seed, const EvalOptions& options,
                                         DistanceSets* distances,
                                         std::vector<std::string>* warnings);

std::vector<UtilityDriftRow> utility_drift(
    const std::vector<ExpertModel>& utility_experts, const World& world,
    const Anonymizer& anonymizer, uint64_t seed, int draws);

// Full de-identification report for a trained bundle. Held-out experts must
// be disjoint from the experts inside the bundle's extractor (checked by
// parameter hash).
PrivacyReport deid_report(const PipelineBundle& bundle, const World& world,
                          const std::vector<ExpertModel>& heldout_experts,
                          const std::vector<ExpertModel>& utility_experts,
                          uint64_t seed, const EvalOptions& options);

struct AttackerOptions {
  std::vector<int> hidden;  // empty -> [4 n_z, 2 n_z]
  int epochs = 100;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int train_draws = 2;  // anonymization draws per training sample
  int eval_draws = 5;   // draws per evaluation sample
};

// Supervised L2-regression attacker mapping obfuscated identity vectors back
// to originals. Trained only on split-A pairs; throws a protocol error when
// the two label sets overlap.
DenseNet train_inversion_attacker(const std::vector<Vec>& obfuscated_ids,
                                  const std::vector<Vec>& original_ids,
                                  const std::vector<int>& train_labels,
                                  const std::vector<int>& eval_labels,
                                  const AttackerOptions& options, uint64_t seed);

// (obfuscated id, original id, label) triples for the given world samples,
// with the obfuscated id re-extracted from the anonymized feature.
void collect_attack_pairs(const PipelineBundle& bundle, const World& world,
                          const std::vector<size_t>& indices, int draws,
                          uint64_t seed, std::vector<Vec>* obfuscated,
                          std::vector<Vec>* originals, std::vector<int>* labels);

InversionMetrics inversion_metrics(const DenseNet& attacker,
                                   const PipelineBundle& bundle,
                                   const World& world,
                                   const std::vector<size_t>& eval_indices,
                                   uint64_t seed, const EvalOptions& options,
                                   int eval_draws);

struct LdpAuditResult {
  double max_log_ratio = 0.0;
  double bound = 0.0;  // epsilon_claimed + slack
  bool passed = false;
};

// Histogram-ratio audit of a scalar randomized mechanism on two adjacent
// inputs. Bins cover the central pooled-sample range (outliers clamp into
// the edge bins); the statistic is the max |log frequency ratio| over bins
// both mechanisms reach. Disjoint supports return an infinite ratio.
LdpAuditResult ldp_ratio_audit(const std::function<double(double, Rng&)>& mechanism,
                               double z, double z_prime, long long n_samples,
                               int n_bins, double epsilon_claimed, uint64_t seed,
                               double slack = 0.15);

std::string report_to_json(const PrivacyReport& report);
std::string report_to_csv(const PrivacyReport& report);

}  // namespace deid
