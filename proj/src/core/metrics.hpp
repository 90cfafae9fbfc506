#pragma once

#include <cstdint>
#include <vector>

#include "rng.hpp"
#include "vecmat.hpp"

namespace deid {

// Distance scores for verification. Convention throughout: smaller distance
// means "same source", and thresholds accept with distance <= tau.
struct ScoreSet {
  std::vector<double> genuine;   // same-source pairs
  std::vector<double> impostor;  // different-source pairs
};

// TPR at the largest pooled-score threshold whose empirical FPR stays at or
// below fpr_target; 0 when no pooled score qualifies.
double tpr_at_fpr(const ScoreSet& scores, double fpr_target);

// Best-threshold classification accuracy in percent, scanning pooled score
// values; ties resolve to the smallest threshold.
double verification_accuracy(const ScoreSet& scores);

// Fixed-range histogram; values outside [lo, hi] are clamped into the edge
// bins so the total count is preserved.
std::vector<long long> histogram(const std::vector<double>& values, int n_bins,
                                 double lo, double hi);

// Sampled genuine/impostor L2 distances over labeled embeddings.
ScoreSet pair_distances(const std::vector<Vec>& embeddings,
                        const std::vector<int>& labels, int n_genuine,
                        int n_impostor, uint64_t seed);

}  // namespace deid
