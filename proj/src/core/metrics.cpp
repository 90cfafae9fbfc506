#include "metrics.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace deid {

namespace {

void check_nonempty(const ScoreSet& s) {
  if (s.genuine.empty() || s.impostor.empty()) {
    throw Error(ErrorKind::Input, "score set needs nonempty genuine and impostor lists");
  }
  for (double v : s.genuine) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::Input, "scores must be finite and nonnegative");
    }
  }
  for (double v : s.impostor) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::Input, "scores must be finite and nonnegative");
    }
  }
}

std::vector<double> pooled_sorted(const ScoreSet& s) {
  std::vector<double> pool;
  pool.reserve(s.genuine.size() + s.impostor.size());
  pool.insert(pool.end(), s.genuine.begin(), s.genuine.end());
  pool.insert(pool.end(), s.impostor.begin(), s.impostor.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  return pool;
}

// Count of values <= tau in a sorted vector.
size_t count_leq(const std::vector<double>& sorted, double tau) {
  return std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin();
}

}  // namespace

double tpr_at_fpr(const ScoreSet& scores, double fpr_target) {
  check_nonempty(scores);
  if (!(fpr_target > 0.0 && fpr_target < 1.0)) {
    throw Error(ErrorKind::Input, "fpr_target must lie in (0, 1)");
  }
  std::vector<double> genuine = scores.genuine;
  std::vector<double> impostor = scores.impostor;
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());

  bool found = false;
  double best_tau = 0.0;
  for (double tau : pooled_sorted(scores)) {
    double fpr = static_cast<double>(count_leq(impostor, tau)) / impostor.size();
    if (fpr <= fpr_target) {
      best_tau = tau;
      found = true;
    } else {
      break;  // thresholds are increasing, so FPR only grows from here
    }
  }
  if (!found) return 0.0;
  return static_cast<double>(count_leq(genuine, best_tau)) / genuine.size();
}

double verification_accuracy(const ScoreSet& scores) {
  check_nonempty(scores);
  std::vector<double> genuine = scores.genuine;
  std::vector<double> impostor = scores.impostor;
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  double total = static_cast<double>(genuine.size() + impostor.size());

  double best = -1.0;
  for (double tau : pooled_sorted(scores)) {
    double tp = static_cast<double>(count_leq(genuine, tau));
    double tn = static_cast<double>(impostor.size() - count_leq(impostor, tau));
    double acc = (tp + tn) / total;
    if (acc > best) best = acc;  // strict: ties keep the smallest threshold
  }
  return best * 100.0;
}

std::vector<long long> histogram(const std::vector<double>& values, int n_bins,
                                 double lo, double hi) {
  if (n_bins < 1) throw Error(ErrorKind::Input, "histogram needs n_bins >= 1");
  if (!(hi > lo)) throw Error(ErrorKind::Input, "histogram needs hi > lo");
  std::vector<long long> counts(n_bins, 0);
  double width = (hi - lo) / n_bins;
  for (double v : values) {
    int bin = static_cast<int>(std::floor((v - lo) / width));
    bin = std::clamp(bin, 0, n_bins - 1);
    counts[bin] += 1;
  }
  return counts;
}

ScoreSet pair_distances(const std::vector<Vec>& embeddings,
                        const std::vector<int>& labels, int n_genuine,
                        int n_impostor, uint64_t seed) {
  if (embeddings.size() != labels.size() || embeddings.size() < 2) {
    throw Error(ErrorKind::Input, "pair_distances needs >= 2 labeled embeddings");
  }
  if (n_genuine < 1 || n_impostor < 1) {
    throw Error(ErrorKind::Input, "pair counts must be positive");
  }
  // Group indices by label for genuine sampling.
  std::vector<std::vector<size_t>> by_label;
  {
    std::vector<int> order;
    for (int l : labels) {
      if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
    }
    by_label.resize(order.size());
    for (size_t i = 0; i < labels.size(); ++i) {
      size_t g = std::find(order.begin(), order.end(), labels[i]) - order.begin();
      by_label[g].push_back(i);
    }
  }
  std::vector<size_t> multi;  // label groups with at least 2 members
  for (size_t g = 0; g < by_label.size(); ++g) {
    if (by_label[g].size() >= 2) multi.push_back(g);
  }
  if (multi.empty()) {
    throw Error(ErrorKind::Input, "no label has two samples; cannot form genuine pairs");
  }

  Rng rng(seed);
  ScoreSet out;
  out.genuine.reserve(n_genuine);
  out.impostor.reserve(n_impostor);
  for (int i = 0; i < n_genuine; ++i) {
    const auto& group = by_label[multi[rng.uniform_index(multi.size())]];
    size_t a = rng.uniform_index(group.size());
    size_t b = rng.uniform_index(group.size() - 1);
    if (b >= a) ++b;
    out.genuine.push_back(l2_distance(embeddings[group[a]], embeddings[group[b]]));
  }
  int guard = 0;
  while (static_cast<int>(out.impostor.size()) < n_impostor) {
    size_t a = rng.uniform_index(embeddings.size());
    size_t b = rng.uniform_index(embeddings.size());
    if (labels[a] == labels[b]) {
      if (++guard > 1000 * n_impostor) {
        throw Error(ErrorKind::Input, "cannot sample impostor pairs: labels too uniform");
      }
      continue;
    }
    out.impostor.push_back(l2_distance(embeddings[a], embeddings[b]));
  }
  return out;
}

}  // namespace deid
