#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "checkpoint.hpp"
#include "error.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace deid {

using nlohmann::json;

Anonymizer make_bundle_anonymizer(const PipelineBundle& bundle) {
  return [&bundle](const Vec& x, Rng& rng) { return anonymize(bundle, x, rng); };
}

Anonymizer make_passthrough_anonymizer() {
  return [](const Vec& x, Rng&) { return x; };
}

namespace {

// Verification accuracy presumes balanced classes (random guessing = 50%);
// TPR@FPR wants as many impostors as possible. Trim to the smaller side for
// the accuracy number only.
double balanced_accuracy(const ScoreSet& scores) {
  size_t k = std::min(scores.genuine.size(), scores.impostor.size());
  ScoreSet balanced;
  balanced.genuine.assign(scores.genuine.begin(), scores.genuine.begin() + k);
  balanced.impostor.assign(scores.impostor.begin(), scores.impostor.begin() + k);
  return verification_accuracy(balanced);
}

}  // namespace

std::vector<ExpertRow> verification_rows(const Anonymizer& anonymizer,
                                         const World& world,
                                         const std::vector<ExpertModel>& heldout,
                                         uint64_t seed, const EvalOptions& options,
                                         DistanceSets* distances,
                                         std::vector<std::string>* warnings) {
  if (heldout.empty()) {
    throw Error(ErrorKind::Config, "need at least one held-out expert");
  }
  std::vector<size_t> eval = world.eval_indices();
  if (eval.size() < 4) {
    throw Error(ErrorKind::Config, "eval split too small");
  }
  if (options.n_impostor < static_cast<int>(10.0 / options.fpr_target) && warnings) {
    warnings->push_back(
        "impostor pair count " + std::to_string(options.n_impostor) +
        " is below 10/fpr_target; TPR@FPR estimates will be coarse");
  }

  // Anonymize each eval sample (per-sample substreams keep this
  // schedule-independent), then embed everything under every expert.
  int draws = std::max(1, options.anonymize_draws);
  std::vector<Vec> anonymized(eval.size() * draws);
  parallel_for(eval.size(), [&](size_t i) {
    for (int d = 0; d < draws; ++d) {
      Rng rng = substream(seed, "anon/" + std::to_string(eval[i]) + "/" +
                                    std::to_string(d));
      anonymized[i * draws + d] = anonymizer(world.samples[eval[i]].feature, rng);
    }
  });

  std::vector<ExpertRow> rows(heldout.size());
  // Impostor and positive-pair index choices are shared across experts.
  std::vector<std::pair<size_t, size_t>> impostor_pairs;
  {
    Rng rng = substream(seed, "impostor_pairs");
    impostor_pairs.reserve(options.n_impostor);
    int guard = 0;
    while (static_cast<int>(impostor_pairs.size()) < options.n_impostor) {
      size_t a = rng.uniform_index(eval.size());
      size_t b = rng.uniform_index(eval.size());
      if (world.samples[eval[a]].identity_label ==
          world.samples[eval[b]].identity_label) {
        if (++guard > 100 * options.n_impostor) {
          throw Error(ErrorKind::Input, "cannot sample impostor pairs");
        }
        continue;
      }
      impostor_pairs.emplace_back(a, b);
    }
  }
  std::vector<std::pair<size_t, size_t>> positive_pairs;
  {
    Rng rng = substream(seed, "positive_pairs");
    for (size_t i = 0; i < eval.size(); ++i) {
      // One same-identity partner per sample, when one exists.
      std::vector<size_t> mates;
      for (size_t j = 0; j < eval.size(); ++j) {
        if (j != i && world.samples[eval[j]].identity_label ==
                          world.samples[eval[i]].identity_label) {
          mates.push_back(j);
        }
      }
      if (!mates.empty()) {
        positive_pairs.emplace_back(i, mates[rng.uniform_index(mates.size())]);
      }
    }
  }

  for (size_t e = 0; e < heldout.size(); ++e) {
    const ExpertModel& expert = heldout[e];
    std::vector<Vec> emb_orig(eval.size());
    parallel_for(eval.size(), [&](size_t i) {
      emb_orig[i] = expert_embed(expert, world.samples[eval[i]].feature);
    });
    std::vector<Vec> emb_anon(anonymized.size());
    parallel_for(anonymized.size(), [&](size_t i) {
      emb_anon[i] = expert_embed(expert, anonymized[i]);
    });

    ScoreSet scores;
    scores.genuine.reserve(eval.size() * draws);
    for (size_t i = 0; i < eval.size(); ++i) {
      for (int d = 0; d < draws; ++d) {
        scores.genuine.push_back(l2_distance(emb_orig[i], emb_anon[i * draws + d]));
      }
    }
    scores.impostor.reserve(impostor_pairs.size());
    for (auto [a, b] : impostor_pairs) {
      scores.impostor.push_back(l2_distance(emb_orig[a], emb_orig[b]));
    }

    ExpertRow row;
    row.name = expert.name.empty() ? "heldout_" + std::to_string(e) : expert.name;
    row.tpr = tpr_at_fpr(scores, options.fpr_target);
    row.accuracy = balanced_accuracy(scores);
    rows[e] = row;

    if (e == 0 && distances) {
      distances->original_anonymized = scores.genuine;
      distances->original_negative = scores.impostor;
      distances->original_positive.clear();
      for (auto [a, b] : positive_pairs) {
        distances->original_positive.push_back(l2_distance(emb_orig[a], emb_orig[b]));
      }
    }
  }
  return rows;
}

std::vector<UtilityDriftRow> utility_drift(
    const std::vector<ExpertModel>& utility_experts, const World& world,
    const Anonymizer& anonymizer, uint64_t seed, int draws) {
  std::vector<size_t> eval = world.eval_indices();
  if (eval.empty()) throw Error(ErrorKind::Config, "eval split is empty");
  draws = std::max(1, draws);

  std::vector<Vec> anonymized(eval.size() * draws);
  parallel_for(eval.size(), [&](size_t i) {
    for (int d = 0; d < draws; ++d) {
      Rng rng = substream(seed, "anon/" + std::to_string(eval[i]) + "/" +
                                    std::to_string(d));
      anonymized[i * draws + d] = anonymizer(world.samples[eval[i]].feature, rng);
    }
  });

  std::vector<UtilityDriftRow> rows;
  for (size_t e = 0; e < utility_experts.size(); ++e) {
    const ExpertModel& expert = utility_experts[e];
    double mae = 0.0, gap = 0.0;
    long long n = 0;
    for (size_t i = 0; i < eval.size(); ++i) {
      Vec pred_orig = expert_predict(expert, world.samples[eval[i]].feature);
      Vec pen_orig = expert_penultimate(expert, world.samples[eval[i]].feature);
      for (int d = 0; d < draws; ++d) {
        const Vec& xt = anonymized[i * draws + d];
        Vec pred = expert_predict(expert, xt);
        double m = 0.0;
        for (size_t k = 0; k < pred.size(); ++k) m += std::abs(pred[k] - pred_orig[k]);
        mae += m / pred.size();
        gap += l1_distance(pen_orig, expert_penultimate(expert, xt));
        ++n;
      }
    }
    UtilityDriftRow row;
    row.name = expert.name.empty() ? "utility_" + std::to_string(e) : expert.name;
    row.prediction_mae = mae / n;
    row.penultimate_gap = gap / n;
    rows.push_back(row);
  }
  return rows;
}

PrivacyReport deid_report(const PipelineBundle& bundle, const World& world,
                          const std::vector<ExpertModel>& heldout_experts,
                          const std::vector<ExpertModel>& utility_experts,
                          uint64_t seed, const EvalOptions& options) {
  // Protocol hygiene: held-out experts must not appear inside the pipeline.
  std::set<uint64_t> trained_hashes;
  for (const ExpertModel& e : bundle.extractor.experts) {
    trained_hashes.insert(param_hash(e.net));
  }
  for (const ExpertModel& e : heldout_experts) {
    if (trained_hashes.count(param_hash(e.net))) {
      throw Error(ErrorKind::Protocol,
                  "held-out expert '" + e.name +
                      "' was used to train the pipeline (train/eval overlap)");
    }
  }

  PrivacyReport report;
  report.fpr_target = options.fpr_target;
  report.seed = seed;
  report.config_hash = bundle.config_hash;
  report.delta_psi = bundle.delta_psi;
  report.noise_scale = bundle.noise_scale;
  if (bundle.noise_scale > 0.0 && bundle.delta_psi > 0.0) {
    report.epsilon_formal = bundle.delta_psi / bundle.noise_scale;
    report.epsilon_paper_convention = bundle.delta_psi * bundle.noise_scale;
  }

  Anonymizer anonymizer = make_bundle_anonymizer(bundle);
  report.per_expert =
      verification_rows(anonymizer, world, heldout_experts, seed, options,
                        &report.distances, &report.warnings);
  report.average.name = "average";
  for (const ExpertRow& row : report.per_expert) {
    report.average.tpr += row.tpr;
    report.average.accuracy += row.accuracy;
  }
  report.average.tpr /= report.per_expert.size();
  report.average.accuracy /= report.per_expert.size();

  if (!utility_experts.empty()) {
    report.utility_drift = utility_drift(utility_experts, world, anonymizer, seed,
                                         options.anonymize_draws);
  }
  return report;
}

DenseNet train_inversion_attacker(const std::vector<Vec>& obfuscated_ids,
                                  const std::vector<Vec>& original_ids,
                                  const std::vector<int>& train_labels,
                                  const std::vector<int>& eval_labels,
                                  const AttackerOptions& options, uint64_t seed) {
  if (obfuscated_ids.size() != original_ids.size() ||
      obfuscated_ids.size() != train_labels.size() || obfuscated_ids.empty()) {
    throw Error(ErrorKind::Input, "attacker needs aligned nonempty training pairs");
  }
  {
    std::set<int> train_set(train_labels.begin(), train_labels.end());
    for (int l : eval_labels) {
      if (train_set.count(l)) {
        throw Error(ErrorKind::Protocol,
                    "attack split leakage: identity " + std::to_string(l) +
                        " appears in both training and evaluation");
      }
    }
  }
  int n_z = static_cast<int>(original_ids[0].size());
  std::vector<int> sizes;
  sizes.push_back(n_z);
  if (options.hidden.empty()) {
    sizes.push_back(4 * n_z);
    sizes.push_back(2 * n_z);
  } else {
    sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
  }
  sizes.push_back(n_z);
  DenseNet attacker =
      init_network(sizes, Act::Tanh, Act::Tanh, substream_seed(seed, "attacker/init"));

  AdamState adam(attacker, options.learning_rate, 0.9, 0.999);
  NetGrads grads(attacker);
  Rng shuffle_rng = substream(seed, "attacker/shuffle");
  std::vector<size_t> order(obfuscated_ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(options.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(options.batch_size));
      grads.zero();
      for (size_t k = start; k < end; ++k) {
        ForwardCache cache;
        Vec out = forward(attacker, obfuscated_ids[order[k]], &cache);
        Vec dout(out.size());
        double inv = 1.0 / (static_cast<double>(end - start) * out.size());
        for (size_t j = 0; j < out.size(); ++j) {
          dout[j] = 2.0 * (out[j] - original_ids[order[k]][j]) * inv;
        }
        backward(attacker, cache, dout, &grads);
      }
      adam_step(adam, attacker, grads);
    }
  }
  return attacker;
}

void collect_attack_pairs(const PipelineBundle& bundle, const World& world,
                          const std::vector<size_t>& indices, int draws,
                          uint64_t seed, std::vector<Vec>* obfuscated,
                          std::vector<Vec>* originals, std::vector<int>* labels) {
  draws = std::max(1, draws);
  obfuscated->assign(indices.size() * draws, {});
  originals->assign(indices.size() * draws, {});
  labels->assign(indices.size() * draws, 0);
  parallel_for(indices.size(), [&](size_t i) {
    const Sample& sample = world.samples[indices[i]];
    Vec z = ensemble_extract(bundle.extractor, sample.feature);
    for (int d = 0; d < draws; ++d) {
      Rng rng = substream(seed, "attack_pairs/" + std::to_string(indices[i]) +
                                    "/" + std::to_string(d));
      Vec xt = anonymize(bundle, sample.feature, rng);
      (*obfuscated)[i * draws + d] = ensemble_extract(bundle.extractor, xt);
      (*originals)[i * draws + d] = z;
      (*labels)[i * draws + d] = sample.identity_label;
    }
  });
}

InversionMetrics inversion_metrics(const DenseNet& attacker,
                                   const PipelineBundle& bundle,
                                   const World& world,
                                   const std::vector<size_t>& eval_indices,
                                   uint64_t seed, const EvalOptions& options,
                                   int eval_draws) {
  std::vector<Vec> obfuscated, originals;
  std::vector<int> labels;
  collect_attack_pairs(bundle, world, eval_indices, eval_draws,
                       substream_seed(seed, "inversion_eval"), &obfuscated,
                       &originals, &labels);

  std::vector<Vec> recovered(obfuscated.size());
  parallel_for(obfuscated.size(), [&](size_t i) {
    recovered[i] = normalized(forward(attacker, obfuscated[i]));
  });

  ScoreSet scores;
  scores.genuine.reserve(recovered.size());
  for (size_t i = 0; i < recovered.size(); ++i) {
    scores.genuine.push_back(l2_distance(recovered[i], originals[i]));
  }
  Rng rng = substream(seed, "inversion_impostors");
  int guard = 0;
  while (static_cast<int>(scores.impostor.size()) < options.n_impostor) {
    size_t a = rng.uniform_index(recovered.size());
    size_t b = rng.uniform_index(recovered.size());
    if (labels[a] == labels[b]) {
      if (++guard > 100 * options.n_impostor) {
        throw Error(ErrorKind::Input, "cannot sample inversion impostor pairs");
      }
      continue;
    }
    scores.impostor.push_back(l2_distance(recovered[a], originals[b]));
  }

  InversionMetrics metrics;
  metrics.tpr = tpr_at_fpr(scores, options.fpr_target);
  metrics.accuracy = balanced_accuracy(scores);
  return metrics;
}

LdpAuditResult ldp_ratio_audit(const std::function<double(double, Rng&)>& mechanism,
                               double z, double z_prime, long long n_samples,
                               int n_bins, double epsilon_claimed, uint64_t seed,
                               double slack) {
  if (n_samples < 100000) {
    throw Error(ErrorKind::Input,
                "ldp_ratio_audit needs at least 1e5 samples per input");
  }
  if (n_bins < 2) throw Error(ErrorKind::Input, "ldp_ratio_audit needs >= 2 bins");

  std::vector<double> samples_a(n_samples), samples_b(n_samples);
  Rng rng_a = substream(seed, "audit/a");
  Rng rng_b = substream(seed, "audit/b");
  for (long long i = 0; i < n_samples; ++i) samples_a[i] = mechanism(z, rng_a);
  for (long long i = 0; i < n_samples; ++i) samples_b[i] = mechanism(z_prime, rng_b);

  // Common range: central pooled quantiles; everything outside clamps into
  // the edge bins. Tail bins would otherwise be too sparsely populated for
  // stable frequency ratios.
  std::vector<double> pooled;
  pooled.reserve(2 * n_samples);
  pooled.insert(pooled.end(), samples_a.begin(), samples_a.end());
  pooled.insert(pooled.end(), samples_b.begin(), samples_b.end());
  std::sort(pooled.begin(), pooled.end());
  const double q = 0.125;
  double lo = pooled[static_cast<size_t>(q * (pooled.size() - 1))];
  double hi = pooled[static_cast<size_t>((1.0 - q) * (pooled.size() - 1))];

  LdpAuditResult result;
  result.bound = epsilon_claimed + slack;
  if (!(hi > lo)) {
    // Degenerate spread: both mechanisms concentrate on one point each.
    if (pooled.front() == pooled.back()) {
      result.max_log_ratio = 0.0;  // identical point masses
      result.passed = result.max_log_ratio <= result.bound;
      return result;
    }
    result.max_log_ratio = std::numeric_limits<double>::infinity();
    result.passed = false;
    return result;
  }

  std::vector<long long> counts_a = histogram(samples_a, n_bins, lo, hi);
  std::vector<long long> counts_b = histogram(samples_b, n_bins, lo, hi);
  double worst = 0.0;
  bool any_joint = false;
  for (int i = 0; i < n_bins; ++i) {
    if (counts_a[i] > 0 && counts_b[i] > 0) {
      any_joint = true;
      worst = std::max(worst, std::abs(std::log(static_cast<double>(counts_a[i]) /
                                                static_cast<double>(counts_b[i]))));
    }
  }
  result.max_log_ratio =
      any_joint ? worst : std::numeric_limits<double>::infinity();
  result.passed = result.max_log_ratio <= result.bound;
  return result;
}

namespace {

json row_to_json(const ExpertRow& row) {
  return json{{"name", row.name},
              {"tpr_at_fpr", row.tpr},
              {"verification_accuracy", row.accuracy}};
}

}  // namespace

std::string report_to_json(const PrivacyReport& report) {
  json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["fpr_target"] = report.fpr_target;
  json experts = json::array();
  for (const ExpertRow& row : report.per_expert) experts.push_back(row_to_json(row));
  j["per_heldout_expert"] = experts;
  j["average"] = row_to_json(report.average);
  json drift = json::array();
  for (const UtilityDriftRow& row : report.utility_drift) {
    drift.push_back(json{{"name", row.name},
                         {"prediction_mae", row.prediction_mae},
                         {"penultimate_l1_gap", row.penultimate_gap}});
  }
  j["utility_drift"] = drift;
  if (report.inversion) {
    j["inversion"] = json{{"tpr_at_fpr", report.inversion->tpr},
                          {"verification_accuracy", report.inversion->accuracy}};
  }
  json eps;
  eps["delta_psi"] = report.delta_psi;
  eps["noise_scale"] = report.noise_scale;
  if (report.epsilon_formal > 0.0) {
    eps["epsilon"] = report.epsilon_formal;
    eps["epsilon_paper_convention"] = report.epsilon_paper_convention;
  } else {
    eps["epsilon"] = nullptr;
    eps["epsilon_paper_convention"] = nullptr;
  }
  j["epsilon_accounting"] = eps;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

std::string report_to_csv(const PrivacyReport& report) {
  std::ostringstream out;
  char line[256];
  out << "# config " << report.config_hash << " seed " << report.seed << "\n";
  out << "row_type,name,tpr_at_fpr,verification_accuracy,prediction_mae,"
         "penultimate_l1_gap\n";
  auto expert_line = [&](const char* type, const ExpertRow& row) {
    std::snprintf(line, sizeof(line), "%-8s,%-16s,%12.6f,%12.4f,%12s,%12s\n", type,
                  row.name.c_str(), row.tpr, row.accuracy, "", "");
    out << line;
  };
  for (const ExpertRow& row : report.per_expert) expert_line("expert", row);
  expert_line("average", report.average);
  if (report.inversion) {
    ExpertRow inv{"inversion", report.inversion->tpr, report.inversion->accuracy};
    expert_line("attack", inv);
  }
  for (const UtilityDriftRow& row : report.utility_drift) {
    std::snprintf(line, sizeof(line), "%-8s,%-16s,%12s,%12s,%12.6f,%12.6f\n",
                  "utility", row.name.c_str(), "", "", row.prediction_mae,
                  row.penultimate_gap);
    out << line;
  }
  return out.str();
}

}  // namespace deid
