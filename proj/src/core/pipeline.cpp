#include "pipeline.hpp"

#include <algorithm>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "checkpoint.hpp"
#include "error.hpp"
#include "json.hpp"

namespace deid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory: " + dir);
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path);
}

ObfuscatorSpec make_obfuscator(const RunConfig& config, uint64_t seed) {
  const auto& o = config.obfuscator;
  ObfVariant variant = obf_variant_from_name(o.variant);
  switch (variant) {
    case ObfVariant::Opp:
      return make_opp(config.extractor.n_z);
    case ObfVariant::Mlp:
      return make_mlp(config.extractor.n_z, o.mlp_hidden, o.beta, seed);
    case ObfVariant::Ved:
      return make_ved(config.extractor.n_z, o.ved_encoder_hidden, o.n_v,
                      o.ved_decoder_hidden, o.alpha, seed);
  }
  throw Error(ErrorKind::Config, "unreachable variant");
}

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions opts;
  opts.fpr_target = config.eval.fpr_target;
  opts.n_impostor = config.eval.n_impostor;
  opts.anonymize_draws = config.eval.anonymize_draws;
  return opts;
}

}  // namespace

World build_world(const RunConfig& config) {
  WorldConfig wc = config.world;
  wc.seed = substream_seed(config.master_seed,
                           "world/" + std::to_string(config.world.seed));
  return generate_world(wc);
}

ExpertSet build_experts(const RunConfig& config, const World& world) {
  ExpertSet set;
  ExtractorBuildOptions opts;
  opts.n_experts = config.extractor.n_experts;
  opts.expert_embedding_dim = config.experts.identity_embedding_dim;
  opts.expert_hidden = config.experts.identity_hidden;
  opts.n_z = config.extractor.n_z;
  opts.merge_hidden = config.extractor.merge_hidden;
  opts.merge_pretrain_epochs = config.extractor.merge_pretrain_epochs;
  opts.expert_options.epochs = config.experts.epochs;
  opts.expert_options.learning_rate = config.experts.learning_rate;
  opts.expert_options.quality_gate = config.experts.quality_gate;
  set.extractor = build_extractor(world, opts,
                                  substream_seed(config.master_seed, "extractor"));

  ExpertTrainOptions expert_opts;
  expert_opts.epochs = config.experts.epochs;
  expert_opts.learning_rate = config.experts.learning_rate;
  expert_opts.quality_gate = config.experts.quality_gate;
  for (int i = 0; i < config.experts.n_heldout_identity; ++i) {
    ExpertModel expert = train_expert(
        world, ExpertKind::Identity, config.experts.identity_embedding_dim,
        config.experts.identity_hidden,
        substream_seed(config.master_seed, "heldout_expert_" + std::to_string(i)),
        expert_opts);
    expert.name = "heldout_id_" + std::to_string(i);
    set.heldout_identity.push_back(std::move(expert));
  }
  for (int i = 0; i < config.experts.n_utility; ++i) {
    ExpertModel expert = train_expert(
        world, ExpertKind::Utility, config.experts.utility_embedding_dim,
        config.experts.utility_hidden,
        substream_seed(config.master_seed, "utility_expert_" + std::to_string(i)),
        expert_opts);
    expert.name = "utility_" + std::to_string(i);
    set.utility.push_back(std::move(expert));
  }
  return set;
}

Phase1State run_phase1(const RunConfig& config, const World& world,
                       const ExpertSet& experts) {
  Phase1State state;
  state.extractor = experts.extractor;
  state.swap = make_swap_model(
      config.world.n_feature, config.extractor.n_z, config.swap.nu_dim,
      config.swap.code_dim, config.swap.encoder_hidden,
      config.swap.injector_hidden, config.swap.decoder_hidden,
      substream_seed(config.master_seed, "swap_init"));
  state.critics =
      make_critics(config.world.n_feature, config.swap.k_d,
                   config.swap.critic_hidden,
                   substream_seed(config.master_seed, "critic_init"));

  PhaseTrainOptions phase1;
  phase1.steps = config.phases.phase1_steps;
  phase1.batch_size = config.phases.batch_size;
  phase1.learning_rate = config.phases.learning_rate;
  phase1.train_merge = config.phases.train_merge_in_phase1;
  train_phase1(state.swap, state.critics, state.extractor, world, config.weights,
               substream_seed(config.master_seed, "phase1"), phase1);
  return state;
}

PipelineBundle finish_bundle(const RunConfig& config, const World& world,
                             const ExpertSet& experts, const Phase1State& phase1) {
  if (config.weights.lambda_uti.size() != experts.utility.size()) {
    throw Error(ErrorKind::Config,
                "weights.lambda_uti must have one entry per utility expert");
  }
  PipelineBundle bundle;
  bundle.swap = phase1.swap;
  bundle.critics = phase1.critics;
  bundle.extractor = phase1.extractor;
  bundle.weights = config.weights;
  bundle.master_seed = config.master_seed;
  bundle.config_hash = config_hash(config);
  bundle.world_config_hash = world_config_hash(config.world);
  bundle.obfuscator =
      make_obfuscator(config, substream_seed(config.master_seed, "obf_init"));

  if (bundle.obfuscator.variant != ObfVariant::Opp &&
      config.phases.obf_pretrain_steps > 0) {
    // Components train separately before the joint fine-tune: the identity
    // transformation learns its de-id objective against the post-phase-1
    // extractor.
    ObfTrainOptions obf_opts;
    obf_opts.steps = config.phases.obf_pretrain_steps;
    obf_opts.batch_size = config.phases.batch_size;
    obf_opts.learning_rate = config.phases.learning_rate;
    obf_opts.lambda_deid = config.weights.lambda_deid;
    obf_opts.lambda_kld = config.weights.lambda_kld;
    train_obfuscator(bundle.obfuscator, bundle.extractor, world,
                     substream_seed(config.master_seed, "obf_pretrain"), obf_opts);
  }

  PhaseTrainOptions phase2;
  phase2.steps = config.phases.phase2_steps;
  phase2.batch_size = config.phases.batch_size;
  phase2.learning_rate = config.phases.learning_rate;
  train_phase2(bundle.swap, bundle.critics, bundle.obfuscator, bundle.extractor,
               experts.utility, world, config.weights,
               substream_seed(config.master_seed, "phase2"), phase2);

  // Empirical sensitivity of the trained deterministic core, over train-split
  // identity vectors plus their antipodes.
  {
    std::vector<size_t> train = world.train_indices();
    std::vector<Vec> ids(train.size());
    for (size_t i = 0; i < train.size(); ++i) {
      ids[i] = ensemble_extract(bundle.extractor, world.samples[train[i]].feature);
    }
    const ObfuscatorSpec& spec = bundle.obfuscator;
    auto deterministic = [&spec](const Vec& z) {
      return obf_apply(spec, z, ObfMode::Deterministic, nullptr);
    };
    SensitivityEstimate est = estimate_sensitivity(
        deterministic, ids, config.obfuscator.sensitivity_pairs,
        substream_seed(config.master_seed, "sensitivity"));
    bundle.delta_psi = est.delta;
    switch (bundle.obfuscator.variant) {
      case ObfVariant::Opp: bundle.noise_scale = 0.0; break;
      case ObfVariant::Mlp: bundle.noise_scale = bundle.obfuscator.beta; break;
      case ObfVariant::Ved: bundle.noise_scale = bundle.obfuscator.alpha; break;
    }
  }
  return bundle;
}

PipelineBundle train_bundle(const RunConfig& config, const World& world,
                            const ExpertSet& experts) {
  return finish_bundle(config, world, experts, run_phase1(config, world, experts));
}

PrivacyReport evaluate_bundle(const RunConfig& config, const PipelineBundle& bundle,
                              const World& world, const ExpertSet& experts) {
  return deid_report(bundle, world, experts.heldout_identity, experts.utility,
                     substream_seed(config.master_seed, "eval"), eval_options(config));
}

InversionMetrics attack_bundle(const RunConfig& config, const PipelineBundle& bundle,
                               const World& world) {
  std::vector<size_t> train = world.train_indices();
  std::vector<size_t> eval = world.eval_indices();
  std::vector<Vec> obfuscated, originals;
  std::vector<int> labels;
  collect_attack_pairs(bundle, world, train, config.eval.attacker_train_draws,
                       substream_seed(config.master_seed, "attack_train_pairs"),
                       &obfuscated, &originals, &labels);
  std::vector<int> eval_labels;
  for (size_t i : eval) eval_labels.push_back(world.samples[i].identity_label);

  AttackerOptions options;
  options.epochs = config.eval.attacker_epochs;
  options.learning_rate = config.eval.attacker_learning_rate;
  options.train_draws = config.eval.attacker_train_draws;
  options.eval_draws = config.eval.attacker_eval_draws;
  DenseNet attacker = train_inversion_attacker(
      obfuscated, originals, labels, eval_labels, options,
      substream_seed(config.master_seed, "attack_train"));

  return inversion_metrics(attacker, bundle, world, eval,
                           substream_seed(config.master_seed, "attack_eval"),
                           eval_options(config), config.eval.attacker_eval_draws);
}

void run_world_gen(const RunConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  World world = build_world(config);
  save_world(world, out_dir + "/world.dat", config_hash(config),
             config.master_seed);
}

void run_expert_train(const RunConfig& config, const std::string& out_dir) {
  World world = load_world(out_dir + "/world.dat");
  ExpertSet set = build_experts(config, world);
  ensure_dir(out_dir + "/experts");
  {
    Checkpoint ckpt;
    ckpt.model_kind = "extractor";
    for (size_t i = 0; i < set.extractor.experts.size(); ++i) {
      ckpt.nets.emplace_back("expert_" + std::to_string(i),
                             set.extractor.experts[i].net);
    }
    ckpt.nets.emplace_back("merge", set.extractor.merge_net);
    save_checkpoint(ckpt, out_dir + "/experts/extractor.ckpt");
  }
  for (const ExpertModel& expert : set.heldout_identity) {
    save_expert(expert, out_dir + "/experts/" + expert.name + ".ckpt");
  }
  for (const ExpertModel& expert : set.utility) {
    save_expert(expert, out_dir + "/experts/" + expert.name + ".ckpt");
  }
  json manifest;
  manifest["config_hash"] = config_hash(config);
  manifest["master_seed"] = config.master_seed;
  manifest["extractor_experts"] = set.extractor.experts.size();
  manifest["heldout_identity"] = set.heldout_identity.size();
  manifest["utility"] = set.utility.size();
  write_text(manifest.dump(2) + "\n", out_dir + "/experts/manifest.json");
}

namespace {

ExpertSet load_experts(const RunConfig& config, const std::string& out_dir) {
  ExpertSet set;
  {
    Checkpoint ckpt = load_checkpoint(out_dir + "/experts/extractor.ckpt");
    for (auto& [name, net] : ckpt.nets) {
      if (name == "merge") {
        set.extractor.merge_net = net;
      } else {
        ExpertModel expert;
        expert.net = net;
        expert.embedding_dim = net.output_dim();
        expert.kind = ExpertKind::Identity;
        expert.frozen = true;
        expert.name = name;
        set.extractor.experts.push_back(std::move(expert));
      }
    }
    set.extractor.n_z = set.extractor.merge_net.output_dim();
  }
  for (int i = 0; i < config.experts.n_heldout_identity; ++i) {
    set.heldout_identity.push_back(load_expert(
        out_dir + "/experts/heldout_id_" + std::to_string(i) + ".ckpt"));
  }
  for (int i = 0; i < config.experts.n_utility; ++i) {
    set.utility.push_back(
        load_expert(out_dir + "/experts/utility_" + std::to_string(i) + ".ckpt"));
  }
  return set;
}

std::string artifact_stamp(const std::string& hash, uint64_t seed) {
  return "# config " + hash + " seed " + std::to_string(seed) + "\n";
}

void write_distance_artifacts(const PrivacyReport& report,
                              const std::string& reports_dir) {
  // Histogram of the three distance populations behind the first expert row.
  const DistanceSets& d = report.distances;
  double hi = 0.0;
  for (const auto* v :
       {&d.original_positive, &d.original_negative, &d.original_anonymized}) {
    for (double x : *v) hi = std::max(hi, x);
  }
  if (hi <= 0.0) hi = 1.0;
  const int n_bins = 40;
  auto pos = histogram(d.original_positive, n_bins, 0.0, hi);
  auto neg = histogram(d.original_negative, n_bins, 0.0, hi);
  auto anon = histogram(d.original_anonymized, n_bins, 0.0, hi);
  std::ostringstream hist;
  hist << artifact_stamp(report.config_hash, report.seed);
  hist << "bin_lo,bin_hi,original_positive,original_negative,original_anonymized\n";
  char line[160];
  for (int i = 0; i < n_bins; ++i) {
    std::snprintf(line, sizeof(line), "%10.6f,%10.6f,%10lld,%10lld,%10lld\n",
                  hi * i / n_bins, hi * (i + 1) / n_bins, pos[i], neg[i], anon[i]);
    hist << line;
  }
  write_text(hist.str(), reports_dir + "/histogram.csv");

  // ROC points for the (original, anonymized) population.
  std::vector<double> genuine = d.original_anonymized;
  std::vector<double> impostor = d.original_negative;
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::ostringstream roc;
  roc << artifact_stamp(report.config_hash, report.seed);
  roc << "threshold,fpr,tpr\n";
  for (int i = 0; i <= 100; ++i) {
    double tau = hi * i / 100.0;
    double fpr = static_cast<double>(std::upper_bound(impostor.begin(),
                                                      impostor.end(), tau) -
                                     impostor.begin()) /
                 impostor.size();
    double tpr = static_cast<double>(std::upper_bound(genuine.begin(),
                                                      genuine.end(), tau) -
                                     genuine.begin()) /
                 genuine.size();
    std::snprintf(line, sizeof(line), "%10.6f,%10.6f,%10.6f\n", tau, fpr, tpr);
    roc << line;
  }
  write_text(roc.str(), reports_dir + "/roc.csv");
}

}  // namespace

void run_train(const RunConfig& config, const std::string& out_dir) {
  World world = load_world(out_dir + "/world.dat");
  ExpertSet experts = load_experts(config, out_dir);
  PipelineBundle bundle = train_bundle(config, world, experts);
  save_bundle(bundle, out_dir + "/bundle");
}

PrivacyReport run_eval(const RunConfig& config, const std::string& bundle_dir,
                       const std::string& out_dir) {
  World world = load_world(out_dir + "/world.dat");
  ExpertSet experts = load_experts(config, out_dir);
  PipelineBundle bundle = load_bundle(bundle_dir);
  PrivacyReport report = evaluate_bundle(config, bundle, world, experts);
  ensure_dir(out_dir + "/reports");
  write_text(report_to_json(report), out_dir + "/reports/deid_report.json");
  write_text(report_to_csv(report), out_dir + "/reports/deid_report.csv");
  write_distance_artifacts(report, out_dir + "/reports");
  return report;
}

InversionMetrics run_attack(const RunConfig& config, const std::string& bundle_dir,
                            const std::string& out_dir) {
  World world = load_world(out_dir + "/world.dat");
  PipelineBundle bundle = load_bundle(bundle_dir);
  InversionMetrics metrics = attack_bundle(config, bundle, world);
  ensure_dir(out_dir + "/reports");
  json j;
  j["config_hash"] = config_hash(config);
  j["master_seed"] = config.master_seed;
  j["fpr_target"] = config.eval.fpr_target;
  j["inverted_tpr_at_fpr"] = metrics.tpr;
  j["inverted_verification_accuracy"] = metrics.accuracy;
  write_text(j.dump(2) + "\n", out_dir + "/reports/inversion_report.json");
  return metrics;
}

LdpAuditResult run_audit(const RunConfig& config, const std::string& out_dir) {
  double scale = config.audit.noise_scale;
  auto mechanism = [scale](double z, Rng& rng) { return z + rng.laplace(scale); };
  double epsilon_claimed =
      scale > 0.0 ? config.audit.delta / scale
                  : std::numeric_limits<double>::infinity();
  if (scale <= 0.0) epsilon_claimed = 0.0;  // deterministic claim must fail
  LdpAuditResult result = ldp_ratio_audit(
      mechanism, 0.0, config.audit.delta, config.audit.n_samples,
      config.audit.n_bins, epsilon_claimed,
      substream_seed(config.master_seed, "audit"), config.audit.slack);
  ensure_dir(out_dir + "/reports");
  json j;
  j["config_hash"] = config_hash(config);
  j["master_seed"] = config.master_seed;
  j["delta"] = config.audit.delta;
  j["noise_scale"] = config.audit.noise_scale;
  j["epsilon_claimed"] = epsilon_claimed;
  j["max_log_ratio"] = std::isfinite(result.max_log_ratio)
                           ? json(result.max_log_ratio)
                           : json("infinity");
  j["bound"] = result.bound;
  j["passed"] = result.passed;
  write_text(j.dump(2) + "\n", out_dir + "/reports/ldp_audit.json");
  return result;
}

std::vector<SweepCell> sweep_over(const RunConfig& config,
                                  const std::string& parameter,
                                  const std::vector<double>& values,
                                  int n_seeds) {
  if (parameter != "beta" && parameter != "alpha") {
    throw Error(ErrorKind::Config, "sweep parameter must be 'beta' or 'alpha'");
  }
  if (values.empty()) throw Error(ErrorKind::Config, "sweep needs at least one value");
  if (n_seeds < 1) throw Error(ErrorKind::Config, "sweep needs at least one seed");

  std::vector<SweepCell> cells(values.size());
  for (size_t v = 0; v < values.size(); ++v) cells[v].value = values[v];

  for (int s = 0; s < n_seeds; ++s) {
    RunConfig seed_config = config;
    seed_config.master_seed =
        substream_seed(config.master_seed, "sweep/seed_" + std::to_string(s));
    seed_config.obfuscator.variant = parameter == "beta" ? "mlp" : "ved";

    World world = build_world(seed_config);
    ExpertSet experts = build_experts(seed_config, world);

    for (size_t v = 0; v < values.size(); ++v) {
      RunConfig cell_config = seed_config;
      if (parameter == "beta") {
        cell_config.obfuscator.beta = values[v];
      } else {
        cell_config.obfuscator.alpha = values[v];
      }
      PipelineBundle bundle = train_bundle(cell_config, world, experts);
      PrivacyReport report = evaluate_bundle(cell_config, bundle, world, experts);
      InversionMetrics inversion = attack_bundle(cell_config, bundle, world);
      cells[v].swapped_tpr += report.average.tpr;
      cells[v].swapped_accuracy += report.average.accuracy;
      cells[v].inverted_tpr += inversion.tpr;
      cells[v].inverted_accuracy += inversion.accuracy;
      cells[v].n_seeds += 1;
    }
  }
  for (SweepCell& cell : cells) {
    cell.swapped_tpr /= cell.n_seeds;
    cell.swapped_accuracy /= cell.n_seeds;
    cell.inverted_tpr /= cell.n_seeds;
    cell.inverted_accuracy /= cell.n_seeds;
  }
  return cells;
}

void run_sweep(const RunConfig& config, const std::string& parameter,
               const std::vector<double>& values, const std::string& out_dir) {
  std::vector<SweepCell> cells =
      sweep_over(config, parameter, values, config.eval.sweep_seeds);
  ensure_dir(out_dir + "/sweep");
  std::ostringstream csv;
  csv << "# config " << config_hash(config) << " seed " << config.master_seed
      << "\n";
  csv << "parameter,value,swapped_tpr,swapped_accuracy,inverted_tpr,"
         "inverted_accuracy,n_seeds\n";
  char line[200];
  for (const SweepCell& cell : cells) {
    std::snprintf(line, sizeof(line), "%-9s,%8.4f,%12.6f,%12.4f,%12.6f,%12.4f,%7d\n",
                  parameter.c_str(), cell.value, cell.swapped_tpr,
                  cell.swapped_accuracy, cell.inverted_tpr,
                  cell.inverted_accuracy, cell.n_seeds);
    csv << line;
  }
  write_text(csv.str(), out_dir + "/sweep/sweep.csv");
}

}  // namespace deid
