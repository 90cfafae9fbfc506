// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one verdict line per criterion. Exit code is the number of failed
// criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/pipeline.hpp"
#include "fd_check.hpp"

using namespace deid;

namespace {

struct Verdict {
  int id;
  std::string name;
  bool passed;
  double seconds;
  std::string details;
};

std::vector<Verdict> g_verdicts;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void record(int id, const std::string& name, bool passed, double seconds,
            const std::string& details) {
  g_verdicts.push_back({id, name, passed, seconds, details});
  std::printf("[%s] criterion %2d: %s (%s) [%.1fs]\n", passed ? "PASS" : "FAIL",
              id, name.c_str(), details.c_str(), seconds);
  std::fflush(stdout);
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

Vec random_unit_vec(Rng& rng, int dim) {
  Vec v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
  Timer timer;
  Rng rng(20240801);
  double worst = 0.0;
  for (int config = 0; config < 100; ++config) {
    int depth = 1 + static_cast<int>(rng.uniform_index(3));
    std::vector<int> sizes;
    sizes.push_back(2 + static_cast<int>(rng.uniform_index(15)));
    for (int l = 0; l < depth; ++l) {
      sizes.push_back(2 + static_cast<int>(rng.uniform_index(15)));
    }
    int loss_kind = config % 3;
    if (loss_kind == 2 && sizes.back() % 2 != 0) sizes.back() += 1;
    Act final_act = loss_kind == 2 ? Act::Linear
                                   : (config % 2 ? Act::Tanh : Act::Sigmoid);
    DenseNet net = init_network(sizes, Act::Tanh, final_act, rng.next_u64());
    Vec x(sizes.front());
    for (double& v : x) v = rng.normal();
    Vec target(sizes.back());
    for (double& v : target) v = rng.normal() * 0.7;

    // Loss families: L1 to a target, cosine to a target, KLD of split halves.
    auto eval = [&]() -> double {
      Vec out = forward(net, x);
      if (loss_kind == 0) return l1_distance(out, target);
      if (loss_kind == 1) return 1.0 - cosine(out, target);
      Vec mu(out.begin(), out.begin() + out.size() / 2);
      Vec logvar(out.begin() + out.size() / 2, out.end());
      return loss_kld(mu, logvar);
    };

    ForwardCache cache;
    Vec out = forward(net, x, &cache);
    Vec dout(out.size());
    if (loss_kind == 0) {
      for (size_t i = 0; i < out.size(); ++i) {
        double d = out[i] - target[i];
        dout[i] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      }
    } else if (loss_kind == 1) {
      dout = cosine_backward_v(target, out, -1.0);
    } else {
      size_t half = out.size() / 2;
      for (size_t i = 0; i < half; ++i) {
        dout[i] = out[i];  // d/dmu
        dout[half + i] = 0.5 * (std::exp(out[half + i]) - 1.0);
      }
    }
    NetGrads grads(net);
    backward(net, cache, dout, &grads);

    std::vector<double> analytic = fd::grad_values(grads);
    std::vector<double*> ptrs = fd::param_ptrs(net);
    for (size_t i = 0; i < ptrs.size(); ++i) {
      double fd_grad = fd::central_difference(eval, ptrs[i]);
      worst = std::max(worst, fd::rel_error(analytic[i], fd_grad));
    }
  }
  record(1, "gradient suite, analytic vs central differences", worst < 1e-4,
         timer.seconds(), fmt("max rel err %.2e over 100 configurations", worst));
}

// ---------------------------------------------------------------- criterion 2

double brute_tpr(const ScoreSet& s, double target) {
  std::vector<double> pool;
  pool.insert(pool.end(), s.genuine.begin(), s.genuine.end());
  pool.insert(pool.end(), s.impostor.begin(), s.impostor.end());
  bool found = false;
  double best_tau = 0.0;
  for (double tau : pool) {
    size_t fp = 0;
    for (double v : s.impostor) {
      if (v <= tau) ++fp;
    }
    if (static_cast<double>(fp) / s.impostor.size() <= target &&
        (!found || tau > best_tau)) {
      found = true;
      best_tau = tau;
    }
  }
  if (!found) return 0.0;
  size_t tp = 0;
  for (double v : s.genuine) {
    if (v <= best_tau) ++tp;
  }
  return static_cast<double>(tp) / s.genuine.size();
}

double brute_accuracy(const ScoreSet& s) {
  std::vector<double> pool;
  pool.insert(pool.end(), s.genuine.begin(), s.genuine.end());
  pool.insert(pool.end(), s.impostor.begin(), s.impostor.end());
  double best = -1.0;
  for (double tau : pool) {
    size_t tp = 0, tn = 0;
    for (double v : s.genuine) {
      if (v <= tau) ++tp;
    }
    for (double v : s.impostor) {
      if (v > tau) ++tn;
    }
    best = std::max(best, static_cast<double>(tp + tn) /
                              (s.genuine.size() + s.impostor.size()));
  }
  return best * 100.0;
}

void criterion_metric_oracle() {
  Timer timer;
  Rng rng(77001);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    size_t ng, ni;
    if (trial < 2) {
      ng = 5000;
      ni = 5000;  // the <= 1e4 pooled-size cases
    } else {
      ng = 2 + rng.uniform_index(500);
      ni = 2 + rng.uniform_index(500);
    }
    ScoreSet s;
    for (size_t i = 0; i < ng; ++i) s.genuine.push_back(std::abs(rng.normal()));
    for (size_t i = 0; i < ni; ++i) {
      s.impostor.push_back(std::abs(rng.normal()) + (trial % 3 == 0 ? 0.8 : 0.0));
    }
    if (trial % 2 == 0 && ng > 2 && ni > 2) {
      s.impostor[0] = s.genuine[0];  // exact cross-list ties
      s.impostor[1] = s.genuine[1];
    }
    double target = 0.0005 + 0.4 * rng.uniform01();
    if (tpr_at_fpr(s, target) != brute_tpr(s, target)) ++mismatches;
    if (verification_accuracy(s) != brute_accuracy(s)) ++mismatches;
  }
  record(2, "metric oracle equivalence on 200 random score sets", mismatches == 0,
         timer.seconds(), fmt("%d mismatches against brute-force scans", mismatches));
}

// ---------------------------------------------------------------- criterion 3

void criterion_closed_forms() {
  Timer timer;
  Rng rng(5150);
  Vec z = random_unit_vec(rng, 64);
  bool ok = true;
  std::string detail;
  if (std::abs(loss_deid(z, psi_opp(z)) - 0.0) > 1e-12) {
    ok = false;
    detail += "L_deid(z,-z) != 0; ";
  }
  if (std::abs(loss_deid(z, z) - 2.0) > 1e-12) {
    ok = false;
    detail += "L_deid(z,z) != 2; ";
  }
  if (std::abs(loss_kld({0.0}, {0.0})) > 1e-15) {
    ok = false;
    detail += "L_kld(0,0) != 0; ";
  }
  if (std::abs(loss_kld({1.0}, {0.0}) - 0.5) > 1e-15) {
    ok = false;
    detail += "L_kld([1],[0]) != 0.5; ";
  }
  double sum = 0.0, sum2 = 0.0;
  const int n = 1000000;
  Rng lap_rng(424242);
  for (int i = 0; i < n; ++i) {
    double v = lap_rng.laplace(1.5);
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  if (std::abs(var - 4.5) > 0.02 * 4.5) {
    ok = false;
    detail += fmt("Laplace variance %.4f outside 4.5 +- 2%%; ", var);
  }
  if (ok) detail = fmt("all anchors exact; Laplace(1.5) variance %.4f", var);
  record(3, "closed-form loss and noise anchors", ok, timer.seconds(), detail);
}

// ---------------------------------------------------------------- criterion 4

void criterion_sphere_argmax() {
  Timer timer;
  Rng rng(31337);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vec z = random_unit_vec(rng, 64);
    double opp = l2_distance(z, psi_opp(z));
    for (int c = 0; c < 1000; ++c) {
      if (l2_distance(z, random_unit_vec(rng, 64)) > opp + 1e-12) ++violations;
    }
  }
  record(4, "opposite point maximizes sphere distance", violations == 0,
         timer.seconds(), fmt("%d violations over 10^6 candidates", violations));
}

// ---------------------------------------------------------------- criterion 5

void criterion_ldp_audit() {
  Timer timer;
  auto laplace_mech = [](double z, Rng& rng) { return z + rng.laplace(1.0); };
  LdpAuditResult pass_result =
      ldp_ratio_audit(laplace_mech, 0.0, 1.0, 1000000, 200, 1.0, 90210);
  auto deterministic_mech = [](double z, Rng&) { return z; };
  LdpAuditResult fail_result =
      ldp_ratio_audit(deterministic_mech, 0.0, 1.0, 1000000, 200, 1.0, 90210);
  bool ok = pass_result.passed && !fail_result.passed;
  record(5, "LDP ratio audit accepts Laplace, rejects deterministic", ok,
         timer.seconds(),
         fmt("laplace max log-ratio %.3f <= 1.15; deterministic ratio %s",
             pass_result.max_log_ratio,
             std::isinf(fail_result.max_log_ratio) ? "infinite" : "finite"));
}

// ------------------------------------------------------- criteria 6 through 9

struct SeedMetrics {
  double expert_min_accuracy = 100.0;
  double ved_accuracy = 0.0;
  double ved_tpr = 0.0;
  double ved_drift = 0.0;
  double uti0_drift = 0.0;
  double opp_inv = 0.0;
  double ved_inv[3] = {0, 0, 0};  // alpha 1, 2, 3
  double mlp_inv[3] = {0, 0, 0};  // beta 0, 0.5, 0.9
  double t_experts = 0.0, t_ved = 0.0, t_sweeps = 0.0, t_uti = 0.0;
};

double mean_drift(const PrivacyReport& report) {
  double total = 0.0;
  for (const UtilityDriftRow& row : report.utility_drift) {
    total += row.prediction_mae;
  }
  return total / report.utility_drift.size();
}

SeedMetrics run_seed(uint64_t master_seed) {
  SeedMetrics metrics;
  RunConfig config;
  config.master_seed = master_seed;

  Timer t_experts;
  World world = build_world(config);
  ExpertSet experts = build_experts(config, world);
  for (const ExpertModel& expert : experts.heldout_identity) {
    metrics.expert_min_accuracy =
        std::min(metrics.expert_min_accuracy,
                 expert_verification_accuracy(
                     expert, world, substream_seed(master_seed, "gate_check")));
  }
  Phase1State phase1 = run_phase1(config, world, experts);
  metrics.t_experts = t_experts.seconds();

  // Default pipeline: Ved at alpha = 1. Alpha only enters at inference, so
  // one trained bundle serves the whole alpha sweep.
  Timer t_ved;
  PipelineBundle ved_bundle = finish_bundle(config, world, experts, phase1);
  {
    PrivacyReport report = evaluate_bundle(config, ved_bundle, world, experts);
    metrics.ved_accuracy = report.average.accuracy;
    metrics.ved_tpr = report.average.tpr;
    metrics.ved_drift = mean_drift(report);
    metrics.ved_inv[0] = attack_bundle(config, ved_bundle, world).tpr;
  }
  metrics.t_ved = t_ved.seconds();

  Timer t_sweeps;
  const double alphas[] = {2.0, 3.0};
  for (int i = 0; i < 2; ++i) {
    PipelineBundle alpha_bundle = ved_bundle;
    alpha_bundle.obfuscator.alpha = alphas[i];
    alpha_bundle.noise_scale = alphas[i];
    RunConfig alpha_config = config;
    alpha_config.obfuscator.alpha = alphas[i];
    metrics.ved_inv[i + 1] = attack_bundle(alpha_config, alpha_bundle, world).tpr;
  }
  {
    RunConfig opp_config = config;
    opp_config.obfuscator.variant = "opp";
    PipelineBundle opp_bundle = finish_bundle(opp_config, world, experts, phase1);
    metrics.opp_inv = attack_bundle(opp_config, opp_bundle, world).tpr;
  }
  const double betas[] = {0.0, 0.5, 0.9};
  for (int i = 0; i < 3; ++i) {
    RunConfig mlp_config = config;
    mlp_config.obfuscator.variant = "mlp";
    mlp_config.obfuscator.beta = betas[i];
    PipelineBundle mlp_bundle = finish_bundle(mlp_config, world, experts, phase1);
    metrics.mlp_inv[i] = attack_bundle(mlp_config, mlp_bundle, world).tpr;
  }
  metrics.t_sweeps = t_sweeps.seconds();

  Timer t_uti;
  {
    RunConfig uti0_config = config;
    uti0_config.weights.lambda_uti = {0.0, 0.0};
    PipelineBundle uti0_bundle = finish_bundle(uti0_config, world, experts, phase1);
    PrivacyReport report = evaluate_bundle(uti0_config, uti0_bundle, world, experts);
    metrics.uti0_drift = mean_drift(report);
  }
  metrics.t_uti = t_uti.seconds();
  return metrics;
}

void pipeline_criteria() {
  const uint64_t seeds[] = {1001, 1002, 1003};
  SeedMetrics mean;
  double expert_time = 0, ved_time = 0, sweep_time = 0, uti_time = 0;
  double min_expert_acc = 100.0;
  for (uint64_t seed : seeds) {
    SeedMetrics m = run_seed(seed);
    mean.ved_accuracy += m.ved_accuracy / 3.0;
    mean.ved_tpr += m.ved_tpr / 3.0;
    mean.ved_drift += m.ved_drift / 3.0;
    mean.uti0_drift += m.uti0_drift / 3.0;
    mean.opp_inv += m.opp_inv / 3.0;
    for (int i = 0; i < 3; ++i) {
      mean.ved_inv[i] += m.ved_inv[i] / 3.0;
      mean.mlp_inv[i] += m.mlp_inv[i] / 3.0;
    }
    min_expert_acc = std::min(min_expert_acc, m.expert_min_accuracy);
    expert_time += m.t_experts;
    ved_time += m.t_ved;
    sweep_time += m.t_sweeps;
    uti_time += m.t_uti;
  }

  record(6, "identity experts reach 95% held-out verification",
         min_expert_acc >= 95.0, expert_time,
         fmt("min held-out accuracy %.2f%% across 3 seeds", min_expert_acc));

  bool c7 = mean.ved_accuracy >= 48.0 && mean.ved_accuracy <= 55.0 &&
            mean.ved_tpr <= 0.02;
  record(7, "default Ved pipeline de-identifies to chance level", c7, ved_time,
         fmt("3-seed mean accuracy %.2f%% in [48,55], TPR@1e-3 %.4f <= 0.02",
             mean.ved_accuracy, mean.ved_tpr));

  bool ratio_ok = mean.opp_inv >= 10.0 * mean.ved_inv[0];
  bool alpha_ok = mean.ved_inv[0] >= mean.ved_inv[1] - 1e-12 &&
                  mean.ved_inv[1] >= mean.ved_inv[2] - 1e-12;
  bool beta_ok = mean.mlp_inv[0] >= mean.mlp_inv[1] - 1e-12 &&
                 mean.mlp_inv[1] >= mean.mlp_inv[2] - 1e-12;
  record(8, "inversion trends: opp/ved ratio and noise monotonicity",
         ratio_ok && alpha_ok && beta_ok, sweep_time,
         fmt("opp %.3f vs ved %.3f (%.1fx); alpha {%.3f,%.3f,%.3f}; beta "
             "{%.3f,%.3f,%.3f}",
             mean.opp_inv, mean.ved_inv[0],
             mean.ved_inv[0] > 0 ? mean.opp_inv / mean.ved_inv[0] : 1e9,
             mean.ved_inv[0], mean.ved_inv[1], mean.ved_inv[2], mean.mlp_inv[0],
             mean.mlp_inv[1], mean.mlp_inv[2]));

  record(9, "utility supervision reduces prediction drift",
         mean.ved_drift < mean.uti0_drift, uti_time,
         fmt("3-seed mean MAE %.4f with lambda_uti=2 vs %.4f with 0",
             mean.ved_drift, mean.uti0_drift));
}

// --------------------------------------------------------------- criterion 10

void criterion_reproducibility() {
  Timer timer;
  namespace fs = std::filesystem;
  RunConfig config;
  config.world.n_identities = 40;
  config.world.samples_per_identity = 6;
  config.experts.epochs = 10;
  config.extractor.merge_pretrain_epochs = 4;
  config.phases.obf_pretrain_steps = 200;
  config.phases.phase1_steps = 200;
  config.phases.phase2_steps = 300;
  config.eval.n_impostor = 2000;
  config.eval.attacker_epochs = 5;
  config.master_seed = 31415;

  auto read_file = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };

  std::string base = "/tmp/deid_acceptance_repro";
  fs::remove_all(base);
  std::vector<std::string> dirs = {base + "/a", base + "/b"};
  for (const std::string& dir : dirs) {
    run_world_gen(config, dir);
    run_expert_train(config, dir);
    run_train(config, dir);
    run_eval(config, dir + "/bundle", dir);
  }

  bool ok = true;
  std::string detail;
  for (const char* artifact :
       {"/reports/deid_report.json", "/reports/deid_report.csv",
        "/bundle/swap.ckpt", "/bundle/obfuscator.ckpt", "/world.dat"}) {
    std::string a = read_file(dirs[0] + artifact);
    std::string b = read_file(dirs[1] + artifact);
    if (a.empty() || a != b) {
      ok = false;
      detail += fmt("%s differs; ", artifact);
    }
  }

  // Checkpoint round trips are bit-exact: load + re-save reproduces the file.
  {
    Checkpoint ckpt = load_checkpoint(dirs[0] + "/bundle/swap.ckpt");
    save_checkpoint(ckpt, base + "/resaved.ckpt");
    if (read_file(dirs[0] + "/bundle/swap.ckpt") != read_file(base + "/resaved.ckpt")) {
      ok = false;
      detail += "checkpoint round trip not bit-exact; ";
    }
  }
  fs::remove_all(base);
  if (ok) detail = "reports, world, and checkpoints byte-identical across reruns";
  record(10, "identical config hash gives byte-identical outputs", ok,
         timer.seconds(), detail);
}

}  // namespace

int main() {
  Timer total;
  std::printf("acceptance suite (library %s)\n", "1.0.0");
  criterion_gradients();
  criterion_metric_oracle();
  criterion_closed_forms();
  criterion_sphere_argmax();
  criterion_ldp_audit();
  pipeline_criteria();
  criterion_reproducibility();

  int failed = 0;
  for (const Verdict& v : g_verdicts) {
    if (!v.passed) ++failed;
  }
  std::printf("%d/%zu criteria passed in %.1fs\n", (int)g_verdicts.size() - failed,
              g_verdicts.size(), total.seconds());
  return failed;
}
