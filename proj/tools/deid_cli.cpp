// Command-line front end. Links only the public C API; every subcommand maps
// onto one API call. Errors surface as machine-readable JSON on stderr with
// the library's error class as the exit code.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deid/deid.h"

namespace {

struct SessionDeleter {
  void operator()(deid_session* s) const { deid_session_destroy(s); }
};
using SessionPtr = std::unique_ptr<deid_session, SessionDeleter>;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool has_seed = false;
  bool quiet = false;
};

int fail(deid_session* session, int rc) {
  std::fprintf(stderr, "%s\n", deid_last_error(session));
  return rc;
}

SessionPtr open_session(const GlobalArgs& args, int* rc_out) {
  deid_session* raw = nullptr;
  int rc = args.config_path.empty()
               ? deid_session_create(nullptr, &raw)
               : deid_session_create_from_file(args.config_path.c_str(), &raw);
  SessionPtr session(raw);
  if (rc != DEID_OK) {
    if (session) {
      std::fprintf(stderr, "%s\n", deid_last_error(session.get()));
    } else {
      std::fprintf(stderr, "{\"code\":%d,\"kind\":\"config\",\"message\":\"cannot create session\"}\n", rc);
    }
    *rc_out = rc;
    return nullptr;
  }
  if (args.has_seed) {
    rc = deid_set_seed(session.get(), static_cast<unsigned long long>(args.seed));
    if (rc != DEID_OK) {
      *rc_out = fail(session.get(), rc);
      return nullptr;
    }
  }
  if (!args.out_dir.empty()) {
    rc = deid_set_output_dir(session.get(), args.out_dir.c_str());
    if (rc != DEID_OK) {
      *rc_out = fail(session.get(), rc);
      return nullptr;
    }
  }
  return session;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Utility-preserving identity de-identification toolkit"};
  app.require_subcommand(1);
  app.fallthrough(true);
  app.failure_message(CLI::FailureMessage::simple);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "Run configuration JSON file");
  app.add_option("--out", args.out_dir, "Output directory (overrides config)");
  auto* seed_opt = app.add_option("--seed", args.seed, "Master seed override");
  app.add_flag("--quiet", args.quiet, "Suppress progress output");

  std::string bundle_dir;
  std::string sweep_parameter = "beta";
  std::vector<double> sweep_values;

  app.add_subcommand("world-gen", "Generate the synthetic identity world");
  app.add_subcommand("expert-train",
                     "Train frozen identity/utility experts and the extractor");
  app.add_subcommand("train", "Run phase 1 and phase 2 pipeline training");
  auto* cmd_eval = app.add_subcommand("eval", "Write the privacy/utility report");
  cmd_eval->add_option("--bundle", bundle_dir, "Pipeline bundle directory");
  auto* cmd_attack = app.add_subcommand("attack", "Train and score the inversion attacker");
  cmd_attack->add_option("--bundle", bundle_dir, "Pipeline bundle directory");
  app.add_subcommand("audit-ldp", "Audit the Laplace mechanism's ratio bound");
  auto* cmd_sweep = app.add_subcommand("sweep", "Noise sweep with consolidated CSV");
  cmd_sweep->add_option("--parameter", sweep_parameter, "beta or alpha");
  cmd_sweep->add_option("--values", sweep_values, "Noise scales to sweep")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 64;  // usage error
  }
  args.has_seed = seed_opt->count() > 0;

  int rc = 0;
  SessionPtr session = open_session(args, &rc);
  if (!session) return rc;

  auto note = [&](const char* what) {
    if (!args.quiet) std::printf("%s (config %s)\n", what, deid_config_hash(session.get()));
  };

  if (app.got_subcommand("world-gen")) {
    note("generating world");
    rc = deid_world_gen(session.get());
  } else if (app.got_subcommand("expert-train")) {
    note("training experts");
    rc = deid_expert_train(session.get());
  } else if (app.got_subcommand("train")) {
    note("training pipeline");
    rc = deid_train(session.get());
  } else if (app.got_subcommand("eval")) {
    note("evaluating");
    rc = deid_eval(session.get(), bundle_dir.empty() ? nullptr : bundle_dir.c_str());
    std::string warnings = deid_last_warnings(session.get());
    if (rc == DEID_OK && !args.quiet && warnings != "[]") {
      std::fprintf(stderr, "warnings: %s\n", warnings.c_str());
    }
  } else if (app.got_subcommand("attack")) {
    note("running inversion attack");
    rc = deid_attack(session.get(),
                     bundle_dir.empty() ? nullptr : bundle_dir.c_str());
  } else if (app.got_subcommand("audit-ldp")) {
    note("auditing");
    int passed = 0;
    rc = deid_audit_ldp(session.get(), &passed);
    if (rc == DEID_OK && !args.quiet) {
      std::printf("audit %s\n", passed ? "passed" : "FAILED");
    }
  } else if (app.got_subcommand("sweep")) {
    note("sweeping");
    rc = deid_sweep(session.get(), sweep_parameter.c_str(), sweep_values.data(),
                    sweep_values.size());
  }

  if (rc != DEID_OK) return fail(session.get(), rc);
  return 0;
}
