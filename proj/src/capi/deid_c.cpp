#include "deid/deid.h"

#include <exception>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/pipeline.hpp"
#include "json.hpp"

using deid::Error;
using deid::RunConfig;

struct deid_session {
  RunConfig config;
  std::string last_error = "{}";
  std::string last_warnings = "[]";
  std::string hash;
};

namespace {

void record_error(deid_session* session, int code, const char* kind,
                  const std::string& message) {
  if (!session) return;
  nlohmann::json j;
  j["code"] = code;
  j["kind"] = kind;
  j["message"] = message;
  session->last_error = j.dump();
}

template <typename Fn>
int guarded(deid_session* session, Fn&& fn) {
  if (!session) return DEID_ERR_CONFIG;
  try {
    fn();
    session->last_error = "{}";
    return DEID_OK;
  } catch (const Error& e) {
    record_error(session, e.code(), e.kind_name(), e.what());
    return e.code();
  } catch (const std::exception& e) {
    record_error(session, DEID_ERR_NUMERIC, "internal", e.what());
    return DEID_ERR_NUMERIC;
  }
}

}  // namespace

extern "C" {

const char* deid_version(void) { return "1.0.0"; }

int deid_session_create(const char* config_json, deid_session** out_session) {
  if (!out_session) return DEID_ERR_CONFIG;
  *out_session = nullptr;
  auto* session = new deid_session();
  int rc = guarded(session, [&]() {
    session->config =
        deid::parse_config_json(config_json ? config_json : "");
  });
  if (rc != DEID_OK) {
    delete session;
    return rc;
  }
  *out_session = session;
  return DEID_OK;
}

int deid_session_create_from_file(const char* config_path,
                                  deid_session** out_session) {
  if (!out_session || !config_path) return DEID_ERR_CONFIG;
  *out_session = nullptr;
  auto* session = new deid_session();
  int rc = guarded(session, [&]() {
    session->config = deid::load_config(config_path);
  });
  if (rc != DEID_OK) {
    delete session;
    return rc;
  }
  *out_session = session;
  return DEID_OK;
}

void deid_session_destroy(deid_session* session) { delete session; }

const char* deid_last_error(const deid_session* session) {
  return session ? session->last_error.c_str() : "{}";
}

const char* deid_last_warnings(const deid_session* session) {
  return session ? session->last_warnings.c_str() : "[]";
}

int deid_set_seed(deid_session* session, unsigned long long master_seed) {
  return guarded(session, [&]() { session->config.master_seed = master_seed; });
}

int deid_set_output_dir(deid_session* session, const char* dir) {
  return guarded(session, [&]() {
    if (!dir || !*dir) throw Error(deid::ErrorKind::Config, "empty output dir");
    session->config.output_dir = dir;
  });
}

const char* deid_config_hash(deid_session* session) {
  if (!session) return "";
  session->hash = deid::config_hash(session->config);
  return session->hash.c_str();
}

int deid_world_gen(deid_session* session) {
  return guarded(session, [&]() {
    deid::run_world_gen(session->config, session->config.output_dir);
  });
}

int deid_expert_train(deid_session* session) {
  return guarded(session, [&]() {
    deid::run_expert_train(session->config, session->config.output_dir);
  });
}

int deid_train(deid_session* session) {
  return guarded(session, [&]() {
    deid::run_train(session->config, session->config.output_dir);
  });
}

int deid_eval(deid_session* session, const char* bundle_dir) {
  return guarded(session, [&]() {
    std::string bundle = bundle_dir && *bundle_dir
                             ? bundle_dir
                             : session->config.output_dir + "/bundle";
    deid::PrivacyReport report =
        deid::run_eval(session->config, bundle, session->config.output_dir);
    session->last_warnings = nlohmann::json(report.warnings).dump();
  });
}

int deid_attack(deid_session* session, const char* bundle_dir) {
  return guarded(session, [&]() {
    std::string bundle = bundle_dir && *bundle_dir
                             ? bundle_dir
                             : session->config.output_dir + "/bundle";
    deid::run_attack(session->config, bundle, session->config.output_dir);
  });
}

int deid_audit_ldp(deid_session* session, int* out_passed) {
  return guarded(session, [&]() {
    deid::LdpAuditResult result =
        deid::run_audit(session->config, session->config.output_dir);
    if (out_passed) *out_passed = result.passed ? 1 : 0;
  });
}

int deid_sweep(deid_session* session, const char* parameter,
               const double* values, size_t n_values) {
  return guarded(session, [&]() {
    if (!parameter || !values || n_values == 0) {
      throw Error(deid::ErrorKind::Config, "sweep needs a parameter and values");
    }
    std::vector<double> vals(values, values + n_values);
    deid::run_sweep(session->config, parameter, vals,
                    session->config.output_dir);
  });
}

}  // extern "C"
