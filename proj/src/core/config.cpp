#include "config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>

#include "error.hpp"
#include "json.hpp"

namespace deid {

using nlohmann::json;

namespace {

// Tracks which keys of one JSON object were consumed; leftovers are typos.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw Error(ErrorKind::Config, path_ + " must be a JSON object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    consumed_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::Config, "bad value for " + path_ + "." + key);
    }
  }

  bool has(const char* key) {
    consumed_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const char* key) {
    consumed_.insert(key);
    return j_.at(key);
  }

  ~StrictObject() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!consumed_.count(it.key())) {
        throw Error(ErrorKind::Config, "unknown config key: " + path_ + "." + it.key());
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig c;
  StrictObject root(j, "config");
  if (root.has("world")) {
    StrictObject o(root.raw("world"), "world");
    o.get("n_id_latent", c.world.n_id_latent);
    o.get("n_util_latent", c.world.n_util_latent);
    o.get("n_feature", c.world.n_feature);
    o.get("n_identities", c.world.n_identities);
    o.get("samples_per_identity", c.world.samples_per_identity);
    o.get("within_identity_noise", c.world.within_identity_noise);
    o.get("seed", c.world.seed);
  }
  if (root.has("experts")) {
    StrictObject o(root.raw("experts"), "experts");
    o.get("n_heldout_identity", c.experts.n_heldout_identity);
    o.get("n_utility", c.experts.n_utility);
    o.get("identity_embedding_dim", c.experts.identity_embedding_dim);
    o.get("identity_hidden", c.experts.identity_hidden);
    o.get("utility_embedding_dim", c.experts.utility_embedding_dim);
    o.get("utility_hidden", c.experts.utility_hidden);
    o.get("epochs", c.experts.epochs);
    o.get("learning_rate", c.experts.learning_rate);
    o.get("quality_gate", c.experts.quality_gate);
  }
  if (root.has("extractor")) {
    StrictObject o(root.raw("extractor"), "extractor");
    o.get("n_experts", c.extractor.n_experts);
    o.get("n_z", c.extractor.n_z);
    o.get("merge_hidden", c.extractor.merge_hidden);
    o.get("merge_pretrain_epochs", c.extractor.merge_pretrain_epochs);
  }
  if (root.has("obfuscator")) {
    StrictObject o(root.raw("obfuscator"), "obfuscator");
    o.get("variant", c.obfuscator.variant);
    o.get("beta", c.obfuscator.beta);
    o.get("alpha", c.obfuscator.alpha);
    o.get("n_v", c.obfuscator.n_v);
    o.get("mlp_hidden", c.obfuscator.mlp_hidden);
    o.get("ved_encoder_hidden", c.obfuscator.ved_encoder_hidden);
    o.get("ved_decoder_hidden", c.obfuscator.ved_decoder_hidden);
    o.get("sensitivity_pairs", c.obfuscator.sensitivity_pairs);
    obf_variant_from_name(c.obfuscator.variant);  // validate early
  }
  if (root.has("swap")) {
    StrictObject o(root.raw("swap"), "swap");
    o.get("nu_dim", c.swap.nu_dim);
    o.get("code_dim", c.swap.code_dim);
    o.get("encoder_hidden", c.swap.encoder_hidden);
    o.get("injector_hidden", c.swap.injector_hidden);
    o.get("decoder_hidden", c.swap.decoder_hidden);
    o.get("k_d", c.swap.k_d);
    o.get("critic_hidden", c.swap.critic_hidden);
  }
  if (root.has("weights")) {
    StrictObject o(root.raw("weights"), "weights");
    o.get("lambda_id", c.weights.lambda_id);
    o.get("lambda_deid", c.weights.lambda_deid);
    o.get("lambda_mix", c.weights.lambda_mix);
    o.get("lambda_uti", c.weights.lambda_uti);
    o.get("lambda_kld", c.weights.lambda_kld);
    o.get("lambda_gen", c.weights.lambda_gen);
    c.weights.validate();
  }
  if (root.has("phases")) {
    StrictObject o(root.raw("phases"), "phases");
    o.get("obf_pretrain_steps", c.phases.obf_pretrain_steps);
    o.get("phase1_steps", c.phases.phase1_steps);
    o.get("phase2_steps", c.phases.phase2_steps);
    o.get("batch_size", c.phases.batch_size);
    o.get("learning_rate", c.phases.learning_rate);
    o.get("train_merge_in_phase1", c.phases.train_merge_in_phase1);
  }
  if (root.has("eval")) {
    StrictObject o(root.raw("eval"), "eval");
    o.get("fpr_target", c.eval.fpr_target);
    o.get("n_impostor", c.eval.n_impostor);
    o.get("anonymize_draws", c.eval.anonymize_draws);
    o.get("attacker_epochs", c.eval.attacker_epochs);
    o.get("attacker_learning_rate", c.eval.attacker_learning_rate);
    o.get("attacker_train_draws", c.eval.attacker_train_draws);
    o.get("attacker_eval_draws", c.eval.attacker_eval_draws);
    o.get("sweep_seeds", c.eval.sweep_seeds);
  }
  if (root.has("audit")) {
    StrictObject o(root.raw("audit"), "audit");
    o.get("delta", c.audit.delta);
    o.get("noise_scale", c.audit.noise_scale);
    o.get("n_samples", c.audit.n_samples);
    o.get("n_bins", c.audit.n_bins);
    o.get("slack", c.audit.slack);
  }
  root.get("output_dir", c.output_dir);
  root.get("master_seed", c.master_seed);

  c.world.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["world"] = {{"n_id_latent", c.world.n_id_latent},
                {"n_util_latent", c.world.n_util_latent},
                {"n_feature", c.world.n_feature},
                {"n_identities", c.world.n_identities},
                {"samples_per_identity", c.world.samples_per_identity},
                {"within_identity_noise", c.world.within_identity_noise},
                {"seed", c.world.seed}};
  j["experts"] = {{"n_heldout_identity", c.experts.n_heldout_identity},
                  {"n_utility", c.experts.n_utility},
                  {"identity_embedding_dim", c.experts.identity_embedding_dim},
                  {"identity_hidden", c.experts.identity_hidden},
                  {"utility_embedding_dim", c.experts.utility_embedding_dim},
                  {"utility_hidden", c.experts.utility_hidden},
                  {"epochs", c.experts.epochs},
                  {"learning_rate", c.experts.learning_rate},
                  {"quality_gate", c.experts.quality_gate}};
  j["extractor"] = {{"n_experts", c.extractor.n_experts},
                    {"n_z", c.extractor.n_z},
                    {"merge_hidden", c.extractor.merge_hidden},
                    {"merge_pretrain_epochs", c.extractor.merge_pretrain_epochs}};
  j["obfuscator"] = {{"variant", c.obfuscator.variant},
                     {"beta", c.obfuscator.beta},
                     {"alpha", c.obfuscator.alpha},
                     {"n_v", c.obfuscator.n_v},
                     {"mlp_hidden", c.obfuscator.mlp_hidden},
                     {"ved_encoder_hidden", c.obfuscator.ved_encoder_hidden},
                     {"ved_decoder_hidden", c.obfuscator.ved_decoder_hidden},
                     {"sensitivity_pairs", c.obfuscator.sensitivity_pairs}};
  j["swap"] = {{"nu_dim", c.swap.nu_dim},
               {"code_dim", c.swap.code_dim},
               {"encoder_hidden", c.swap.encoder_hidden},
               {"injector_hidden", c.swap.injector_hidden},
               {"decoder_hidden", c.swap.decoder_hidden},
               {"k_d", c.swap.k_d},
               {"critic_hidden", c.swap.critic_hidden}};
  j["weights"] = {{"lambda_id", c.weights.lambda_id},
                  {"lambda_deid", c.weights.lambda_deid},
                  {"lambda_mix", c.weights.lambda_mix},
                  {"lambda_uti", c.weights.lambda_uti},
                  {"lambda_kld", c.weights.lambda_kld},
                  {"lambda_gen", c.weights.lambda_gen}};
  j["phases"] = {{"obf_pretrain_steps", c.phases.obf_pretrain_steps},
                 {"phase1_steps", c.phases.phase1_steps},
                 {"phase2_steps", c.phases.phase2_steps},
                 {"batch_size", c.phases.batch_size},
                 {"learning_rate", c.phases.learning_rate},
                 {"train_merge_in_phase1", c.phases.train_merge_in_phase1}};
  j["eval"] = {{"fpr_target", c.eval.fpr_target},
               {"n_impostor", c.eval.n_impostor},
               {"anonymize_draws", c.eval.anonymize_draws},
               {"attacker_epochs", c.eval.attacker_epochs},
               {"attacker_learning_rate", c.eval.attacker_learning_rate},
               {"attacker_train_draws", c.eval.attacker_train_draws},
               {"attacker_eval_draws", c.eval.attacker_eval_draws},
               {"sweep_seeds", c.eval.sweep_seeds}};
  j["audit"] = {{"delta", c.audit.delta},
                {"noise_scale", c.audit.noise_scale},
                {"n_samples", c.audit.n_samples},
                {"n_bins", c.audit.n_bins},
                {"slack", c.audit.slack}};
  j["output_dir"] = c.output_dir;
  j["master_seed"] = c.master_seed;
  return j.dump(2) + "\n";
}

namespace {

std::string fnv_hex(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

}  // namespace

std::string config_hash(const RunConfig& config) {
  // output_dir is a workspace detail, not an experiment parameter.
  RunConfig canonical = config;
  canonical.output_dir = "";
  return fnv_hex(config_to_json(canonical));
}

std::string world_config_hash(const WorldConfig& c) {
  json j = {{"n_id_latent", c.n_id_latent},
            {"n_util_latent", c.n_util_latent},
            {"n_feature", c.n_feature},
            {"n_identities", c.n_identities},
            {"samples_per_identity", c.samples_per_identity},
            {"within_identity_noise", c.within_identity_noise},
            {"seed", c.seed}};
  return fnv_hex(j.dump());
}

}  // namespace deid
