#include "bundle.hpp"

#include <filesystem>
#include <fstream>

#include "checkpoint.hpp"
#include "error.hpp"
#include "json.hpp"

namespace deid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json weights_to_json(const LossWeights& w) {
  return json{{"lambda_id", w.lambda_id},
              {"lambda_deid", w.lambda_deid},
              {"lambda_mix", w.lambda_mix},
              {"lambda_uti", w.lambda_uti},
              {"lambda_kld", w.lambda_kld},
              {"lambda_gen", w.lambda_gen}};
}

LossWeights weights_from_json(const json& j) {
  LossWeights w;
  w.lambda_id = j.at("lambda_id").get<double>();
  w.lambda_deid = j.at("lambda_deid").get<double>();
  w.lambda_mix = j.at("lambda_mix").get<double>();
  w.lambda_uti = j.at("lambda_uti").get<std::vector<double>>();
  w.lambda_kld = j.at("lambda_kld").get<double>();
  w.lambda_gen = j.at("lambda_gen").get<double>();
  return w;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, "malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

void save_bundle(const PipelineBundle& bundle, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create bundle dir: " + dir);

  {
    Checkpoint ckpt;
    ckpt.model_kind = "swap";
    ckpt.nets.emplace_back("encoder", bundle.swap.encoder);
    ckpt.nets.emplace_back("injector", bundle.swap.injector);
    ckpt.nets.emplace_back("decoder", bundle.swap.decoder);
    save_checkpoint(ckpt, dir + "/swap.ckpt");
  }
  {
    Checkpoint ckpt;
    ckpt.model_kind = "critic";
    for (size_t i = 0; i < bundle.critics.size(); ++i) {
      ckpt.nets.emplace_back("critic_" + std::to_string(i), bundle.critics[i].net);
    }
    save_checkpoint(ckpt, dir + "/critic.ckpt");
  }
  {
    Checkpoint ckpt;
    ckpt.model_kind = "obfuscator";
    if (bundle.obfuscator.variant == ObfVariant::Mlp) {
      ckpt.nets.emplace_back("mlp", bundle.obfuscator.mlp);
    } else if (bundle.obfuscator.variant == ObfVariant::Ved) {
      ckpt.nets.emplace_back("encoder", bundle.obfuscator.ved_encoder);
      ckpt.nets.emplace_back("decoder", bundle.obfuscator.ved_decoder);
    }
    save_checkpoint(ckpt, dir + "/obfuscator.ckpt");

    json sidecar;
    sidecar["variant"] = obf_variant_name(bundle.obfuscator.variant);
    sidecar["n_z"] = bundle.obfuscator.n_z;
    sidecar["beta"] = bundle.obfuscator.beta;
    sidecar["alpha"] = bundle.obfuscator.alpha;
    sidecar["n_v"] = bundle.obfuscator.n_v;
    sidecar["delta_psi"] = bundle.delta_psi;
    if (bundle.noise_scale > 0.0) {
      sidecar["epsilon"] = bundle.delta_psi / bundle.noise_scale;
      sidecar["epsilon_paper_convention"] = bundle.delta_psi * bundle.noise_scale;
    } else {
      // No randomization: no finite LDP budget exists.
      sidecar["epsilon"] = nullptr;
      sidecar["epsilon_paper_convention"] = nullptr;
    }
    sidecar["noise_scale"] = bundle.noise_scale;
    write_json(sidecar, dir + "/obfuscator.json");
  }
  {
    Checkpoint ckpt;
    ckpt.model_kind = "extractor";
    for (size_t i = 0; i < bundle.extractor.experts.size(); ++i) {
      ckpt.nets.emplace_back("expert_" + std::to_string(i),
                             bundle.extractor.experts[i].net);
    }
    ckpt.nets.emplace_back("merge", bundle.extractor.merge_net);
    save_checkpoint(ckpt, dir + "/extractor.ckpt");
  }
  {
    json manifest;
    manifest["format_version"] = 1;
    manifest["master_seed"] = bundle.master_seed;
    manifest["config_hash"] = bundle.config_hash;
    manifest["world_config_hash"] = bundle.world_config_hash;
    manifest["weights"] = weights_to_json(bundle.weights);
    manifest["n_critics"] = bundle.critics.size();
    manifest["n_extractor_experts"] = bundle.extractor.experts.size();
    write_json(manifest, dir + "/manifest.json");
  }
}

PipelineBundle load_bundle(const std::string& dir) {
  PipelineBundle bundle;
  json manifest = read_json(dir + "/manifest.json");
  if (manifest.at("format_version").get<int>() != 1) {
    throw Error(ErrorKind::Version, "unsupported bundle format version");
  }
  bundle.master_seed = manifest.at("master_seed").get<uint64_t>();
  bundle.config_hash = manifest.at("config_hash").get<std::string>();
  bundle.world_config_hash = manifest.at("world_config_hash").get<std::string>();
  bundle.weights = weights_from_json(manifest.at("weights"));

  {
    Checkpoint ckpt = load_checkpoint(dir + "/swap.ckpt");
    bundle.swap.encoder = ckpt.net("encoder");
    bundle.swap.injector = ckpt.net("injector");
    bundle.swap.decoder = ckpt.net("decoder");
  }
  {
    Checkpoint ckpt = load_checkpoint(dir + "/critic.ckpt");
    for (auto& [name, net] : ckpt.nets) bundle.critics.push_back(Critic{net});
  }
  {
    json sidecar = read_json(dir + "/obfuscator.json");
    Checkpoint ckpt = load_checkpoint(dir + "/obfuscator.ckpt");
    ObfVariant variant =
        obf_variant_from_name(sidecar.at("variant").get<std::string>());
    bundle.obfuscator.variant = variant;
    bundle.obfuscator.n_z = sidecar.at("n_z").get<int>();
    bundle.obfuscator.beta = sidecar.at("beta").get<double>();
    bundle.obfuscator.alpha = sidecar.at("alpha").get<double>();
    bundle.obfuscator.n_v = sidecar.at("n_v").get<int>();
    if (variant == ObfVariant::Mlp) {
      bundle.obfuscator.mlp = ckpt.net("mlp");
    } else if (variant == ObfVariant::Ved) {
      bundle.obfuscator.ved_encoder = ckpt.net("encoder");
      bundle.obfuscator.ved_decoder = ckpt.net("decoder");
    }
    bundle.delta_psi = sidecar.at("delta_psi").get<double>();
    bundle.noise_scale = sidecar.at("noise_scale").get<double>();
  }
  {
    Checkpoint ckpt = load_checkpoint(dir + "/extractor.ckpt");
    for (auto& [name, net] : ckpt.nets) {
      if (name == "merge") {
        bundle.extractor.merge_net = net;
      } else {
        ExpertModel expert;
        expert.net = net;
        expert.embedding_dim = net.output_dim();
        expert.kind = ExpertKind::Identity;
        expert.frozen = true;
        expert.name = name;
        bundle.extractor.experts.push_back(std::move(expert));
      }
    }
    bundle.extractor.n_z = bundle.extractor.merge_net.output_dim();
  }
  return bundle;
}

void save_expert(const ExpertModel& expert, const std::string& path) {
  Checkpoint ckpt;
  ckpt.model_kind = expert.kind == ExpertKind::Identity ? "expert_identity"
                                                        : "expert_utility";
  ckpt.nets.emplace_back(expert.name.empty() ? "net" : expert.name, expert.net);
  save_checkpoint(ckpt, path);
}

ExpertModel load_expert(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  ExpertModel expert;
  if (ckpt.model_kind == "expert_identity") {
    expert.kind = ExpertKind::Identity;
  } else if (ckpt.model_kind == "expert_utility") {
    expert.kind = ExpertKind::Utility;
  } else {
    throw Error(ErrorKind::Io, "not an expert checkpoint: " + path);
  }
  expert.name = ckpt.nets.at(0).first;
  expert.net = ckpt.nets.at(0).second;
  expert.embedding_dim = expert.net.output_dim();
  expert.frozen = true;
  return expert;
}

Vec anonymize(const PipelineBundle& bundle, const Vec& x, Rng& rng) {
  Vec z = ensemble_extract(bundle.extractor, x);
  Vec z_tilde = obf_apply(bundle.obfuscator, z, ObfMode::InferNoised, &rng);
  return swap_forward(bundle.swap, x, z_tilde);
}

}  // namespace deid
