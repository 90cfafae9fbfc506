#include "world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "checkpoint.hpp"
#include "error.hpp"
#include "metrics.hpp"

namespace deid {

void WorldConfig::validate() const {
  if (n_id_latent < 1 || n_util_latent < 1 || n_feature < 1 ||
      n_identities < 1 || samples_per_identity < 1) {
    throw Error(ErrorKind::Config, "world dimensions must be positive");
  }
  if (n_feature < n_id_latent + n_util_latent) {
    throw Error(ErrorKind::Config,
                "n_feature must be >= n_id_latent + n_util_latent");
  }
  if (within_identity_noise < 0.0) {
    throw Error(ErrorKind::Config, "within_identity_noise must be nonnegative");
  }
}

std::vector<size_t> World::train_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (is_train_identity(samples[i].identity_label)) out.push_back(i);
  }
  return out;
}

std::vector<size_t> World::eval_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!is_train_identity(samples[i].identity_label)) out.push_back(i);
  }
  return out;
}

namespace {

Vec random_unit(Rng& rng, int dim) {
  Vec v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

}  // namespace

World generate_world(const WorldConfig& config) {
  config.validate();
  World world;
  world.config = config;
  world.n_train_identities =
      std::max(1, static_cast<int>(config.n_identities * 0.8));
  if (world.n_train_identities == config.n_identities && config.n_identities > 1) {
    world.n_train_identities = config.n_identities - 1;
  }

  Rng mix_rng = substream(config.seed, "world/mixing_net");
  int latent = config.n_id_latent + config.n_util_latent;
  world.mixing_net =
      init_network({latent, config.n_feature, config.n_feature}, Act::Tanh,
                   Act::Linear, mix_rng.next_u64());

  Rng id_rng = substream(config.seed, "world/id_latents");
  Rng sample_rng = substream(config.seed, "world/samples");
  world.samples.reserve(static_cast<size_t>(config.n_identities) *
                        config.samples_per_identity);
  for (int id = 0; id < config.n_identities; ++id) {
    Vec id_latent = random_unit(id_rng, config.n_id_latent);
    for (int s = 0; s < config.samples_per_identity; ++s) {
      Sample sample;
      sample.identity_label = id;
      sample.id_latent_truth = id_latent;
      if (config.within_identity_noise > 0.0) {
        for (double& x : sample.id_latent_truth) {
          x += config.within_identity_noise * sample_rng.normal();
        }
        sample.id_latent_truth = normalized(sample.id_latent_truth);
      }
      sample.util_latent_truth.resize(config.n_util_latent);
      for (double& x : sample.util_latent_truth) x = sample_rng.normal();
      sample.feature = forward(
          world.mixing_net,
          concat(sample.id_latent_truth, sample.util_latent_truth));
      world.samples.push_back(std::move(sample));
    }
  }
  return world;
}

void save_world(const World& world, const std::string& path,
                const std::string& run_config_hash, uint64_t master_seed) {
  std::ostringstream body;
  const WorldConfig& c = world.config;
  body << "deidworld 1\n";
  body << "run " << (run_config_hash.empty() ? "-" : run_config_hash) << " "
       << master_seed << "\n";
  body << "config " << c.n_id_latent << " " << c.n_util_latent << " "
       << c.n_feature << " " << c.n_identities << " " << c.samples_per_identity
       << " " << format_double(c.within_identity_noise) << " " << c.seed << "\n";
  body << "train_identities " << world.n_train_identities << "\n";
  write_net_block(body, "mixing", world.mixing_net);
  body << "samples " << world.samples.size() << "\n";
  for (const Sample& s : world.samples) {
    body << s.identity_label;
    for (double v : s.feature) body << " " << format_double(v);
    for (double v : s.id_latent_truth) body << " " << format_double(v);
    for (double v : s.util_latent_truth) body << " " << format_double(v);
    body << "\n";
  }
  write_checksummed(body.str(), path);
}

World load_world(const std::string& path) {
  std::string payload = read_checksummed(path, "deidworld");
  std::istringstream is(payload);
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (version != 1) {
    throw Error(ErrorKind::Version, "unsupported world file version");
  }
  World world;
  WorldConfig& c = world.config;
  std::string run_hash;
  uint64_t run_seed = 0;
  is >> tag >> run_hash >> run_seed;
  if (tag != "run") throw Error(ErrorKind::Truncated, "world file: run header missing");
  is >> tag;
  if (tag != "config") throw Error(ErrorKind::Truncated, "world file: config missing");
  is >> c.n_id_latent >> c.n_util_latent >> c.n_feature >> c.n_identities >>
      c.samples_per_identity >> c.within_identity_noise >> c.seed;
  c.validate();
  is >> tag >> world.n_train_identities;
  if (tag != "train_identities") {
    throw Error(ErrorKind::Truncated, "world file: split header missing");
  }
  world.mixing_net = read_net_block(is).second;
  size_t n = 0;
  is >> tag >> n;
  if (tag != "samples") throw Error(ErrorKind::Truncated, "world file: samples missing");
  world.samples.resize(n);
  for (Sample& s : world.samples) {
    if (!(is >> s.identity_label)) {
      throw Error(ErrorKind::Truncated, "world file: truncated samples");
    }
    s.feature.resize(c.n_feature);
    s.id_latent_truth.resize(c.n_id_latent);
    s.util_latent_truth.resize(c.n_util_latent);
    for (double& v : s.feature) is >> v;
    for (double& v : s.id_latent_truth) is >> v;
    for (double& v : s.util_latent_truth) is >> v;
    if (!is) throw Error(ErrorKind::Truncated, "world file: truncated samples");
  }
  return world;
}

namespace {

// Per-expert fixed random projection of the hidden latent; distinct seeds
// give genuinely distinct experts over the same world.
Matrix target_projection(int out_dim, int in_dim, uint64_t seed) {
  Rng rng(seed);
  Matrix p(out_dim, in_dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : p.a) v = rng.normal() * scale;
  return p;
}

Vec project(const Matrix& p, const Vec& x) {
  Vec out(p.rows, 0.0);
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) out[r] += p.at(r, c) * x[c];
  }
  return out;
}

}  // namespace

ExpertModel train_expert(const World& world, ExpertKind kind, int embedding_dim,
                         const std::vector<int>& hidden_sizes, uint64_t seed,
                         const ExpertTrainOptions& options) {
  if (embedding_dim < 1) {
    throw Error(ErrorKind::Config, "expert embedding_dim must be positive");
  }
  std::vector<size_t> train = world.train_indices();
  if (train.empty()) {
    throw Error(ErrorKind::Config, "world has no train split");
  }

  int latent_dim = kind == ExpertKind::Identity ? world.config.n_id_latent
                                                : world.config.n_util_latent;
  Matrix proj = target_projection(embedding_dim, latent_dim,
                                  substream_seed(seed, "expert/target_proj"));

  std::vector<Vec> targets(world.samples.size());
  for (size_t i = 0; i < world.samples.size(); ++i) {
    const Sample& s = world.samples[i];
    if (kind == ExpertKind::Identity) {
      targets[i] = normalized(project(proj, s.id_latent_truth));
    } else {
      targets[i] = project(proj, s.util_latent_truth);
      for (double& v : targets[i]) v = std::tanh(v);
    }
  }

  std::vector<int> sizes;
  sizes.push_back(world.config.n_feature);
  sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
  sizes.push_back(embedding_dim);
  ExpertModel expert;
  expert.kind = kind;
  expert.embedding_dim = embedding_dim;
  expert.net = init_network(sizes, Act::Tanh, Act::Tanh,
                            substream_seed(seed, "expert/init"));

  AdamState adam(expert.net, options.learning_rate, options.adam_beta1,
                 options.adam_beta2);
  NetGrads grads(expert.net);
  Rng shuffle_rng = substream(seed, "expert/shuffle");
  std::vector<size_t> order = train;
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
        const Sample& s = world.samples[order[k]];
        ForwardCache cache;
        Vec out = forward(expert.net, s.feature, &cache);
        Vec dout(out.size());
        double inv = 1.0 / (static_cast<double>(end - start) * out.size());
        for (size_t j = 0; j < out.size(); ++j) {
          dout[j] = 2.0 * (out[j] - targets[order[k]][j]) * inv;
        }
        backward(expert.net, cache, dout, &grads);
      }
      adam_step(adam, expert.net, grads);
    }
  }
  expert.frozen = true;

  if (kind == ExpertKind::Identity) {
    double acc = expert_verification_accuracy(expert, world,
                                              substream_seed(seed, "expert/gate"));
    if (acc < options.quality_gate * 100.0) {
      std::ostringstream msg;
      msg << "identity expert failed quality gate: verification accuracy "
          << acc << "% < " << options.quality_gate * 100.0 << "%";
      throw Error(ErrorKind::Training, msg.str());
    }
  }
  return expert;
}

Vec expert_embed(const ExpertModel& expert, const Vec& x) {
  Vec out = forward(expert.net, x);
  if (expert.kind == ExpertKind::Identity) return normalized(out);
  return out;
}

Vec expert_predict(const ExpertModel& expert, const Vec& x) {
  return forward(expert.net, x);
}

Vec expert_penultimate(const ExpertModel& expert, const Vec& x) {
  return penultimate(expert.net, x);
}

double expert_verification_accuracy(const ExpertModel& expert, const World& world,
                                    uint64_t seed) {
  std::vector<size_t> eval = world.eval_indices();
  if (eval.size() < 4) {
    throw Error(ErrorKind::Config, "eval split too small for verification");
  }
  std::vector<Vec> embeddings;
  std::vector<int> labels;
  embeddings.reserve(eval.size());
  for (size_t i : eval) {
    embeddings.push_back(expert_embed(expert, world.samples[i].feature));
    labels.push_back(world.samples[i].identity_label);
  }
  int n_genuine = std::min<int>(1000, static_cast<int>(eval.size()) * 2);
  ScoreSet scores = pair_distances(embeddings, labels, n_genuine, 2000, seed);
  return verification_accuracy(scores);
}

Vec ensemble_extract(const EnsembleExtractor& extractor, const Vec& x,
                     ExtractCache* cache) {
  if (extractor.experts.empty()) {
    throw Error(ErrorKind::Config, "extractor has no experts");
  }
  Vec merged;
  if (cache) {
    cache->expert_caches.assign(extractor.experts.size(), {});
    cache->expert_raw.assign(extractor.experts.size(), {});
  }
  for (size_t e = 0; e < extractor.experts.size(); ++e) {
    const ExpertModel& expert = extractor.experts[e];
    ForwardCache fc;
    Vec raw = forward(expert.net, x, cache ? &fc : nullptr);
    Vec emb = expert.kind == ExpertKind::Identity ? normalized(raw) : raw;
    if (cache) {
      cache->expert_caches[e] = std::move(fc);
      cache->expert_raw[e] = raw;
    }
    merged.insert(merged.end(), emb.begin(), emb.end());
  }
  ForwardCache mc;
  Vec raw = forward(extractor.merge_net, merged, cache ? &mc : nullptr);
  Vec z = normalized(raw);
  if (cache) {
    cache->merged_input = merged;
    cache->merge_cache = std::move(mc);
    cache->merge_raw = raw;
    cache->z = z;
  }
  return z;
}

Vec extract_backward(const EnsembleExtractor& extractor, const ExtractCache& cache,
                     const Vec& dz, NetGrads* merge_grads) {
  Vec draw = normalize_backward(cache.merge_raw, dz);
  Vec dmerged = backward(extractor.merge_net, cache.merge_cache, draw, merge_grads);
  Vec dx;
  size_t offset = 0;
  for (size_t e = 0; e < extractor.experts.size(); ++e) {
    const ExpertModel& expert = extractor.experts[e];
    size_t dim = static_cast<size_t>(expert.embedding_dim);
    Vec demb(dmerged.begin() + offset, dmerged.begin() + offset + dim);
    offset += dim;
    Vec draw_e = expert.kind == ExpertKind::Identity
                     ? normalize_backward(cache.expert_raw[e], demb)
                     : demb;
    Vec dx_e = backward(expert.net, cache.expert_caches[e], draw_e, nullptr);
    if (dx.empty()) {
      dx = std::move(dx_e);
    } else {
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += dx_e[i];
    }
  }
  return dx;
}

EnsembleExtractor build_extractor(const World& world,
                                  const ExtractorBuildOptions& options,
                                  uint64_t seed) {
  if (options.n_experts < 1) {
    throw Error(ErrorKind::Config, "extractor needs at least one expert");
  }
  EnsembleExtractor extractor;
  extractor.n_z = options.n_z;
  for (int e = 0; e < options.n_experts; ++e) {
    ExpertModel expert = train_expert(
        world, ExpertKind::Identity, options.expert_embedding_dim,
        options.expert_hidden,
        substream_seed(seed, "extractor/expert_" + std::to_string(e)),
        options.expert_options);
    expert.name = "id_expert_" + std::to_string(e);
    extractor.experts.push_back(std::move(expert));
  }

  std::vector<int> merge_sizes;
  merge_sizes.push_back(options.n_experts * options.expert_embedding_dim);
  merge_sizes.insert(merge_sizes.end(), options.merge_hidden.begin(),
                     options.merge_hidden.end());
  merge_sizes.push_back(options.n_z);
  extractor.merge_net = init_network(merge_sizes, Act::Tanh, Act::Tanh,
                                     substream_seed(seed, "extractor/merge_init"));

  // The merge MLP needs a non-degenerate, identity-preserving starting point
  // before any joint training: regress a fixed projection of the identity
  // latent, exactly like the experts themselves.
  Matrix proj = target_projection(options.n_z, world.config.n_id_latent,
                                  substream_seed(seed, "extractor/merge_proj"));
  std::vector<size_t> train = world.train_indices();
  std::vector<Vec> inputs(world.samples.size());
  std::vector<Vec> targets(world.samples.size());
  for (size_t i : train) {
    const Sample& s = world.samples[i];
    Vec merged;
    for (const ExpertModel& expert : extractor.experts) {
      Vec emb = expert_embed(expert, s.feature);
      merged.insert(merged.end(), emb.begin(), emb.end());
    }
    inputs[i] = std::move(merged);
    targets[i] = normalized(project(proj, s.id_latent_truth));
  }

  AdamState adam(extractor.merge_net, 1e-3, 0.9, 0.999);
  NetGrads grads(extractor.merge_net);
  Rng shuffle_rng = substream(seed, "extractor/merge_shuffle");
  std::vector<size_t> order = train;
  const int batch = 16;
  for (int epoch = 0; epoch < options.merge_pretrain_epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    for (size_t start = 0; start < order.size(); start += batch) {
      size_t end = std::min(order.size(), start + batch);
      grads.zero();
      for (size_t k = start; k < end; ++k) {
        ForwardCache cache;
        Vec out = forward(extractor.merge_net, inputs[order[k]], &cache);
        Vec dout(out.size());
        double inv = 1.0 / (static_cast<double>(end - start) * out.size());
        for (size_t j = 0; j < out.size(); ++j) {
          dout[j] = 2.0 * (out[j] - targets[order[k]][j]) * inv;
        }
        backward(extractor.merge_net, cache, dout, &grads);
      }
      adam_step(adam, extractor.merge_net, grads);
    }
  }
  return extractor;
}

uint64_t extractor_param_hash(const EnsembleExtractor& extractor) {
  uint64_t h = 1469598103934665603ull;
  auto mix64 = [&h](uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (const ExpertModel& e : extractor.experts) mix64(param_hash(e.net));
  mix64(param_hash(extractor.merge_net));
  return h;
}

}  // namespace deid
