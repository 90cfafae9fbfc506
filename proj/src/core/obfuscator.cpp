#include "obfuscator.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "error.hpp"

namespace deid {

const char* obf_variant_name(ObfVariant v) {
  switch (v) {
    case ObfVariant::Opp: return "opp";
    case ObfVariant::Mlp: return "mlp";
    case ObfVariant::Ved: return "ved";
  }
  return "opp";
}

ObfVariant obf_variant_from_name(const std::string& name) {
  if (name == "opp") return ObfVariant::Opp;
  if (name == "mlp") return ObfVariant::Mlp;
  if (name == "ved") return ObfVariant::Ved;
  throw Error(ErrorKind::Config, "unknown obfuscator variant: " + name);
}

ObfuscatorSpec make_opp(int n_z) {
  ObfuscatorSpec spec;
  spec.variant = ObfVariant::Opp;
  spec.n_z = n_z;
  return spec;
}

ObfuscatorSpec make_mlp(int n_z, const std::vector<int>& hidden, double beta,
                        uint64_t seed) {
  if (beta < 0.0) throw Error(ErrorKind::Config, "beta must be nonnegative");
  ObfuscatorSpec spec;
  spec.variant = ObfVariant::Mlp;
  spec.n_z = n_z;
  spec.beta = beta;
  std::vector<int> sizes;
  sizes.push_back(n_z);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(n_z);
  spec.mlp = init_network(sizes, Act::Tanh, Act::Tanh, seed);
  return spec;
}

ObfuscatorSpec make_ved(int n_z, const std::vector<int>& encoder_hidden, int n_v,
                        const std::vector<int>& decoder_hidden, double alpha,
                        uint64_t seed) {
  if (alpha < 0.0) throw Error(ErrorKind::Config, "alpha must be nonnegative");
  if (n_v < 1) throw Error(ErrorKind::Config, "n_v must be positive");
  ObfuscatorSpec spec;
  spec.variant = ObfVariant::Ved;
  spec.n_z = n_z;
  spec.alpha = alpha;
  spec.n_v = n_v;
  std::vector<int> enc_sizes;
  enc_sizes.push_back(n_z);
  enc_sizes.insert(enc_sizes.end(), encoder_hidden.begin(), encoder_hidden.end());
  enc_sizes.push_back(2 * n_v);
  spec.ved_encoder = init_network(enc_sizes, Act::Tanh, Act::Linear,
                                  substream_seed(seed, "ved/encoder"));
  std::vector<int> dec_sizes;
  dec_sizes.push_back(n_v);
  dec_sizes.insert(dec_sizes.end(), decoder_hidden.begin(), decoder_hidden.end());
  dec_sizes.push_back(n_z);
  spec.ved_decoder = init_network(dec_sizes, Act::Tanh, Act::Tanh,
                                  substream_seed(seed, "ved/decoder"));
  return spec;
}

Vec psi_opp(const Vec& z) {
  Vec out(z.size());
  for (size_t i = 0; i < z.size(); ++i) out[i] = -z[i];
  return out;
}

namespace {

constexpr double kLogvarClamp = 10.0;

void require_variant(const ObfuscatorSpec& spec, ObfVariant v) {
  if (spec.variant != v) {
    throw Error(ErrorKind::Config,
                std::string("operation requires the ") + obf_variant_name(v) +
                    " variant, spec is " + obf_variant_name(spec.variant));
  }
}

}  // namespace

Vec psi_mlp(const ObfuscatorSpec& spec, const Vec& z, ObfMode mode, Rng* rng) {
  require_variant(spec, ObfVariant::Mlp);
  ObfCache cache;
  return obf_apply(spec, z, mode, rng, &cache);
}

std::pair<Vec, Vec> ved_encode(const ObfuscatorSpec& spec, const Vec& z) {
  require_variant(spec, ObfVariant::Ved);
  Vec out = forward(spec.ved_encoder, z);
  Vec mu(out.begin(), out.begin() + spec.n_v);
  Vec logvar(out.begin() + spec.n_v, out.end());
  for (double& lv : logvar) lv = std::clamp(lv, -kLogvarClamp, kLogvarClamp);
  return {mu, logvar};
}

Vec ved_sample(const Vec& mu, const Vec& logvar, VedSampleMode mode, double alpha,
               Rng* rng) {
  if (mu.size() != logvar.size()) {
    throw Error(ErrorKind::Dimension, "ved_sample: mu/logvar size mismatch");
  }
  if (mode == VedSampleMode::InferLaplace && alpha < 0.0) {
    throw Error(ErrorKind::Config, "alpha must be nonnegative");
  }
  Vec v(mu.size());
  for (size_t i = 0; i < mu.size(); ++i) {
    double sigma = std::exp(0.5 * logvar[i]);
    double noise = mode == VedSampleMode::TrainGaussian ? rng->normal()
                                                        : rng->laplace(alpha);
    v[i] = mu[i] + sigma * noise;
  }
  return v;
}

Vec ved_decode(const ObfuscatorSpec& spec, const Vec& v) {
  require_variant(spec, ObfVariant::Ved);
  return normalized(forward(spec.ved_decoder, v));
}

Vec obf_sample_noise(const ObfuscatorSpec& spec, ObfMode mode, Rng* rng) {
  switch (spec.variant) {
    case ObfVariant::Opp:
      return {};
    case ObfVariant::Mlp: {
      Vec noise(spec.n_z, 0.0);
      if (mode != ObfMode::Deterministic && spec.beta > 0.0) {
        if (!rng) throw Error(ErrorKind::Config, "noised mode needs an rng");
        for (double& n : noise) n = rng->laplace(spec.beta);
      }
      return noise;
    }
    case ObfVariant::Ved: {
      Vec noise(spec.n_v, 0.0);
      if (mode == ObfMode::TrainNoised) {
        if (!rng) throw Error(ErrorKind::Config, "noised mode needs an rng");
        for (double& n : noise) n = rng->normal();
      } else if (mode == ObfMode::InferNoised && spec.alpha > 0.0) {
        if (!rng) throw Error(ErrorKind::Config, "noised mode needs an rng");
        for (double& n : noise) n = rng->laplace(spec.alpha);
      }
      return noise;
    }
  }
  return {};
}

Vec obf_apply_with_noise(const ObfuscatorSpec& spec, const Vec& z,
                         const Vec& noise, ObfCache* cache) {
  if (static_cast<int>(z.size()) != spec.n_z) {
    throw Error(ErrorKind::Dimension, "obfuscator input dimension mismatch");
  }
  if (cache) cache->input = z;
  switch (spec.variant) {
    case ObfVariant::Opp: {
      Vec out = psi_opp(z);
      if (cache) cache->z_tilde = out;
      return out;
    }
    case ObfVariant::Mlp: {
      if (noise.size() != z.size()) {
        throw Error(ErrorKind::Dimension, "mlp noise dimension mismatch");
      }
      Vec noised(z.size());
      for (size_t i = 0; i < z.size(); ++i) noised[i] = z[i] + noise[i];
      ForwardCache fc;
      Vec raw = forward(spec.mlp, noised, cache ? &fc : nullptr);
      if (!all_finite(raw)) {
        throw Error(ErrorKind::Numeric, "psi_mlp produced non-finite output");
      }
      Vec out = normalized(raw);
      if (cache) {
        cache->noised_input = std::move(noised);
        cache->mlp_cache = std::move(fc);
        cache->mlp_raw = std::move(raw);
        cache->z_tilde = out;
      }
      return out;
    }
    case ObfVariant::Ved: {
      if (static_cast<int>(noise.size()) != spec.n_v) {
        throw Error(ErrorKind::Dimension, "ved noise dimension mismatch");
      }
      ForwardCache ec;
      Vec enc_out = forward(spec.ved_encoder, z, cache ? &ec : nullptr);
      Vec mu(enc_out.begin(), enc_out.begin() + spec.n_v);
      Vec logvar(enc_out.begin() + spec.n_v, enc_out.end());
      std::vector<bool> mask(logvar.size(), false);
      for (size_t i = 0; i < logvar.size(); ++i) {
        if (logvar[i] < -kLogvarClamp || logvar[i] > kLogvarClamp) {
          logvar[i] = std::clamp(logvar[i], -kLogvarClamp, kLogvarClamp);
          mask[i] = true;
        }
      }
      Vec sigma(logvar.size());
      for (size_t i = 0; i < logvar.size(); ++i) sigma[i] = std::exp(0.5 * logvar[i]);
      Vec v(mu.size());
      for (size_t i = 0; i < mu.size(); ++i) v[i] = mu[i] + sigma[i] * noise[i];
      ForwardCache dc;
      Vec raw = forward(spec.ved_decoder, v, cache ? &dc : nullptr);
      if (!all_finite(raw)) {
        throw Error(ErrorKind::Numeric, "psi_ved produced non-finite output");
      }
      Vec out = normalized(raw);
      if (cache) {
        cache->enc_cache = std::move(ec);
        cache->mu = std::move(mu);
        cache->logvar = std::move(logvar);
        cache->clamp_mask = std::move(mask);
        cache->noise = noise;
        cache->sigma = std::move(sigma);
        cache->latent = std::move(v);
        cache->dec_cache = std::move(dc);
        cache->dec_raw = std::move(raw);
        cache->z_tilde = out;
      }
      return out;
    }
  }
  throw Error(ErrorKind::Config, "unreachable obfuscator variant");
}

Vec obf_apply(const ObfuscatorSpec& spec, const Vec& z, ObfMode mode, Rng* rng,
              ObfCache* cache) {
  return obf_apply_with_noise(spec, z, obf_sample_noise(spec, mode, rng), cache);
}

ObfGrads::ObfGrads(const ObfuscatorSpec& spec) {
  if (spec.variant == ObfVariant::Mlp) {
    mlp = NetGrads(spec.mlp);
  } else if (spec.variant == ObfVariant::Ved) {
    enc = NetGrads(spec.ved_encoder);
    dec = NetGrads(spec.ved_decoder);
  }
}

void ObfGrads::zero() {
  mlp.zero();
  enc.zero();
  dec.zero();
}

void obf_backward(const ObfuscatorSpec& spec, const ObfCache& cache,
                  const Vec& dz_tilde, double lambda_kld, ObfGrads* grads) {
  switch (spec.variant) {
    case ObfVariant::Opp:
      return;  // no parameters
    case ObfVariant::Mlp: {
      Vec draw = normalize_backward(cache.mlp_raw, dz_tilde);
      backward(spec.mlp, cache.mlp_cache, draw, grads ? &grads->mlp : nullptr);
      return;
    }
    case ObfVariant::Ved: {
      Vec draw = normalize_backward(cache.dec_raw, dz_tilde);
      Vec dv = backward(spec.ved_decoder, cache.dec_cache, draw,
                        grads ? &grads->dec : nullptr);
      Vec dmu = dv;
      Vec dlogvar(dv.size());
      for (size_t i = 0; i < dv.size(); ++i) {
        dlogvar[i] = dv[i] * cache.noise[i] * 0.5 * cache.sigma[i];
      }
      if (lambda_kld != 0.0) {
        for (size_t i = 0; i < dmu.size(); ++i) {
          dmu[i] += lambda_kld * cache.mu[i];
          dlogvar[i] += lambda_kld * 0.5 * (std::exp(cache.logvar[i]) - 1.0);
        }
      }
      Vec denc(2 * spec.n_v);
      for (int i = 0; i < spec.n_v; ++i) {
        denc[i] = dmu[i];
        denc[spec.n_v + i] = cache.clamp_mask[i] ? 0.0 : dlogvar[i];
      }
      backward(spec.ved_encoder, cache.enc_cache, denc,
               grads ? &grads->enc : nullptr);
      return;
    }
  }
}

double loss_deid(const Vec& z, const Vec& z_tilde) {
  return 1.0 + cosine(z, z_tilde);
}

double loss_kld(const Vec& mu, const Vec& logvar) {
  if (mu.size() != logvar.size()) {
    throw Error(ErrorKind::Dimension, "loss_kld: mu/logvar size mismatch");
  }
  double s = 0.0;
  for (size_t i = 0; i < mu.size(); ++i) {
    s += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  }
  return 0.5 * s;
}

SensitivityEstimate estimate_sensitivity(
    const std::function<Vec(const Vec&)>& psi_deterministic,
    const std::vector<Vec>& id_vectors, int n_pairs, uint64_t seed) {
  if (n_pairs < 1) throw Error(ErrorKind::Config, "n_pairs must be >= 1");
  if (id_vectors.size() < 2) {
    throw Error(ErrorKind::Input, "sensitivity estimation needs >= 2 vectors");
  }
  std::vector<Vec> outputs(id_vectors.size());
  std::vector<Vec> outputs_neg(id_vectors.size());
  for (size_t i = 0; i < id_vectors.size(); ++i) {
    outputs[i] = psi_deterministic(id_vectors[i]);
    outputs_neg[i] = psi_deterministic(psi_opp(id_vectors[i]));
  }
  SensitivityEstimate best;
  auto consider = [&](const Vec& out_a, const Vec& out_b, const Vec& a,
                      const Vec& b) {
    double d = l1_distance(out_a, out_b);
    if (d > best.delta) {
      best.delta = d;
      best.arg_a = a;
      best.arg_b = b;
    }
  };
  // Every antipodal pair of the dataset, then the random sample.
  for (size_t i = 0; i < id_vectors.size(); ++i) {
    consider(outputs[i], outputs_neg[i], id_vectors[i], psi_opp(id_vectors[i]));
  }
  Rng rng(seed);
  for (int p = 0; p < n_pairs; ++p) {
    size_t a = rng.uniform_index(id_vectors.size());
    size_t b = rng.uniform_index(id_vectors.size() - 1);
    if (b >= a) ++b;
    consider(outputs[a], outputs[b], id_vectors[a], id_vectors[b]);
  }
  return best;
}

PrivacyBudget budget(double delta_psi, double epsilon) {
  if (!(delta_psi > 0.0) || !(epsilon > 0.0)) {
    throw Error(ErrorKind::Config, "budget needs positive delta_psi and epsilon");
  }
  PrivacyBudget b;
  b.delta_psi = delta_psi;
  b.epsilon = epsilon;
  b.noise_scale = delta_psi / epsilon;
  return b;
}

double scale_to_epsilon(double delta_psi, double scale) {
  if (!(delta_psi > 0.0) || !(scale > 0.0)) {
    throw Error(ErrorKind::Config, "scale_to_epsilon needs positive inputs");
  }
  return delta_psi / scale;
}

ObfTrainResult train_obfuscator(ObfuscatorSpec& spec,
                                const EnsembleExtractor& extractor,
                                const World& world, uint64_t seed,
                                const ObfTrainOptions& options) {
  if (spec.variant == ObfVariant::Opp) {
    throw Error(ErrorKind::Config, "psi_opp has no trainable parameters");
  }
  std::vector<size_t> train = world.train_indices();
  if (train.empty()) throw Error(ErrorKind::Config, "world has no train split");

  std::vector<Vec> ids(train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    ids[i] = ensemble_extract(extractor, world.samples[train[i]].feature);
  }

  ObfGrads grads(spec);
  std::unique_ptr<AdamState> adam_mlp, adam_enc, adam_dec;
  if (spec.variant == ObfVariant::Mlp) {
    adam_mlp = std::make_unique<AdamState>(spec.mlp, options.learning_rate,
                                           options.adam_beta1, options.adam_beta2);
  } else {
    adam_enc = std::make_unique<AdamState>(spec.ved_encoder, options.learning_rate,
                                           options.adam_beta1, options.adam_beta2);
    adam_dec = std::make_unique<AdamState>(spec.ved_decoder, options.learning_rate,
                                           options.adam_beta1, options.adam_beta2);
  }

  Rng data_rng = substream(seed, "obf/train_data");
  Rng noise_rng = substream(seed, "obf/train_noise");
  ObfTrainResult result;
  result.loss_trace.reserve(options.steps);
  for (int step = 0; step < options.steps; ++step) {
    grads.zero();
    double batch_loss = 0.0;
    for (int k = 0; k < options.batch_size; ++k) {
      const Vec& z = ids[data_rng.uniform_index(ids.size())];
      ObfCache cache;
      Vec z_tilde = obf_apply(spec, z, ObfMode::TrainNoised, &noise_rng, &cache);
      double loss = options.lambda_deid * loss_deid(z, z_tilde);
      if (spec.variant == ObfVariant::Ved) {
        loss += options.lambda_kld * loss_kld(cache.mu, cache.logvar);
      }
      batch_loss += loss;
      double scale = options.lambda_deid / options.batch_size;
      Vec dzt = cosine_backward_v(z, z_tilde, scale);
      obf_backward(spec, cache, dzt,
                   options.lambda_kld / options.batch_size, &grads);
    }
    batch_loss /= options.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw Error(ErrorKind::Training,
                  "obfuscator training diverged at step " + std::to_string(step));
    }
    result.loss_trace.push_back(batch_loss);
    if (spec.variant == ObfVariant::Mlp) {
      adam_step(*adam_mlp, spec.mlp, grads.mlp);
    } else {
      adam_step(*adam_enc, spec.ved_encoder, grads.enc);
      adam_step(*adam_dec, spec.ved_decoder, grads.dec);
    }
  }
  return result;
}

}  // namespace deid
