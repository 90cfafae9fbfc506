#include "swap.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "error.hpp"

namespace deid {

namespace {

constexpr double kCriticClamp = 1e-7;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

SwapModel make_swap_model(int n_feature, int n_z, int nu_dim, int code_dim,
                          const std::vector<int>& encoder_hidden,
                          const std::vector<int>& injector_hidden,
                          const std::vector<int>& decoder_hidden, uint64_t seed) {
  auto sizes = [](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s;
    s.push_back(in);
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
  };
  SwapModel model;
  model.encoder = init_network(sizes(n_feature, encoder_hidden, nu_dim), Act::Tanh,
                               Act::Tanh, substream_seed(seed, "swap/encoder"));
  model.injector =
      init_network(sizes(nu_dim + n_z, injector_hidden, code_dim), Act::Tanh,
                   Act::Tanh, substream_seed(seed, "swap/injector"));
  model.decoder = init_network(sizes(code_dim, decoder_hidden, n_feature),
                               Act::Tanh, Act::Linear,
                               substream_seed(seed, "swap/decoder"));
  return model;
}

Vec swap_forward(const SwapModel& model, const Vec& x, const Vec& z_inj,
                 SwapCache* cache) {
  if (static_cast<int>(x.size()) != model.encoder.input_dim()) {
    throw Error(ErrorKind::Dimension, "swap_forward: feature dimension mismatch");
  }
  if (static_cast<int>(z_inj.size()) + model.encoder.output_dim() !=
      model.injector.input_dim()) {
    throw Error(ErrorKind::Dimension, "swap_forward: identity dimension mismatch");
  }
  ForwardCache enc, inj, dec;
  Vec nu = forward(model.encoder, x, cache ? &enc : nullptr);
  Vec fused = concat(nu, z_inj);
  Vec code = forward(model.injector, fused, cache ? &inj : nullptr);
  Vec x_tilde = forward(model.decoder, code, cache ? &dec : nullptr);
  if (cache) {
    cache->x = x;
    cache->z_inj = z_inj;
    cache->nu = std::move(nu);
    cache->code = std::move(code);
    cache->enc = std::move(enc);
    cache->inj = std::move(inj);
    cache->dec = std::move(dec);
  }
  return x_tilde;
}

SwapGrads::SwapGrads(const SwapModel& model)
    : encoder(model.encoder), injector(model.injector), decoder(model.decoder) {}

void SwapGrads::zero() {
  encoder.zero();
  injector.zero();
  decoder.zero();
}

Vec swap_backward(const SwapModel& model, const SwapCache& cache, const Vec& dxt,
                  SwapGrads* grads, Vec* dx) {
  Vec dcode = backward(model.decoder, cache.dec, dxt,
                       grads ? &grads->decoder : nullptr);
  Vec dfused = backward(model.injector, cache.inj, dcode,
                        grads ? &grads->injector : nullptr);
  size_t nu_dim = cache.nu.size();
  Vec dnu(dfused.begin(), dfused.begin() + nu_dim);
  Vec dz(dfused.begin() + nu_dim, dfused.end());
  Vec dx_local = backward(model.encoder, cache.enc, dnu,
                          grads ? &grads->encoder : nullptr);
  if (dx) *dx = std::move(dx_local);
  return dz;
}

std::vector<Critic> make_critics(int n_feature, int k_d,
                                 const std::vector<int>& hidden, uint64_t seed) {
  if (k_d < 1) throw Error(ErrorKind::Config, "need at least one critic");
  std::vector<Critic> critics;
  for (int i = 0; i < k_d; ++i) {
    std::vector<int> sizes;
    sizes.push_back(2 * n_feature);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    critics.push_back(Critic{init_network(
        sizes, Act::Tanh, Act::Sigmoid,
        substream_seed(seed, "critic_" + std::to_string(i)))});
  }
  return critics;
}

double critic_score(const Critic& critic, const Vec& x, const Vec& x_tilde,
                    ForwardCache* cache) {
  Vec out = forward(critic.net, concat(x, x_tilde), cache);
  return out[0];
}

double loss_gen(const std::vector<Critic>& critics, const Vec& x,
                const Vec& x_tilde) {
  double total = 0.0;
  for (const Critic& c : critics) {
    double d = std::min(critic_score(c, x, x_tilde), 1.0 - kCriticClamp);
    total += std::log(1.0 - d);
  }
  return total;
}

double critic_loss(const std::vector<Critic>& critics, const Vec& real_a,
                   const Vec& real_b, const Vec& fake_a, const Vec& fake_b) {
  double total = 0.0;
  for (const Critic& c : critics) {
    double d_real = std::max(critic_score(c, real_a, real_b), kCriticClamp);
    double d_fake = std::min(critic_score(c, fake_a, fake_b), 1.0 - kCriticClamp);
    total += -std::log(d_real) - std::log(1.0 - d_fake);
  }
  return total;
}

double loss_mix(const SwapModel& model, const Vec& x, const Vec& z,
                const Vec& z_tilde) {
  Vec a = swap_forward(model, x, z_tilde);
  Vec b = swap_forward(model, x, z);
  return l1_distance(a, b);
}

double loss_id(const EnsembleExtractor& extractor, const SwapModel& model,
               const Vec& x, const Vec& z, const Vec& z_tilde) {
  double total = 0.0;
  for (const Vec* zhat : {&z, &z_tilde}) {
    Vec rehat = ensemble_extract(extractor, swap_forward(model, x, *zhat));
    total += 1.0 - cosine(*zhat, rehat);
  }
  return total;
}

double loss_uti(const std::vector<ExpertModel>& utility_experts,
                const std::vector<double>& lambda_uti, const Vec& x,
                const Vec& x_tilde) {
  if (utility_experts.size() != lambda_uti.size()) {
    throw Error(ErrorKind::Config, "utility expert/weight count mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < utility_experts.size(); ++i) {
    total += lambda_uti[i] * l1_distance(expert_penultimate(utility_experts[i], x),
                                         expert_penultimate(utility_experts[i], x_tilde));
  }
  return total;
}

void LossWeights::validate() const {
  if (lambda_id < 0 || lambda_deid < 0 || lambda_mix < 0 || lambda_kld < 0 ||
      lambda_gen < 0) {
    throw Error(ErrorKind::Config, "loss weights must be nonnegative");
  }
  for (double l : lambda_uti) {
    if (l < 0) throw Error(ErrorKind::Config, "loss weights must be nonnegative");
  }
}

namespace {

// Generator-side adversarial gradient: d/dx_tilde of lambda_gen * log(1-D).
void add_gen_gradient(const std::vector<Critic>& critics, const Vec& x,
                      const Vec& x_tilde, double lambda_gen, double* loss_out,
                      Vec& dxt) {
  for (const Critic& c : critics) {
    ForwardCache cache;
    double d = critic_score(c, x, x_tilde, &cache);
    if (d < 1.0 - kCriticClamp) {
      *loss_out += lambda_gen * std::log(1.0 - d);
      // Gradient on the critic output D, chained through the net input;
      // only the x_tilde half reaches the generator.
      Vec din = backward(c.net, cache, {-lambda_gen / (1.0 - d)}, nullptr);
      for (size_t i = 0; i < x_tilde.size(); ++i) dxt[i] += din[x.size() + i];
    } else {
      *loss_out += lambda_gen * std::log(kCriticClamp);
    }
  }
}

void add_uti_gradient(const std::vector<ExpertModel>& experts,
                      const std::vector<double>& lambda_uti, const Vec& x,
                      const Vec& x_tilde, double* loss_out, Vec& dxt) {
  if (experts.size() != lambda_uti.size()) {
    throw Error(ErrorKind::Config, "utility expert/weight count mismatch");
  }
  for (size_t i = 0; i < experts.size(); ++i) {
    const DenseNet& net = experts[i].net;
    int pen_layer = net.layer_count() - 1;
    if (pen_layer < 1) {
      throw Error(ErrorKind::Config,
                  "penultimate features need a network with >= 2 layers");
    }
    ForwardCache cache_x, cache_t;
    forward(net, x, &cache_x);
    forward(net, x_tilde, &cache_t);
    const Vec& pen_x = cache_x.post[pen_layer - 1];
    const Vec& pen_t = cache_t.post[pen_layer - 1];
    Vec dpen(pen_t.size());
    double term = 0.0;
    for (size_t j = 0; j < pen_t.size(); ++j) {
      term += std::abs(pen_x[j] - pen_t[j]);
      dpen[j] = lambda_uti[i] * sign(pen_t[j] - pen_x[j]);
    }
    *loss_out += lambda_uti[i] * term;
    Vec dx_t = backward_prefix(net, cache_t, pen_layer, dpen, nullptr);
    for (size_t j = 0; j < dxt.size(); ++j) dxt[j] += dx_t[j];
  }
}

}  // namespace

double phase2_objective(const SwapModel& model, const std::vector<Critic>& critics,
                        const ObfuscatorSpec& spec,
                        const EnsembleExtractor& extractor,
                        const std::vector<ExpertModel>& utility_experts,
                        const LossWeights& weights, const Vec& x, const Vec& z,
                        const Vec& psi_noise, SwapGrads* swap_grads,
                        ObfGrads* obf_grads) {
  // Forward.
  ObfCache ocache;
  Vec zt = obf_apply_with_noise(spec, z, psi_noise, &ocache);
  SwapCache cache_z, cache_t;
  Vec xz = swap_forward(model, x, z, &cache_z);
  Vec xt = swap_forward(model, x, zt, &cache_t);
  ExtractCache ec_z, ec_t;
  Vec zhz = ensemble_extract(extractor, xz, &ec_z);
  Vec zht = ensemble_extract(extractor, xt, &ec_t);

  double loss = 0.0;
  loss += weights.lambda_id * ((1.0 - cosine(z, zhz)) + (1.0 - cosine(zt, zht)));
  loss += weights.lambda_deid * loss_deid(z, zt);
  loss += weights.lambda_mix * l1_distance(xt, xz);
  double kld = 0.0;
  if (spec.variant == ObfVariant::Ved) {
    kld = loss_kld(ocache.mu, ocache.logvar);
    loss += weights.lambda_kld * kld;
  }

  // Gradient seeds on the two generated features and on z_tilde.
  Vec dxt(xt.size(), 0.0), dxz(xz.size(), 0.0);
  Vec dzt(zt.size(), 0.0);

  for (size_t i = 0; i < xt.size(); ++i) {
    double s = weights.lambda_mix * sign(xt[i] - xz[i]);
    dxt[i] += s;
    dxz[i] -= s;
  }
  if (weights.lambda_gen > 0.0) {
    add_gen_gradient(critics, x, xt, weights.lambda_gen, &loss, dxt);
  }
  if (!utility_experts.empty()) {
    add_uti_gradient(utility_experts, weights.lambda_uti, x, xt, &loss, dxt);
  }

  // Identity losses through the frozen extractor.
  Vec dzhz = cosine_backward_v(z, zhz, -weights.lambda_id);
  Vec dxz_id = extract_backward(extractor, ec_z, dzhz, nullptr);
  for (size_t i = 0; i < dxz.size(); ++i) dxz[i] += dxz_id[i];

  Vec dzht = cosine_backward_v(zt, zht, -weights.lambda_id);
  Vec dxt_id = extract_backward(extractor, ec_t, dzht, nullptr);
  for (size_t i = 0; i < dxt.size(); ++i) dxt[i] += dxt_id[i];
  // z_tilde also appears as the cosine target of the injected branch.
  {
    Vec d = cosine_backward_v(zht, zt, -weights.lambda_id);
    for (size_t i = 0; i < dzt.size(); ++i) dzt[i] += d[i];
  }
  // De-identification pressure on z_tilde.
  {
    Vec d = cosine_backward_v(z, zt, weights.lambda_deid);
    for (size_t i = 0; i < dzt.size(); ++i) dzt[i] += d[i];
  }

  // Swap model backward over both branches; the z_tilde branch contributes
  // the injection-path gradient.
  Vec dzt_inj = swap_backward(model, cache_t, dxt, swap_grads);
  for (size_t i = 0; i < dzt.size(); ++i) dzt[i] += dzt_inj[i];
  swap_backward(model, cache_z, dxz, swap_grads);

  if (spec.variant != ObfVariant::Opp) {
    obf_backward(spec, ocache, dzt, weights.lambda_kld, obf_grads);
  }
  return loss;
}

namespace {

double critic_pair_grads(const Critic& critic, const Vec& real_a,
                         const Vec& real_b, const Vec& fake_a, const Vec& fake_b,
                         NetGrads* grads) {
  ForwardCache cache_real, cache_fake;
  double d_real = critic_score(critic, real_a, real_b, &cache_real);
  double d_fake = critic_score(critic, fake_a, fake_b, &cache_fake);
  double loss = 0.0;
  if (d_real > kCriticClamp) {
    loss += -std::log(d_real);
    backward(critic.net, cache_real, {-1.0 / d_real}, grads);
  } else {
    loss += -std::log(kCriticClamp);
  }
  if (d_fake < 1.0 - kCriticClamp) {
    loss += -std::log(1.0 - d_fake);
    backward(critic.net, cache_fake, {1.0 / (1.0 - d_fake)}, grads);
  } else {
    loss += -std::log(kCriticClamp);
  }
  return loss;
}

struct PhaseRuntime {
  std::vector<std::unique_ptr<AdamState>> critic_adam;
  std::vector<NetGrads> critic_grads;

  PhaseRuntime(std::vector<Critic>& critics, const PhaseTrainOptions& options) {
    for (Critic& c : critics) {
      critic_adam.push_back(std::make_unique<AdamState>(
          c.net, options.learning_rate, options.adam_beta1, options.adam_beta2));
      critic_grads.emplace_back(c.net);
    }
  }
};

}  // namespace

std::vector<double> train_phase1(SwapModel& model, std::vector<Critic>& critics,
                                 EnsembleExtractor& extractor, const World& world,
                                 const LossWeights& weights, uint64_t seed,
                                 const PhaseTrainOptions& options) {
  weights.validate();
  std::vector<size_t> train = world.train_indices();
  if (train.empty()) throw Error(ErrorKind::Config, "world has no train split");

  SwapGrads swap_grads(model);
  NetGrads merge_grads(extractor.merge_net);
  AdamState adam_enc(model.encoder, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  AdamState adam_inj(model.injector, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  AdamState adam_dec(model.decoder, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  AdamState adam_merge(extractor.merge_net, options.learning_rate,
                       options.adam_beta1, options.adam_beta2);
  PhaseRuntime runtime(critics, options);

  Rng data_rng = substream(seed, "phase1/data");
  std::vector<double> trace;
  trace.reserve(options.steps);
  bool update_critics = weights.lambda_gen > 0.0 && !critics.empty();

  for (int step = 0; step < options.steps; ++step) {
    swap_grads.zero();
    merge_grads.zero();
    for (auto& g : runtime.critic_grads) g.zero();
    double batch_loss = 0.0;
    double inv = 1.0 / options.batch_size;

    for (int k = 0; k < options.batch_size; ++k) {
      const Vec& x = world.samples[train[data_rng.uniform_index(train.size())]].feature;
      // Self-swap: inject the extracted identity back into its own feature.
      Vec z = ensemble_extract(extractor, x);
      SwapCache scache;
      Vec xt = swap_forward(model, x, z, &scache);
      ExtractCache ecache;
      Vec zh = ensemble_extract(extractor, xt, &ecache);

      double loss = weights.lambda_id * (1.0 - cosine(z, zh));
      Vec dxt(xt.size(), 0.0);
      if (weights.lambda_gen > 0.0) {
        add_gen_gradient(critics, x, xt, weights.lambda_gen, &loss, dxt);
      }
      Vec dzh = cosine_backward_v(z, zh, -weights.lambda_id);
      Vec dxt_id = extract_backward(extractor, ecache, dzh,
                                    options.train_merge ? &merge_grads : nullptr);
      for (size_t i = 0; i < dxt.size(); ++i) dxt[i] += dxt_id[i];
      swap_backward(model, scache, dxt, &swap_grads);
      batch_loss += loss;

      if (update_critics) {
        for (size_t c = 0; c < critics.size(); ++c) {
          critic_pair_grads(critics[c], x, x, x, xt, &runtime.critic_grads[c]);
        }
      }
    }

    batch_loss *= inv;
    if (!std::isfinite(batch_loss)) {
      throw Error(ErrorKind::Training,
                  "phase 1 diverged at step " + std::to_string(step));
    }
    trace.push_back(batch_loss);

    swap_grads.encoder.scale(inv);
    swap_grads.injector.scale(inv);
    swap_grads.decoder.scale(inv);
    adam_step(adam_enc, model.encoder, swap_grads.encoder);
    adam_step(adam_inj, model.injector, swap_grads.injector);
    adam_step(adam_dec, model.decoder, swap_grads.decoder);
    if (options.train_merge) {
      merge_grads.scale(inv);
      adam_step(adam_merge, extractor.merge_net, merge_grads);
    }
    if (update_critics) {
      for (size_t c = 0; c < critics.size(); ++c) {
        runtime.critic_grads[c].scale(inv);
        adam_step(*runtime.critic_adam[c], critics[c].net, runtime.critic_grads[c]);
      }
    }
  }
  return trace;
}

std::vector<double> train_phase2(SwapModel& model, std::vector<Critic>& critics,
                                 ObfuscatorSpec& spec,
                                 const EnsembleExtractor& extractor,
                                 const std::vector<ExpertModel>& utility_experts,
                                 const World& world, const LossWeights& weights,
                                 uint64_t seed, const PhaseTrainOptions& options) {
  weights.validate();
  std::vector<size_t> train = world.train_indices();
  if (train.empty()) throw Error(ErrorKind::Config, "world has no train split");

  // Identity vectors from the frozen extractor never change in phase 2.
  std::vector<Vec> ids(train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    ids[i] = ensemble_extract(extractor, world.samples[train[i]].feature);
  }

  SwapGrads swap_grads(model);
  ObfGrads obf_grads(spec);
  AdamState adam_enc(model.encoder, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  AdamState adam_inj(model.injector, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  AdamState adam_dec(model.decoder, options.learning_rate, options.adam_beta1,
                     options.adam_beta2);
  std::unique_ptr<AdamState> adam_obf_mlp, adam_obf_enc, adam_obf_dec;
  if (spec.variant == ObfVariant::Mlp) {
    adam_obf_mlp = std::make_unique<AdamState>(
        spec.mlp, options.learning_rate, options.adam_beta1, options.adam_beta2);
  } else if (spec.variant == ObfVariant::Ved) {
    adam_obf_enc = std::make_unique<AdamState>(spec.ved_encoder,
                                               options.learning_rate,
                                               options.adam_beta1,
                                               options.adam_beta2);
    adam_obf_dec = std::make_unique<AdamState>(spec.ved_decoder,
                                               options.learning_rate,
                                               options.adam_beta1,
                                               options.adam_beta2);
  }
  PhaseRuntime runtime(critics, options);

  Rng data_rng = substream(seed, "phase2/data");
  Rng noise_rng = substream(seed, "phase2/noise");
  std::vector<double> trace;
  trace.reserve(options.steps);
  bool update_critics = weights.lambda_gen > 0.0 && !critics.empty();

  for (int step = 0; step < options.steps; ++step) {
    swap_grads.zero();
    obf_grads.zero();
    for (auto& g : runtime.critic_grads) g.zero();
    double batch_loss = 0.0;
    double inv = 1.0 / options.batch_size;

    for (int k = 0; k < options.batch_size; ++k) {
      size_t idx = data_rng.uniform_index(train.size());
      const Vec& x = world.samples[train[idx]].feature;
      const Vec& z = ids[idx];
      Vec noise = obf_sample_noise(spec, ObfMode::TrainNoised, &noise_rng);
      batch_loss += phase2_objective(model, critics, spec, extractor,
                                     utility_experts, weights, x, z, noise,
                                     &swap_grads, &obf_grads);
      if (update_critics) {
        Vec zt = obf_apply_with_noise(spec, z, noise);
        Vec xt = swap_forward(model, x, zt);
        for (size_t c = 0; c < critics.size(); ++c) {
          critic_pair_grads(critics[c], x, x, x, xt, &runtime.critic_grads[c]);
        }
      }
    }

    batch_loss *= inv;
    if (!std::isfinite(batch_loss)) {
      throw Error(ErrorKind::Training,
                  "phase 2 diverged at step " + std::to_string(step));
    }
    trace.push_back(batch_loss);

    swap_grads.encoder.scale(inv);
    swap_grads.injector.scale(inv);
    swap_grads.decoder.scale(inv);
    adam_step(adam_enc, model.encoder, swap_grads.encoder);
    adam_step(adam_inj, model.injector, swap_grads.injector);
    adam_step(adam_dec, model.decoder, swap_grads.decoder);
    if (spec.variant == ObfVariant::Mlp) {
      obf_grads.mlp.scale(inv);
      adam_step(*adam_obf_mlp, spec.mlp, obf_grads.mlp);
    } else if (spec.variant == ObfVariant::Ved) {
      obf_grads.enc.scale(inv);
      obf_grads.dec.scale(inv);
      adam_step(*adam_obf_enc, spec.ved_encoder, obf_grads.enc);
      adam_step(*adam_obf_dec, spec.ved_decoder, obf_grads.dec);
    }
    if (update_critics) {
      for (size_t c = 0; c < critics.size(); ++c) {
        runtime.critic_grads[c].scale(inv);
        adam_step(*runtime.critic_adam[c], critics[c].net, runtime.critic_grads[c]);
      }
    }
  }
  return trace;
}

}  // namespace deid
