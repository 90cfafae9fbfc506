#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "net.hpp"
#include "world.hpp"

namespace deid {

enum class ObfVariant { Opp, Mlp, Ved };

const char* obf_variant_name(ObfVariant v);
ObfVariant obf_variant_from_name(const std::string& name);

// Identity transformation psi. Opp negates; Mlp passes a Laplace-noised
// vector through a trained net; Ved is a variational encoder-decoder with
// Gaussian sampling at training time and Laplace sampling at inference.
// Mlp and Ved outputs are tanh-activated and re-normalized onto the identity
// sphere.
struct ObfuscatorSpec {
  ObfVariant variant = ObfVariant::Opp;
  int n_z = 0;

  DenseNet mlp;       // Mlp only
  double beta = 0.0;  // Laplace scale applied before the Mlp net

  DenseNet ved_encoder;  // n_z -> ... -> 2*n_v (mu, logvar), final linear
  DenseNet ved_decoder;  // n_v -> ... -> n_z, final tanh
  double alpha = 0.0;    // Laplace scale in the Ved latent
  int n_v = 0;
};

ObfuscatorSpec make_opp(int n_z);
ObfuscatorSpec make_mlp(int n_z, const std::vector<int>& hidden, double beta,
                        uint64_t seed);
ObfuscatorSpec make_ved(int n_z, const std::vector<int>& encoder_hidden, int n_v,
                        const std::vector<int>& decoder_hidden, double alpha,
                        uint64_t seed);

enum class ObfMode { TrainNoised, InferNoised, Deterministic };

Vec psi_opp(const Vec& z);

Vec psi_mlp(const ObfuscatorSpec& spec, const Vec& z, ObfMode mode, Rng* rng);

// Encoder output split into (mu, logvar); logvar clamped to [-10, 10].
std::pair<Vec, Vec> ved_encode(const ObfuscatorSpec& spec, const Vec& z);

enum class VedSampleMode { TrainGaussian, InferLaplace };

Vec ved_sample(const Vec& mu, const Vec& logvar, VedSampleMode mode, double alpha,
               Rng* rng);

Vec ved_decode(const ObfuscatorSpec& spec, const Vec& v);

// Everything backward needs for one application of psi.
struct ObfCache {
  Vec input;
  // Mlp
  Vec noised_input;
  ForwardCache mlp_cache;
  Vec mlp_raw;
  // Ved
  ForwardCache enc_cache;
  Vec mu;
  Vec logvar;       // post clamp
  bool clamped_low = false;
  std::vector<bool> clamp_mask;  // true where the clamp was active
  Vec noise;        // eta (train) or Laplace draw (infer)
  Vec sigma;
  Vec latent;
  ForwardCache dec_cache;
  Vec dec_raw;
  Vec z_tilde;
};

// Unified application of any variant. Noise is drawn from `rng` in the
// noised modes (rng may be null for Opp or Deterministic).
Vec obf_apply(const ObfuscatorSpec& spec, const Vec& z, ObfMode mode, Rng* rng,
              ObfCache* cache = nullptr);

// Noise realization for one application: length n_z for Mlp, n_v for Ved,
// empty for Opp; zeros in deterministic mode.
Vec obf_sample_noise(const ObfuscatorSpec& spec, ObfMode mode, Rng* rng);

// Reparameterized forward with the noise supplied explicitly, so the same
// realization can be replayed while parameters are perturbed.
Vec obf_apply_with_noise(const ObfuscatorSpec& spec, const Vec& z,
                         const Vec& noise, ObfCache* cache = nullptr);

struct ObfGrads {
  NetGrads mlp;
  NetGrads enc;
  NetGrads dec;
  explicit ObfGrads(const ObfuscatorSpec& spec);
  void zero();
};

// Reverse pass for the trainable variants. dz_tilde is the upstream
// gradient on the (normalized) output; lambda_kld adds the KLD gradient on
// (mu, logvar) for Ved. Noise realizations are treated as constants.
void obf_backward(const ObfuscatorSpec& spec, const ObfCache& cache,
                  const Vec& dz_tilde, double lambda_kld, ObfGrads* grads);

// De-identification loss: 1 + cos(z, z_tilde), in [0, 2].
double loss_deid(const Vec& z, const Vec& z_tilde);

// KLD of N(mu, exp(logvar)) against the standard normal.
double loss_kld(const Vec& mu, const Vec& logvar);

struct SensitivityEstimate {
  double delta = 0.0;
  Vec arg_a, arg_b;  // the pair attaining the maximum
};

// Empirical L1 sensitivity of the deterministic core: max over sampled pairs
// plus every antipodal pair of the dataset. A sampled supremum, so a lower
// bound on the true sensitivity.
SensitivityEstimate estimate_sensitivity(
    const std::function<Vec(const Vec&)>& psi_deterministic,
    const std::vector<Vec>& id_vectors, int n_pairs, uint64_t seed);

struct PrivacyBudget {
  double epsilon = 0.0;
  double delta_psi = 0.0;
  double noise_scale = 0.0;  // delta_psi / epsilon
};

PrivacyBudget budget(double delta_psi, double epsilon);
double scale_to_epsilon(double delta_psi, double scale);

struct ObfTrainOptions {
  int steps = 2000;
  int batch_size = 4;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double lambda_deid = 30.0;
  double lambda_kld = 1.0;  // see LossWeights on the desk-scale KLD balance
};

struct ObfTrainResult {
  std::vector<double> loss_trace;  // per-step batch means
};

// Trains Mlp or Ved against a frozen extractor's identity vectors on the
// world's train split, with noise active in train mode.
ObfTrainResult train_obfuscator(ObfuscatorSpec& spec,
                                const EnsembleExtractor& extractor,
                                const World& world, uint64_t seed,
                                const ObfTrainOptions& options = {});

}  // namespace deid
