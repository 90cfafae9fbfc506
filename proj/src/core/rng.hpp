#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "error.hpp"

namespace deid {

// Deterministic random stream. All distribution transforms are implemented
// explicitly on top of mt19937_64 so that sequences are identical across
// platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in the open interval (0, 1); both endpoints excluded.
  double uniform01() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller (cosine branch only).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double laplace(double scale);

  // Uniform integer in [0, n). Modulo bias is negligible for the n used here.
  size_t uniform_index(size_t n) { return static_cast<size_t>(gen_() % n); }

 private:
  std::mt19937_64 gen_;
};

// Inverse-CDF map from u in (-0.5, 0.5) to Laplace(scale); u = 0 maps to 0.
double laplace_from_uniform(double u, double scale);

// Seed derivation for named substreams: changing one stage's stream leaves
// all others untouched.
uint64_t substream_seed(uint64_t master, std::string_view name);

inline Rng substream(uint64_t master, std::string_view name) {
  return Rng(substream_seed(master, name));
}

}  // namespace deid
