#include "rng.hpp"

#include <cmath>

namespace deid {

double laplace_from_uniform(double u, double scale) {
  if (scale < 0.0) {
    throw Error(ErrorKind::Config, "laplace scale must be nonnegative");
  }
  if (scale == 0.0 || u == 0.0) return 0.0;
  double sign = u > 0.0 ? 1.0 : -1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::abs(u));
}

double Rng::laplace(double scale) {
  if (scale < 0.0) {
    throw Error(ErrorKind::Config, "laplace scale must be nonnegative");
  }
  if (scale == 0.0) {
    return 0.0;  // degenerate mechanism; consume no randomness
  }
  double u = uniform01() - 0.5;
  return laplace_from_uniform(u, scale);
}

namespace {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t substream_seed(uint64_t master, std::string_view name) {
  return splitmix64(splitmix64(master) ^ fnv1a64(name));
}

}  // namespace deid
