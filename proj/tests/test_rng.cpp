#include <cmath>

#include "core/rng.hpp"
#include "doctest.h"

using namespace deid;

TEST_SUITE("rng") {

TEST_CASE("substreams are stable and independent of each other") {
  CHECK(substream_seed(42, "world") == substream_seed(42, "world"));
  CHECK(substream_seed(42, "world") != substream_seed(42, "phase1"));
  CHECK(substream_seed(42, "world") != substream_seed(43, "world"));
}

TEST_CASE("uniform01 stays inside the open unit interval") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform01();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("laplace transform hits the median exactly") {
  CHECK(laplace_from_uniform(0.0, 1.5) == 0.0);
  CHECK(laplace_from_uniform(0.25, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(laplace_from_uniform(-0.25, 1.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("zero scale collapses the mechanism to the identity") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) CHECK(rng.laplace(0.0) == 0.0);
}

TEST_CASE("negative scale is rejected") {
  Rng rng(3);
  CHECK_THROWS_AS(rng.laplace(-1.0), Error);
}

TEST_CASE("laplace empirical variance matches 2b^2") {
  // b = 1.5 -> variance 4.5; Monte Carlo within 2%.
  Rng rng(12345);
  const int n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = rng.laplace(1.5);
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(var == doctest::Approx(4.5).epsilon(0.02));
}

TEST_CASE("normal moments are sane") {
  Rng rng(99);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("identical seeds give identical streams") {
  Rng a(2024), b(2024);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
}

}  // TEST_SUITE
