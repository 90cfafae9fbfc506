#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "error.hpp"

namespace deid {

using Vec = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
};

inline double dot(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double norm1(const Vec& x) {
  double s = 0.0;
  for (double v : x) s += std::abs(v);
  return s;
}

inline Vec normalized(const Vec& x) {
  double r = norm2(x);
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw Error(ErrorKind::Numeric, "cannot normalize zero or non-finite vector");
  }
  Vec y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] / r;
  return y;
}

// Gradient of y = x / |x| given upstream gradient g on y.
inline Vec normalize_backward(const Vec& x, const Vec& g) {
  double r = norm2(x);
  Vec y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] / r;
  double gy = dot(g, y);
  Vec dx(x.size());
  for (size_t i = 0; i < x.size(); ++i) dx[i] = (g[i] - y[i] * gy) / r;
  return dx;
}

inline double l2_distance(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double l1_distance(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
  return s;
}

// cos(u, v) with explicit norm division; throws on zero vectors.
inline double cosine(const Vec& u, const Vec& v) {
  double nu = norm2(u);
  double nv = norm2(v);
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw Error(ErrorKind::Numeric, "cosine of zero-norm vector");
  }
  return dot(u, v) / (nu * nv);
}

// d cos(u, v) / dv with u treated as constant.
inline Vec cosine_backward_v(const Vec& u, const Vec& v, double upstream) {
  double nu = norm2(u);
  double nv = norm2(v);
  double c = dot(u, v) / (nu * nv);
  Vec dv(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    dv[i] = upstream * (u[i] / (nu * nv) - c * v[i] / (nv * nv));
  }
  return dv;
}

inline Vec concat(const Vec& x, const Vec& y) {
  Vec out;
  out.reserve(x.size() + y.size());
  out.insert(out.end(), x.begin(), x.end());
  out.insert(out.end(), y.begin(), y.end());
  return out;
}

inline bool all_finite(const Vec& x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace deid
