#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "adsac/matrix.hpp"

namespace adsac::nn {

// W x + b for a single column vector x. W is (out, in), b is (out, 1) or (1, out).
inline Matrix linear_forward(const Matrix& w, const Matrix& b, const Matrix& x) {
  check_shape(x.cols == 1 && w.cols == x.rows, "linear_forward");
  check_shape(static_cast<int>(b.size()) == w.rows, "linear_forward bias");
  Matrix y(w.rows, 1);
  for (int i = 0; i < w.rows; ++i) {
    const double* wi = w.row_ptr(i);
    double acc = b.data[static_cast<std::size_t>(i)];
    for (int j = 0; j < w.cols; ++j) acc += wi[j] * x.data[static_cast<std::size_t>(j)];
    y.data[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

// Numerically stable softmax over a flat range, in place.
inline void softmax_inplace(std::span<double> x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

inline std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  softmax_inplace(out);
  return out;
}

inline Matrix softmax(const Matrix& x) {
  Matrix out = x;
  for (int i = 0; i < out.rows; ++i) softmax_inplace({out.row_ptr(i), static_cast<std::size_t>(out.cols)});
  return out;
}

// Sinusoidal timestep embedding: pairs (sin(t * w_i), cos(t * w_i)) with
// w_i = 10000^(-2i/d), laid out [sin_0, cos_0, sin_1, cos_1, ...]. Returns (1, d).
inline Matrix sinusoidal_embed(std::int64_t t, int d) {
  if (d <= 0 || d % 2 != 0) throw std::invalid_argument("sinusoidal_embed: dimension must be even and positive");
  if (t < 0) throw std::invalid_argument("sinusoidal_embed: timestep must be non-negative");
  Matrix out(1, d);
  for (int i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d));
    const double arg = static_cast<double>(t) * freq;
    out.data[static_cast<std::size_t>(2 * i)] = std::sin(arg);
    out.data[static_cast<std::size_t>(2 * i + 1)] = std::cos(arg);
  }
  return out;
}

// Scaled dot-product attention over a token sequence:
// softmax(Q K^T / sqrt(d_k)) V, softmax applied per query row.
// Q, K are (n, d_k); V is (n, d_v).
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  check_shape(q.cols == k.cols && k.rows == v.rows, "attention");
  Matrix scores(q.rows, k.rows);
  gemm(false, true, 1.0 / std::sqrt(static_cast<double>(q.cols)), q, k, 0.0, scores);
  const Matrix weights = softmax(scores);
  return matmul(weights, v);
}

}  // namespace adsac::nn
