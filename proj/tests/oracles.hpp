// Independent reference computations used as test oracles. These must stay
// decoupled from the implementation paths they check: plain loops only.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "adsac/matrix.hpp"

namespace oracle {

inline adsac::nn::Matrix naive_matmul(const adsac::nn::Matrix& a, const adsac::nn::Matrix& b) {
  adsac::nn::Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back(std::exp(v - mx) / z);
  return out;
}

// Dense scaled dot-product attention, elementwise loops throughout.
inline adsac::nn::Matrix naive_attention(const adsac::nn::Matrix& q, const adsac::nn::Matrix& k,
                                         const adsac::nn::Matrix& v) {
  const int n = q.rows;
  const int dk = q.cols;
  const int dv = v.cols;
  adsac::nn::Matrix out(n, dv);
  for (int i = 0; i < n; ++i) {
    std::vector<double> scores(static_cast<std::size_t>(k.rows));
    for (int j = 0; j < k.rows; ++j) {
      double s = 0.0;
      for (int d = 0; d < dk; ++d) s += q.at(i, d) * k.at(j, d);
      scores[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dk));
    }
    const std::vector<double> w = naive_softmax(scores);
    for (int d = 0; d < dv; ++d) {
      double acc = 0.0;
      for (int j = 0; j < k.rows; ++j) acc += w[static_cast<std::size_t>(j)] * v.at(j, d);
      out.at(i, d) = acc;
    }
  }
  return out;
}

// Unrolls the zero-predictor variance recurrence V_{t-1} = V_t / alpha_t + sigma_t^2
// from V_T = 1 down to V_0.
inline double zero_predictor_variance(const std::vector<double>& alpha,
                                      const std::vector<double>& sigma) {
  double v = 1.0;
  for (int t = static_cast<int>(alpha.size()); t >= 1; --t) {
    v = v / alpha[static_cast<std::size_t>(t - 1)] +
        sigma[static_cast<std::size_t>(t - 1)] * sigma[static_cast<std::size_t>(t - 1)];
  }
  return v;
}

}  // namespace oracle
