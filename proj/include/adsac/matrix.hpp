#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#if defined(ADSAC_HAVE_OPENBLAS)
#include <cblas-openblas.h>
extern "C" void openblas_set_num_threads(int num_threads);
#endif

namespace adsac::nn {

// Dense row-major matrix of doubles. Row and column vectors are 1xN / Nx1.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::initializer_list<double> init) : rows(r), cols(c), data(init) {
    if (data.size() != static_cast<std::size_t>(r) * c)
      throw std::invalid_argument("Matrix: initializer size does not match shape");
  }

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix full(int r, int c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
  }
  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
  static Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<int>(v.size()));
    m.data.assign(v);
    return m;
  }
  static Matrix row(const std::vector<double>& v) {
    Matrix m(1, static_cast<int>(v.size()));
    m.data = v;
    return m;
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  void fill(double v) {
    for (double& x : data) x = v;
  }
  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::logic_error(std::string("shape mismatch in ") + what);
}

namespace detail {

#if defined(ADSAC_HAVE_OPENBLAS)
inline void blas_init_once() {
  static const bool done = [] {
    openblas_set_num_threads(1);  // keep results independent of machine thread count
    return true;
  }();
  (void)done;
}
#endif

}  // namespace detail

// C = alpha * op(A) * op(B) + beta * C, with op = transpose when the flag is set.
inline void gemm(bool trans_a, bool trans_b, double alpha, const Matrix& a, const Matrix& b,
                 double beta, Matrix& c) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  check_shape(k == kb && c.rows == m && c.cols == n, "gemm");
#if defined(ADSAC_HAVE_OPENBLAS)
  detail::blas_init_once();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.data.data(), a.cols,
              b.data.data(), b.cols, beta, c.data.data(), c.cols);
#else
  if (beta == 0.0) {
    c.fill(0.0);
  } else if (beta != 1.0) {
    for (double& x : c.data) x *= beta;
  }
  if (!trans_a && !trans_b) {
    for (int i = 0; i < m; ++i) {
      double* ci = c.row_ptr(i);
      for (int p = 0; p < k; ++p) {
        const double aip = alpha * a.at(i, p);
        const double* bp = b.row_ptr(p);
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < m; ++i) {
      const double* ai = a.row_ptr(i);
      for (int j = 0; j < n; ++j) {
        const double* bj = b.row_ptr(j);
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        c.at(i, j) += alpha * acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int p = 0; p < k; ++p) {
      const double* ap = a.row_ptr(p);
      const double* bp = b.row_ptr(p);
      for (int i = 0; i < m; ++i) {
        const double api = alpha * ap[i];
        double* ci = c.row_ptr(i);
        for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a.at(p, i) * b.at(j, p);
        c.at(i, j) += alpha * acc;
      }
  }
#endif
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  gemm(false, false, 1.0, a, b, 0.0, c);
  return c;
}

}  // namespace adsac::nn
