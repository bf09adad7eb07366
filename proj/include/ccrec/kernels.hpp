#pragma once

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ccrec/tensor.hpp"

// Parallel compute kernels. Every kernel parallelizes across independent
// output elements only; the reduction feeding each element stays serial and
// in fixed order, so results are bitwise identical for any thread count.
// Serial reference implementations live in reference.hpp.
namespace ccrec::nn {

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// C[m x n] (+)= A[m x kk] * B[kk x n]
template <typename T>
void gemm_nn(int64_t m, int64_t kk, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + i * kk;
    for (int64_t k = 0; k < kk; ++k) {
      T aik = arow[k];
      const T* brow = b + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x kk] * B^T where B is [n x kk]
template <typename T>
void gemm_nt(int64_t m, int64_t kk, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * kk;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * kk;
      T acc = T(0);
      for (int64_t k = 0; k < kk; ++k) acc += arow[k] * brow[k];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C[m x n] (+)= A^T * B where A is [r x m], B is [r x n]
template <typename T>
void gemm_tn(int64_t r, int64_t m, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    for (int64_t k = 0; k < r; ++k) {
      T aki = a[k * m + i];
      const T* brow = b + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
}

template <typename T>
void add_bias_rows(int64_t rows, int64_t n, T* y, const T* bias) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    T* row = y + i * n;
    for (int64_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

// db[j] += sum over rows of dy[r][j]; parallel over columns, rows in order.
template <typename T>
void colsum_accum(int64_t rows, int64_t n, const T* dy, T* db) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < n; ++j) {
    T acc = T(0);
    for (int64_t r = 0; r < rows; ++r) acc += dy[r * n + j];
    db[j] += acc;
  }
}

template <typename T>
void relu_forward(int64_t n, const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(int64_t n, const T* x, const T* dy, T* dx) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void add_elementwise(int64_t n, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

// y = gamma * (x - mean) / sqrt(var + eps) + beta, per row.
// Caches xhat and inv_std for the backward pass.
template <typename T>
void layernorm_forward(int64_t rows, int64_t d, const T* x, const T* gamma,
                       const T* beta, T eps, T* y, T* xhat, T* inv_std) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T dlt = xr[j] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<T>(d);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    T* xh = xhat + r * d;
    T* yr = y + r * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * is;
      yr[j] = gamma[j] * xh[j] + beta[j];
    }
  }
}

template <typename T>
void layernorm_backward(int64_t rows, int64_t d, const T* dy, const T* gamma,
                        const T* xhat, const T* inv_std, T* dx, T* dgamma,
                        T* dbeta) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * d;
    const T* xh = xhat + r * d;
    T* dxr = dx + r * d;
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T dxh = dyr[j] * gamma[j];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xh[j];
    }
    T inv_d = T(1) / static_cast<T>(d);
    for (int64_t j = 0; j < d; ++j) {
      T dxh = dyr[j] * gamma[j];
      dxr[j] = inv_std[r] * (dxh - inv_d * sum_dxhat - inv_d * xh[j] * sum_dxhat_xhat);
    }
  }
  // Parameter gradients reduce across rows per output column.
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < d; ++j) {
    T accg = T(0), accb = T(0);
    for (int64_t r = 0; r < rows; ++r) {
      accg += dy[r * d + j] * xhat[r * d + j];
      accb += dy[r * d + j];
    }
    dgamma[j] += accg;
    dbeta[j] += accb;
  }
}

// Row-wise log-softmax with max subtraction.
template <typename T>
void log_softmax_rows(int64_t rows, int64_t n, const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T* yr = y + r * n;
    T mx = xr[0];
    for (int64_t j = 1; j < n; ++j)
      if (xr[j] > mx) mx = xr[j];
    T sum = T(0);
    for (int64_t j = 0; j < n; ++j) sum += std::exp(xr[j] - mx);
    T lse = mx + std::log(sum);
    for (int64_t j = 0; j < n; ++j) yr[j] = xr[j] - lse;
  }
}

// dx = dy - softmax(x) * rowsum(dy), given cached logp = log_softmax(x).
template <typename T>
void log_softmax_backward(int64_t rows, int64_t n, const T* logp, const T* dy,
                          T* dx) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* lp = logp + r * n;
    const T* dyr = dy + r * n;
    T* dxr = dx + r * n;
    T s = T(0);
    for (int64_t j = 0; j < n; ++j) s += dyr[j];
    for (int64_t j = 0; j < n; ++j) dxr[j] = dyr[j] - std::exp(lp[j]) * s;
  }
}

}  // namespace ccrec::nn
