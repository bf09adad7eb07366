#pragma once

#include <cmath>
#include <cstdint>

// Naive single-threaded reference kernels. Kept deliberately independent of
// the OpenMP implementations in kernels.hpp; tests validate the parallel
// kernels against these and the benchmark tool compares their throughput.
namespace ccrec::nn::ref {

template <typename T>
void gemm_nn(int64_t m, int64_t kk, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (int64_t k = 0; k < kk; ++k) acc += a[i * kk + k] * b[k * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_nt(int64_t m, int64_t kk, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (int64_t k = 0; k < kk; ++k) acc += a[i * kk + k] * b[j * kk + k];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_tn(int64_t r, int64_t m, int64_t n, const T* a, const T* b, T* c,
             bool accumulate = false) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (int64_t k = 0; k < r; ++k) acc += a[k * m + i] * b[k * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void layernorm_forward(int64_t rows, int64_t d, const T* x, const T* gamma,
                       const T* beta, T eps, T* y) {
  for (int64_t r = 0; r < rows; ++r) {
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += x[r * d + j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T dlt = x[r * d + j] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<T>(d);
    T is = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j)
      y[r * d + j] = gamma[j] * (x[r * d + j] - mean) * is + beta[j];
  }
}

template <typename T>
void log_softmax_rows(int64_t rows, int64_t n, const T* x, T* y) {
  for (int64_t r = 0; r < rows; ++r) {
    T mx = x[r * n];
    for (int64_t j = 1; j < n; ++j)
      if (x[r * n + j] > mx) mx = x[r * n + j];
    T sum = T(0);
    for (int64_t j = 0; j < n; ++j) sum += std::exp(x[r * n + j] - mx);
    T lse = mx + std::log(sum);
    for (int64_t j = 0; j < n; ++j) y[r * n + j] = x[r * n + j] - lse;
  }
}

}  // namespace ccrec::nn::ref
