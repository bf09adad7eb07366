#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "ccrec/error.hpp"
#include "ccrec/rng.hpp"

namespace ccrec::nn {

// Dense row-major tensor. Rank is dynamic; math kernels treat the last axis
// as the feature axis and flatten the leading ones.
template <typename T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw DimensionError("tensor data does not match shape");
  }

  static size_t count(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  size_t size() const { return data.size(); }
  size_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  // Rows/cols with the last axis as columns.
  size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  size_t rows() const { return shape.empty() ? 0 : size() / shape.back(); }

  T& at(size_t i, size_t j) { return data[i * cols() + j]; }
  const T& at(size_t i, size_t j) const { return data[i * cols() + j]; }

  T& at(size_t i, size_t j, size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(size_t i, size_t j, size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  Tensor reshaped(std::vector<size_t> s) const {
    if (count(s) != size()) throw DimensionError("reshape changes element count");
    Tensor out = *this;
    out.shape = std::move(s);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
  if (!all_finite(t)) throw NumericError(what + " contains a non-finite value");
}

// Learnable tensor plus its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<size_t> shape)
      : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.zero(); }
};

template <typename T>
void init_affine_weight(Tensor<T>& w, size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_embedding(Tensor<T>& e, Rng& rng, double stddev = 0.01) {
  for (auto& v : e.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

}  // namespace ccrec::nn
