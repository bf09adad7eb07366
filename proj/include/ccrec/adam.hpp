#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ccrec/tensor.hpp"

namespace ccrec::nn {

// Adam with bias correction: m/(1-b1^t), v/(1-b2^t), eps added outside the
// square root.
template <typename T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void bind(const std::vector<Parameter<T>*>& params) {
    slots_.clear();
    for (auto* p : params) {
      slots_.push_back({Tensor<T>(p->value.shape), Tensor<T>(p->value.shape)});
    }
    step_ = 0;
  }

  void step(const std::vector<Parameter<T>*>& params) {
    if (slots_.size() != params.size())
      throw ContractError("optimizer not bound to this parameter list");
    ++step_;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(step_)));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(step_)));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Parameter<T>& p = *params[pi];
      Tensor<T>& m = slots_[pi].m;
      Tensor<T>& v = slots_[pi].v;
      int64_t n = static_cast<int64_t>(p.value.size());
      const T* g = p.grad.data.data();
      T* mv = m.data.data();
      T* vv = v.data.data();
      T* w = p.value.data.data();
      for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(g[i])))
          throw NumericError("non-finite gradient in " + p.name);
        mv[i] = beta1_ * mv[i] + (T(1) - beta1_) * g[i];
        vv[i] = beta2_ * vv[i] + (T(1) - beta2_) * g[i] * g[i];
        T mhat = mv[i] / bc1;
        T vhat = vv[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t steps_taken() const { return step_; }
  T lr() const { return lr_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  T lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::vector<Slot> slots_;
};

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace ccrec::nn
