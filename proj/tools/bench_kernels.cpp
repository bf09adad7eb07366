// Compares the OpenMP kernels against the serial reference implementations:
// correctness (max abs diff) and wall-clock timing at the host thread count.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ccrec/kernels.hpp"
#include "ccrec/reference.hpp"
#include "ccrec/rng.hpp"

using ccrec::nn::Tensor;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

void fill(Tensor<float>& t, ccrec::Rng& rng) {
  for (auto& v : t.data) v = float(rng.uniform(-1.0, 1.0));
}

}  // namespace

int main() {
  ccrec::Rng rng(7);
  const int reps = 5;
  std::printf("threads available: %d\n\n", ccrec::nn::max_threads());
  std::printf("%-28s %10s %10s %8s %12s\n", "kernel", "ref ms", "omp ms",
              "speedup", "max|diff|");

  {
    size_t m = 256, k = 192, n = 256;
    Tensor<float> a({m, k}), b({k, n}), c1({m, n}), c2({m, n});
    fill(a, rng);
    fill(b, rng);
    double tr = time_ms([&] { ccrec::nn::ref::gemm_nn(m, k, n, a.data.data(), b.data.data(), c1.data.data()); }, reps);
    double tp = time_ms([&] { ccrec::nn::gemm_nn(m, k, n, a.data.data(), b.data.data(), c2.data.data()); }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %12.3e\n", "gemm_nn 256x192x256", tr, tp,
                tr / tp, max_abs_diff(c1, c2));
  }
  {
    size_t m = 256, k = 192, n = 256;
    Tensor<float> a({m, k}), b({n, k}), c1({m, n}), c2({m, n});
    fill(a, rng);
    fill(b, rng);
    double tr = time_ms([&] { ccrec::nn::ref::gemm_nt(m, k, n, a.data.data(), b.data.data(), c1.data.data()); }, reps);
    double tp = time_ms([&] { ccrec::nn::gemm_nt(m, k, n, a.data.data(), b.data.data(), c2.data.data()); }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %12.3e\n", "gemm_nt 256x192x256", tr, tp,
                tr / tp, max_abs_diff(c1, c2));
  }
  {
    size_t r = 256, m = 192, n = 256;
    Tensor<float> a({r, m}), b({r, n}), c1({m, n}), c2({m, n});
    fill(a, rng);
    fill(b, rng);
    double tr = time_ms([&] {
      c1.zero();
      ccrec::nn::ref::gemm_tn(r, m, n, a.data.data(), b.data.data(), c1.data.data());
    }, reps);
    double tp = time_ms([&] {
      c2.zero();
      ccrec::nn::gemm_tn(r, m, n, a.data.data(), b.data.data(), c2.data.data());
    }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %12.3e\n", "gemm_tn 256x192x256", tr, tp,
                tr / tp, max_abs_diff(c1, c2));
  }
  {
    size_t rows = 4096, cols = 256;
    Tensor<float> x({rows, cols}), g({cols}), bta({cols});
    fill(x, rng);
    for (auto& v : g.data) v = 1.0f;
    Tensor<float> y1({rows, cols}), y2({rows, cols});
    Tensor<float> xh({rows, cols}), inv({rows});
    double tr = time_ms([&] {
      ccrec::nn::ref::layernorm_forward(rows, cols, x.data.data(), g.data.data(),
                                        bta.data.data(), 1e-5f, y1.data.data());
    }, reps);
    double tp = time_ms([&] {
      ccrec::nn::layernorm_forward(rows, cols, x.data.data(), g.data.data(),
                                   bta.data.data(), 1e-5f, y2.data.data(),
                                   xh.data.data(), inv.data.data());
    }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %12.3e\n", "layernorm 4096x256", tr, tp,
                tr / tp, max_abs_diff(y1, y2));
  }
  {
    size_t rows = 4096, cols = 256;
    Tensor<float> x({rows, cols}), y1({rows, cols}), y2({rows, cols});
    fill(x, rng);
    double tr = time_ms([&] {
      ccrec::nn::ref::log_softmax_rows(rows, cols, x.data.data(), y1.data.data());
    }, reps);
    double tp = time_ms([&] {
      ccrec::nn::log_softmax_rows(rows, cols, x.data.data(), y2.data.data());
    }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %12.3e\n", "log_softmax 4096x256", tr, tp,
                tr / tp, max_abs_diff(y1, y2));
  }
  return 0;
}
