#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccrec/kernels.hpp"
#include "ccrec/tensor.hpp"

namespace ccrec::nn {

// Fully-connected layer, y = x W + b. Inputs of any rank are treated as
// [rows x in] with the last axis as features.
template <typename T>
struct Affine {
  Parameter<T> w, b;

  Affine() = default;
  Affine(const std::string& name, size_t in, size_t out, Rng& rng)
      : w(name + ".w", {in, out}), b(name + ".b", {out}) {
    init_affine_weight(w.value, in, rng);
  }

  size_t in_dim() const { return w.value.dim(0); }
  size_t out_dim() const { return w.value.dim(1); }

  struct Cache {
    Tensor<T> x;
  };

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
    if (x.cols() != in_dim()) throw DimensionError("affine input width mismatch");
    std::vector<size_t> out_shape = x.shape;
    out_shape.back() = out_dim();
    Tensor<T> y(out_shape);
    gemm_nn<T>(x.rows(), in_dim(), out_dim(), x.data.data(), w.value.data.data(),
               y.data.data(), false);
    add_bias_rows<T>(y.rows(), out_dim(), y.data.data(), b.value.data.data());
    if (cache) cache->x = x;
    return y;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    int64_t rows = dy.rows();
    gemm_tn<T>(rows, in_dim(), out_dim(), cache.x.data.data(), dy.data.data(),
               w.grad.data.data(), true);
    colsum_accum<T>(rows, out_dim(), dy.data.data(), b.grad.data.data());
    Tensor<T> dx(cache.x.shape);
    gemm_nt<T>(rows, out_dim(), in_dim(), dy.data.data(), w.value.data.data(),
               dx.data.data(), false);
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct ReluCache {
  Tensor<T> x;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x, ReluCache<T>* cache) {
  Tensor<T> y(x.shape);
  relu_forward<T>(x.size(), x.data.data(), y.data.data());
  if (cache) cache->x = x;
  return y;
}

template <typename T>
Tensor<T> relu_grad(const ReluCache<T>& cache, const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape);
  relu_backward<T>(dy.size(), cache.x.data.data(), dy.data.data(), dx.data.data());
  return dx;
}

template <typename T>
struct LayerNorm {
  Parameter<T> gamma, beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(const std::string& name, size_t d)
      : gamma(name + ".gamma", {d}), beta(name + ".beta", {d}) {
    gamma.value.fill(T(1));
  }

  size_t dim() const { return gamma.value.dim(0); }

  struct Cache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
  };

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
    size_t d = dim();
    if (x.cols() != d) throw DimensionError("layernorm width mismatch");
    Tensor<T> y(x.shape);
    Tensor<T> xhat(x.shape);
    std::vector<T> inv_std(x.rows());
    layernorm_forward<T>(x.rows(), d, x.data.data(), gamma.value.data.data(),
                         beta.value.data.data(), eps, y.data.data(),
                         xhat.data.data(), inv_std.data());
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape);
    layernorm_backward<T>(dy.rows(), dim(), dy.data.data(), gamma.value.data.data(),
                          cache.xhat.data.data(), cache.inv_std.data(),
                          dx.data.data(), gamma.grad.data.data(),
                          beta.grad.data.data());
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Padded index sequences for one batch. Index 0 is the PAD row; mask marks
// real positions.
struct SeqBatch {
  size_t b = 0, k = 0;
  std::vector<int32_t> idx;
  std::vector<uint8_t> mask;

  bool masked(size_t bi, size_t pos) const { return mask[bi * k + pos] == 0; }
  int32_t at(size_t bi, size_t pos) const { return idx[bi * k + pos]; }
};

template <typename T>
struct Embedding {
  Parameter<T> table;  // [vocab x d]

  Embedding() = default;
  Embedding(const std::string& name, size_t vocab, size_t d, Rng& rng)
      : table(name, {vocab, d}) {
    init_embedding(table.value, rng);
    // Row 0 is PAD; start it at zero (it never receives gradient).
    for (size_t j = 0; j < d; ++j) table.value.at(0, j) = T(0);
  }

  size_t vocab() const { return table.value.dim(0); }
  size_t dim() const { return table.value.dim(1); }

  Tensor<T> forward(const SeqBatch& batch) const {
    size_t d = dim();
    Tensor<T> y({batch.b, batch.k, d});
    int64_t total = static_cast<int64_t>(batch.b * batch.k);
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < total; ++r) {
      int32_t row = batch.idx[r];
      if (row < 0 || static_cast<size_t>(row) >= vocab())
        row = 0;  // out-of-range indices behave as PAD
      const T* src = table.value.data.data() + static_cast<size_t>(row) * d;
      T* dst = y.data.data() + static_cast<size_t>(r) * d;
      for (size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    return y;
  }

  // Scatter-add; parallel over the feature axis so each (row, dim) cell is
  // accumulated serially in batch order.
  void backward(const SeqBatch& batch, const Tensor<T>& dy) {
    int64_t d = dim();
    size_t total = batch.b * batch.k;
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < d; ++j) {
      for (size_t r = 0; r < total; ++r) {
        int32_t row = batch.idx[r];
        if (row <= 0 || static_cast<size_t>(row) >= vocab()) continue;
        table.grad.data[static_cast<size_t>(row) * d + j] += dy.data[r * d + j];
      }
    }
  }

  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&table); }
};

// Sinusoidal position table: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
// PE(pos, 2i+1) = cos with the same angle.
template <typename T>
Tensor<T> make_positional_encoding(size_t k, size_t d) {
  Tensor<T> pe({k, d});
  for (size_t pos = 0; pos < k; ++pos) {
    for (size_t j = 0; j < d; ++j) {
      size_t i = j / 2;
      double expo = static_cast<double>(2 * i) / static_cast<double>(d);
      double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe.at(pos, j) = static_cast<T>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

// Scaled dot-product self-attention over padded sequences. Masked positions
// get exactly zero attention weight (their keys are skipped, not just sunk
// to -inf logits), so they can never influence unmasked outputs.
template <typename T>
struct SelfAttention {
  size_t d = 0, heads = 0;
  Affine<T> q_proj, k_proj, v_proj, o_proj;

  SelfAttention() = default;
  SelfAttention(const std::string& name, size_t d_, size_t heads_, Rng& rng)
      : d(d_),
        heads(heads_),
        q_proj(name + ".q", d_, d_, rng),
        k_proj(name + ".k", d_, d_, rng),
        v_proj(name + ".v", d_, d_, rng),
        o_proj(name + ".o", d_, d_, rng) {
    if (heads == 0 || d % heads != 0)
      throw ConfigError("attention width must be divisible by head count");
  }

  size_t head_dim() const { return d / heads; }

  struct Cache {
    typename Affine<T>::Cache qc, kc, vc, oc;
    Tensor<T> q, k, v;     // [b, k, d]
    Tensor<T> weights;     // [b, heads, k, k]
    Tensor<T> ctx;         // [b, k, d]
    const SeqBatch* batch = nullptr;
  };

  Tensor<T> forward(const Tensor<T>& x, const SeqBatch& batch, Cache& cache) const {
    size_t B = batch.b, K = batch.k, dh = head_dim();
    T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    cache.batch = &batch;
    cache.q = q_proj.forward(x, &cache.qc);
    cache.k = k_proj.forward(x, &cache.kc);
    cache.v = v_proj.forward(x, &cache.vc);
    cache.weights = Tensor<T>({B, heads, K, K});
    cache.ctx = Tensor<T>({B, K, d});
    int64_t bh = static_cast<int64_t>(B * heads);
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < bh; ++t) {
      size_t bi = static_cast<size_t>(t) / heads;
      size_t h = static_cast<size_t>(t) % heads;
      const T* qb = cache.q.data.data() + bi * K * d + h * dh;
      const T* kb = cache.k.data.data() + bi * K * d + h * dh;
      const T* vb = cache.v.data.data() + bi * K * d + h * dh;
      T* wb = cache.weights.data.data() + (bi * heads + h) * K * K;
      T* cb = cache.ctx.data.data() + bi * K * d + h * dh;
      for (size_t i = 0; i < K; ++i) {
        T* wrow = wb + i * K;
        for (size_t j = 0; j < K; ++j) wrow[j] = T(0);
        if (batch.masked(bi, i)) continue;
        // Stable softmax over unmasked keys only.
        T mx = T(0);
        bool any = false;
        for (size_t j = 0; j < K; ++j) {
          if (batch.masked(bi, j)) continue;
          T s = T(0);
          const T* qi = qb + i * d;
          const T* kj = kb + j * d;
          for (size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scale;
          wrow[j] = s;
          if (!any || s > mx) mx = s;
          any = true;
        }
        T denom = T(0);
        for (size_t j = 0; j < K; ++j) {
          if (batch.masked(bi, j)) continue;
          wrow[j] = std::exp(wrow[j] - mx);
          denom += wrow[j];
        }
        for (size_t j = 0; j < K; ++j) {
          if (batch.masked(bi, j)) continue;
          wrow[j] /= denom;
        }
        T* ci = cb + i * d;
        for (size_t c = 0; c < dh; ++c) ci[c] = T(0);
        for (size_t j = 0; j < K; ++j) {
          T wij = wrow[j];
          if (wij == T(0)) continue;
          const T* vj = vb + j * d;
          for (size_t c = 0; c < dh; ++c) ci[c] += wij * vj[c];
        }
      }
    }
    return o_proj.forward(cache.ctx, &cache.oc);
  }

  Tensor<T> backward(Cache& cache, const Tensor<T>& dout) {
    const SeqBatch& batch = *cache.batch;
    size_t B = batch.b, K = batch.k, dh = head_dim();
    T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    Tensor<T> dctx = o_proj.backward(cache.oc, dout);
    Tensor<T> dq({B, K, d}), dk({B, K, d}), dv({B, K, d});
    int64_t bh = static_cast<int64_t>(B * heads);
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < bh; ++t) {
      size_t bi = static_cast<size_t>(t) / heads;
      size_t h = static_cast<size_t>(t) % heads;
      const T* qb = cache.q.data.data() + bi * K * d + h * dh;
      const T* kb = cache.k.data.data() + bi * K * d + h * dh;
      const T* vb = cache.v.data.data() + bi * K * d + h * dh;
      const T* wb = cache.weights.data.data() + (bi * heads + h) * K * K;
      const T* dcb = dctx.data.data() + bi * K * d + h * dh;
      T* dqb = dq.data.data() + bi * K * d + h * dh;
      T* dkb = dk.data.data() + bi * K * d + h * dh;
      T* dvb = dv.data.data() + bi * K * d + h * dh;
      // dV[j] = sum_i w[i][j] * dctx[i]
      for (size_t j = 0; j < K; ++j) {
        T* dvj = dvb + j * d;
        if (batch.masked(bi, j)) continue;
        for (size_t c = 0; c < dh; ++c) {
          T acc = T(0);
          for (size_t i = 0; i < K; ++i) acc += wb[i * K + j] * dcb[i * d + c];
          dvj[c] = acc;
        }
      }
      for (size_t i = 0; i < K; ++i) {
        if (batch.masked(bi, i)) continue;
        const T* wrow = wb + i * K;
        const T* dci = dcb + i * d;
        // dA[i][j] = dctx[i] . v[j], then softmax backward within the row.
        T dot_sum = T(0);
        std::vector<T> da(K, T(0));
        for (size_t j = 0; j < K; ++j) {
          if (batch.masked(bi, j)) continue;
          T acc = T(0);
          const T* vj = vb + j * d;
          for (size_t c = 0; c < dh; ++c) acc += dci[c] * vj[c];
          da[j] = acc;
          dot_sum += wrow[j] * acc;
        }
        for (size_t j = 0; j < K; ++j) {
          if (batch.masked(bi, j)) continue;
          T ds = wrow[j] * (da[j] - dot_sum) * scale;
          const T* kj = kb + j * d;
          const T* qi = qb + i * d;
          T* dqi = dqb + i * d;
          T* dkj = dkb + j * d;
          for (size_t c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
    Tensor<T> dx = q_proj.backward(cache.qc, dq);
    Tensor<T> dxk = k_proj.backward(cache.kc, dk);
    Tensor<T> dxv = v_proj.backward(cache.vc, dv);
    add_elementwise<T>(dx.size(), dx.data.data(), dxk.data.data(), dx.data.data());
    add_elementwise<T>(dx.size(), dx.data.data(), dxv.data.data(), dx.data.data());
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    q_proj.collect(out);
    k_proj.collect(out);
    v_proj.collect(out);
    o_proj.collect(out);
  }
};

// Post-norm encoder block: attention + residual + layernorm, position-wise
// feed-forward + residual + layernorm.
template <typename T>
struct EncoderLayer {
  SelfAttention<T> attn;
  LayerNorm<T> ln1, ln2;
  Affine<T> ff1, ff2;

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, size_t d, size_t heads, size_t ff_dim, Rng& rng)
      : attn(name + ".attn", d, heads, rng),
        ln1(name + ".ln1", d),
        ln2(name + ".ln2", d),
        ff1(name + ".ff1", d, ff_dim, rng),
        ff2(name + ".ff2", ff_dim, d, rng) {}

  struct Cache {
    typename SelfAttention<T>::Cache attn;
    typename LayerNorm<T>::Cache ln1, ln2;
    typename Affine<T>::Cache ff1, ff2;
    ReluCache<T> act;
  };

  Tensor<T> forward(const Tensor<T>& x, const SeqBatch& batch, Cache& cache) const {
    Tensor<T> a = attn.forward(x, batch, cache.attn);
    add_elementwise<T>(a.size(), x.data.data(), a.data.data(), a.data.data());
    Tensor<T> x1 = ln1.forward(a, &cache.ln1);
    Tensor<T> h = relu(ff1.forward(x1, &cache.ff1), &cache.act);
    Tensor<T> f = ff2.forward(h, &cache.ff2);
    add_elementwise<T>(f.size(), x1.data.data(), f.data.data(), f.data.data());
    return ln2.forward(f, &cache.ln2);
  }

  Tensor<T> backward(Cache& cache, const Tensor<T>& dout) {
    Tensor<T> ds2 = ln2.backward(cache.ln2, dout);
    Tensor<T> dh = ff2.backward(cache.ff2, ds2);
    Tensor<T> dpre = relu_grad(cache.act, dh);
    Tensor<T> dx1 = ff1.backward(cache.ff1, dpre);
    add_elementwise<T>(dx1.size(), dx1.data.data(), ds2.data.data(), dx1.data.data());
    Tensor<T> ds1 = ln1.backward(cache.ln1, dx1);
    Tensor<T> dx = attn.backward(cache.attn, ds1);
    add_elementwise<T>(dx.size(), dx.data.data(), ds1.data.data(), dx.data.data());
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    attn.collect(out);
    ln1.collect(out);
    ff1.collect(out);
    ff2.collect(out);
    ln2.collect(out);
  }
};

template <typename T>
struct TransformerEncoder {
  std::vector<EncoderLayer<T>> layers;

  TransformerEncoder() = default;
  TransformerEncoder(const std::string& name, size_t num_layers, size_t d,
                     size_t heads, size_t ff_dim, Rng& rng) {
    for (size_t i = 0; i < num_layers; ++i)
      layers.emplace_back(name + ".l" + std::to_string(i), d, heads, ff_dim, rng);
  }

  struct Cache {
    std::vector<typename EncoderLayer<T>::Cache> per_layer;
  };

  Tensor<T> forward(const Tensor<T>& x, const SeqBatch& batch, Cache& cache) const {
    cache.per_layer.resize(layers.size());
    Tensor<T> h = x;
    for (size_t i = 0; i < layers.size(); ++i)
      h = layers[i].forward(h, batch, cache.per_layer[i]);
    return h;
  }

  Tensor<T> backward(Cache& cache, const Tensor<T>& dout) {
    Tensor<T> d = dout;
    for (size_t i = layers.size(); i-- > 0;)
      d = layers[i].backward(cache.per_layer[i], d);
    return d;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

enum class Pooling { Mean, Last };

template <typename T>
struct PoolCache {
  const SeqBatch* batch = nullptr;
  Pooling mode = Pooling::Mean;
  std::vector<size_t> count;  // unmasked positions per example
  std::vector<int64_t> last;  // last unmasked position per example
};

// Pools unmasked positions of [b, k, d] down to [b, d]. Errors on an
// all-masked example (empty history).
template <typename T>
Tensor<T> pool_sequence(const Tensor<T>& h, const SeqBatch& batch, Pooling mode,
                        PoolCache<T>& cache) {
  size_t B = batch.b, K = batch.k, d = h.cols();
  cache.batch = &batch;
  cache.mode = mode;
  cache.count.assign(B, 0);
  cache.last.assign(B, -1);
  Tensor<T> out({B, d});
  for (size_t bi = 0; bi < B; ++bi) {
    for (size_t p = 0; p < K; ++p) {
      if (!batch.masked(bi, p)) {
        cache.count[bi]++;
        cache.last[bi] = static_cast<int64_t>(p);
      }
    }
    if (cache.count[bi] == 0) throw DataError("example has an empty history");
  }
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < static_cast<int64_t>(B); ++bi) {
    T* o = out.data.data() + bi * d;
    if (mode == Pooling::Last) {
      const T* src = h.data.data() + (bi * K + cache.last[bi]) * d;
      for (size_t j = 0; j < d; ++j) o[j] = src[j];
    } else {
      T inv = T(1) / static_cast<T>(cache.count[bi]);
      for (size_t j = 0; j < d; ++j) o[j] = T(0);
      for (size_t p = 0; p < K; ++p) {
        if (batch.masked(bi, p)) continue;
        const T* src = h.data.data() + (bi * K + p) * d;
        for (size_t j = 0; j < d; ++j) o[j] += src[j] * inv;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool_sequence_grad(const PoolCache<T>& cache, const Tensor<T>& dpooled,
                             size_t k) {
  const SeqBatch& batch = *cache.batch;
  size_t B = batch.b, d = dpooled.cols();
  Tensor<T> dh({B, k, d});
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < static_cast<int64_t>(B); ++bi) {
    const T* dp = dpooled.data.data() + bi * d;
    if (cache.mode == Pooling::Last) {
      T* dst = dh.data.data() + (bi * k + cache.last[bi]) * d;
      for (size_t j = 0; j < d; ++j) dst[j] = dp[j];
    } else {
      T inv = T(1) / static_cast<T>(cache.count[bi]);
      for (size_t p = 0; p < k; ++p) {
        if (batch.masked(bi, p)) continue;
        T* dst = dh.data.data() + (bi * k + p) * d;
        for (size_t j = 0; j < d; ++j) dst[j] = dp[j] * inv;
      }
    }
  }
  return dh;
}

}  // namespace ccrec::nn
