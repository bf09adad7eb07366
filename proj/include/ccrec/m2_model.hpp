#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ccrec/layers.hpp"

namespace ccrec {

enum class LossMode { Literal, WeightedScore, WeightedMse };

struct M2Config {
  size_t num_categories = 0;
  size_t d2 = 64;
  size_t latent = 0;
  size_t scorer_hidden = 128;
  LossMode mode = LossMode::WeightedScore;

  void validate() const {
    if (num_categories == 0) throw ConfigError("num_categories must be positive");
    if (d2 == 0 || latent == 0 || scorer_hidden == 0)
      throw ConfigError("model dimensions must be positive");
  }
};

// Flattened re-ranker batch. Per example: the latents of its most recent
// past groups, its recent category indices, and the candidate list with the
// first-stage probabilities (and, for training, binary membership targets).
template <typename T>
struct M2Batch {
  size_t latent_dim = 0;
  std::vector<T> latents;            // [total_groups x latent_dim]
  std::vector<size_t> group_offset;  // size B+1
  std::vector<int32_t> delta;
  std::vector<size_t> delta_offset;  // size B+1
  std::vector<int32_t> cand;
  std::vector<size_t> cand_offset;   // size B+1
  std::vector<T> y_m1;               // aligned with cand
  std::vector<T> y_true;             // aligned with cand; empty when predicting

  size_t size() const { return cand_offset.empty() ? 0 : cand_offset.size() - 1; }
  size_t total_cands() const { return cand.size(); }
};

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

// Candidate scorer. Context per candidate concatenates the mean of an MLP
// over the user's group latents, the mean category embedding of the user's
// recent history, and the candidate's own category embedding.
template <typename T>
struct M2Model {
  M2Config cfg;
  nn::Embedding<T> e2;
  nn::Affine<T> v1, v2;
  nn::Affine<T> s1, s2;

  M2Model(const M2Config& c, Rng& rng)
      : cfg(c),
        e2("m2.e2", c.num_categories + 1, c.d2, rng),
        v1("m2.v1", c.latent, c.d2, rng),
        v2("m2.v2", c.d2, c.d2, rng),
        s1("m2.s1", 3 * c.d2, c.scorer_hidden, rng),
        s2("m2.s2", c.scorer_hidden, 1, rng) {
    cfg.validate();
  }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out;
    e2.collect(out);
    v1.collect(out);
    v2.collect(out);
    s1.collect(out);
    s2.collect(out);
    return out;
  }

  struct Cache {
    const M2Batch<T>* batch = nullptr;
    typename nn::Affine<T>::Cache v1c, v2c, s1c, s2c;
    nn::ReluCache<T> va, sa;
    nn::Tensor<T> gmean, cmean;  // [B x d2]
    nn::Tensor<T> scores;        // [R_total]
    bool has_groups = false;
  };

  nn::Tensor<T> forward(const M2Batch<T>& batch, Cache& cache) const {
    size_t B = batch.size(), d2 = cfg.d2;
    if (batch.y_m1.size() != batch.total_cands())
      throw DimensionError("y_m1 does not align with candidates");
    // Validate index ranges serially; the parallel loops below must not throw.
    for (int32_t idx : batch.delta)
      if (idx < 1 || static_cast<size_t>(idx) > cfg.num_categories)
        throw DataError("history category index out of range");
    for (int32_t idx : batch.cand)
      if (idx < 1 || static_cast<size_t>(idx) > cfg.num_categories)
        throw DataError("candidate category index out of range");
    cache.batch = &batch;
    size_t g_total = batch.group_offset.empty() ? 0 : batch.group_offset.back();
    cache.gmean = nn::Tensor<T>({B, d2});
    cache.has_groups = g_total > 0;
    if (g_total > 0) {
      if (batch.latent_dim != cfg.latent)
        throw DimensionError("latent width mismatch");
      nn::Tensor<T> vin({g_total, cfg.latent});
      vin.data = batch.latents;
      nn::Tensor<T> h = nn::relu(v1.forward(vin, &cache.v1c), &cache.va);
      nn::Tensor<T> vout = v2.forward(h, &cache.v2c);
#pragma omp parallel for schedule(static)
      for (int64_t b = 0; b < static_cast<int64_t>(B); ++b) {
        size_t lo = batch.group_offset[b], hi = batch.group_offset[b + 1];
        if (hi == lo) continue;  // no past groups: zero vector
        T inv = T(1) / static_cast<T>(hi - lo);
        T* dst = cache.gmean.data.data() + b * d2;
        for (size_t g = lo; g < hi; ++g) {
          const T* src = vout.data.data() + g * d2;
          for (size_t j = 0; j < d2; ++j) dst[j] += src[j] * inv;
        }
      }
    }
    cache.cmean = nn::Tensor<T>({B, d2});
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < static_cast<int64_t>(B); ++b) {
      size_t lo = batch.delta_offset[b], hi = batch.delta_offset[b + 1];
      if (hi == lo) continue;
      T inv = T(1) / static_cast<T>(hi - lo);
      T* dst = cache.cmean.data.data() + b * d2;
      for (size_t t = lo; t < hi; ++t) {
        size_t idx = static_cast<size_t>(batch.delta[t]);
        const T* src = e2.table.value.data.data() + idx * d2;
        for (size_t j = 0; j < d2; ++j) dst[j] += src[j] * inv;
      }
    }
    size_t R = batch.total_cands();
    nn::Tensor<T> ctx({R, 3 * d2});
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < static_cast<int64_t>(B); ++b) {
      for (size_t r = batch.cand_offset[b]; r < batch.cand_offset[b + 1]; ++r) {
        size_t idx = static_cast<size_t>(batch.cand[r]);
        T* row = ctx.data.data() + r * 3 * d2;
        const T* gm = cache.gmean.data.data() + b * d2;
        const T* cm = cache.cmean.data.data() + b * d2;
        const T* ce = e2.table.value.data.data() + idx * d2;
        for (size_t j = 0; j < d2; ++j) row[j] = gm[j];
        for (size_t j = 0; j < d2; ++j) row[d2 + j] = cm[j];
        for (size_t j = 0; j < d2; ++j) row[2 * d2 + j] = ce[j];
      }
    }
    nn::Tensor<T> h = nn::relu(s1.forward(ctx, &cache.s1c), &cache.sa);
    nn::Tensor<T> logits = s2.forward(h, &cache.s2c);
    cache.scores = nn::Tensor<T>({R});
    for (size_t r = 0; r < R; ++r)
      cache.scores.data[r] = stable_sigmoid(logits.data[r]);
    return cache.scores;
  }

  void backward(Cache& cache, const nn::Tensor<T>& dscores) {
    const M2Batch<T>& batch = *cache.batch;
    size_t B = batch.size(), d2 = cfg.d2, R = batch.total_cands();
    nn::Tensor<T> dlogits({R, size_t(1)});
    for (size_t r = 0; r < R; ++r) {
      T y = cache.scores.data[r];
      dlogits.data[r] = dscores.data[r] * y * (T(1) - y);
    }
    nn::Tensor<T> dh = s2.backward(cache.s2c, dlogits);
    nn::Tensor<T> dctx = s1.backward(cache.s1c, nn::relu_grad(cache.sa, dh));

    nn::Tensor<T> dgmean({B, d2}), dcmean({B, d2});
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < static_cast<int64_t>(B); ++b) {
      T* dg = dgmean.data.data() + b * d2;
      T* dc = dcmean.data.data() + b * d2;
      for (size_t r = batch.cand_offset[b]; r < batch.cand_offset[b + 1]; ++r) {
        const T* row = dctx.data.data() + r * 3 * d2;
        for (size_t j = 0; j < d2; ++j) dg[j] += row[j];
        for (size_t j = 0; j < d2; ++j) dc[j] += row[d2 + j];
      }
    }
    // Candidate and history embedding gradients: parallel over the feature
    // axis, accumulation in fixed example order.
    int64_t d2i = static_cast<int64_t>(d2);
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < d2i; ++j) {
      for (size_t b = 0; b < B; ++b) {
        for (size_t r = batch.cand_offset[b]; r < batch.cand_offset[b + 1]; ++r) {
          size_t idx = static_cast<size_t>(batch.cand[r]);
          e2.table.grad.data[idx * d2 + j] += dctx.data[r * 3 * d2 + 2 * d2 + j];
        }
        size_t lo = batch.delta_offset[b], hi = batch.delta_offset[b + 1];
        if (hi == lo) continue;
        T inv = T(1) / static_cast<T>(hi - lo);
        for (size_t t = lo; t < hi; ++t) {
          size_t idx = static_cast<size_t>(batch.delta[t]);
          e2.table.grad.data[idx * d2 + j] += dcmean.data[b * d2 + j] * inv;
        }
      }
    }
    if (cache.has_groups) {
      size_t g_total = batch.group_offset.back();
      nn::Tensor<T> dvout({g_total, d2});
#pragma omp parallel for schedule(static)
      for (int64_t b = 0; b < static_cast<int64_t>(B); ++b) {
        size_t lo = batch.group_offset[b], hi = batch.group_offset[b + 1];
        if (hi == lo) continue;
        T inv = T(1) / static_cast<T>(hi - lo);
        const T* dg = dgmean.data.data() + b * d2;
        for (size_t g = lo; g < hi; ++g) {
          T* dst = dvout.data.data() + g * d2;
          for (size_t j = 0; j < d2; ++j) dst[j] = dg[j] * inv;
        }
      }
      nn::Tensor<T> dvh = v2.backward(cache.v2c, dvout);
      v1.backward(cache.v1c, nn::relu_grad(cache.va, dvh));
    }
  }
};

// Total loss over one batch: precision penalty on first-stage false
// positives plus squared score error, summed over all candidates. The mode
// controls how the false-positive margin enters; in Literal mode it is
// constant in the model outputs and contributes no gradient.
template <typename T>
T m2_loss(const M2Batch<T>& batch, const nn::Tensor<T>& scores, LossMode mode,
          nn::Tensor<T>* dscores) {
  size_t R = batch.total_cands();
  if (batch.y_true.size() != R) throw DimensionError("y_true does not align");
  if (scores.size() != R) throw DimensionError("scores do not align");
  if (dscores) *dscores = nn::Tensor<T>({R});
  T loss = T(0);
  for (size_t r = 0; r < R; ++r) {
    T y = scores.data[r];
    T yt = batch.y_true[r];
    T a = batch.y_m1[r] - yt;
    if (a < T(0)) a = T(0);
    T err = y - yt;
    T grad;
    switch (mode) {
      case LossMode::Literal:
        loss += a * a + err * err;
        grad = T(2) * err;
        break;
      case LossMode::WeightedScore:
        loss += (a * y) * (a * y) + err * err;
        grad = T(2) * a * a * y + T(2) * err;
        break;
      case LossMode::WeightedMse:
        loss += (T(1) + a * a) * err * err;
        grad = T(2) * (T(1) + a * a) * err;
        break;
      default:
        throw ConfigError("unknown loss mode");
    }
    if (dscores) dscores->data[r] = grad;
  }
  return loss;
}

struct RankedOutput {
  std::vector<int32_t> categories;  // 1-based, best first
  std::vector<double> y_m2, y_m1;   // aligned with categories
};

// Orders one candidate list by re-ranker score (descending), breaking ties
// by first-stage probability (descending) then category index (ascending),
// and keeps the first n.
inline RankedOutput rank_candidates(const std::vector<int32_t>& cand,
                                    const std::vector<double>& y_m1,
                                    const std::vector<double>& y_m2, size_t n) {
  if (cand.size() != y_m1.size() || cand.size() != y_m2.size())
    throw DimensionError("candidate arrays misaligned");
  std::vector<size_t> order(cand.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (y_m2[a] != y_m2[b]) return y_m2[a] > y_m2[b];
    if (y_m1[a] != y_m1[b]) return y_m1[a] > y_m1[b];
    return cand[a] < cand[b];
  });
  size_t keep = std::min(n, order.size());
  RankedOutput out;
  for (size_t i = 0; i < keep; ++i) {
    out.categories.push_back(cand[order[i]]);
    out.y_m2.push_back(y_m2[order[i]]);
    out.y_m1.push_back(y_m1[order[i]]);
  }
  return out;
}

}  // namespace ccrec
