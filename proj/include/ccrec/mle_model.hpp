#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ccrec/layers.hpp"

namespace ccrec {

struct M1Config {
  size_t num_categories = 0;
  size_t d1 = 64;
  size_t heads = 2;
  size_t layers = 1;
  size_t ff_dim = 256;
  size_t k = 10;
  nn::Pooling pooling = nn::Pooling::Mean;
  size_t group_latent = 0;  // >0: add a projection of per-group latents to the inputs

  void validate() const {
    if (num_categories == 0) throw ConfigError("num_categories must be positive");
    if (d1 == 0 || heads == 0 || layers == 0 || ff_dim == 0 || k == 0)
      throw ConfigError("model dimensions must be positive");
    if (d1 % heads != 0) throw ConfigError("d1 must be divisible by num_heads");
  }
};

// Sequence model over past category interactions: embedding + positional
// encoding + transformer encoder + pooled MLP head + log-softmax over all
// categories. Output column j corresponds to category index j+1 (0 is PAD).
template <typename T>
struct M1Model {
  M1Config cfg;
  nn::Embedding<T> e1;
  nn::Tensor<T> pe;
  nn::TransformerEncoder<T> encoder;
  nn::Affine<T> fc1, fc2;
  nn::Affine<T> latent_proj;

  M1Model(const M1Config& c, Rng& rng)
      : cfg(c),
        e1("m1.e1", c.num_categories + 1, c.d1, rng),
        pe(nn::make_positional_encoding<T>(c.k, c.d1)),
        encoder("m1.enc", c.layers, c.d1, c.heads, c.ff_dim, rng),
        fc1("m1.fc1", c.d1, c.d1, rng),
        fc2("m1.fc2", c.d1, c.num_categories, rng) {
    cfg.validate();
    if (cfg.group_latent > 0)
      latent_proj = nn::Affine<T>("m1.latent_proj", cfg.group_latent, cfg.d1, rng);
  }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out;
    e1.collect(out);
    encoder.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    if (cfg.group_latent > 0) latent_proj.collect(out);
    return out;
  }

  struct Cache {
    const nn::SeqBatch* batch = nullptr;
    typename nn::TransformerEncoder<T>::Cache enc;
    nn::PoolCache<T> pool;
    typename nn::Affine<T>::Cache fc1c, fc2c, projc;
    nn::ReluCache<T> act;
    nn::Tensor<T> logp;
    bool has_latents = false;
  };

  // group_latents, when the model was built with group_latent > 0, is a
  // [b, k, latent] tensor aligned with sequence positions (zeros at PAD).
  nn::Tensor<T> forward(const nn::SeqBatch& batch,
                        const nn::Tensor<T>* group_latents, Cache& cache) const {
    if (batch.k != cfg.k) throw DimensionError("batch k does not match model k");
    for (size_t bi = 0; bi < batch.b; ++bi) {
      bool any = false;
      for (size_t p = 0; p < batch.k; ++p) any = any || !batch.masked(bi, p);
      if (!any) throw DataError("example has an empty history");
    }
    cache.batch = &batch;
    nn::Tensor<T> x = e1.forward(batch);
    if (cfg.group_latent > 0) {
      if (!group_latents) throw ContractError("model expects per-group latents");
      nn::Tensor<T> proj = latent_proj.forward(*group_latents, &cache.projc);
      nn::add_elementwise<T>(x.size(), x.data.data(), proj.data.data(), x.data.data());
      cache.has_latents = true;
    }
    // Broadcast the position table over the batch.
    for (size_t bi = 0; bi < batch.b; ++bi) {
      T* row = x.data.data() + bi * batch.k * cfg.d1;
      for (size_t i = 0; i < batch.k * cfg.d1; ++i) row[i] += pe.data[i];
    }
    nn::Tensor<T> h = encoder.forward(x, batch, cache.enc);
    nn::Tensor<T> pooled = nn::pool_sequence(h, batch, cfg.pooling, cache.pool);
    nn::Tensor<T> h1 = nn::relu(fc1.forward(pooled, &cache.fc1c), &cache.act);
    nn::Tensor<T> logits = fc2.forward(h1, &cache.fc2c);
    cache.logp = nn::Tensor<T>(logits.shape);
    nn::log_softmax_rows<T>(logits.rows(), cfg.num_categories, logits.data.data(),
                            cache.logp.data.data());
    return cache.logp;
  }

  void backward(Cache& cache, const nn::Tensor<T>& dlogp) {
    nn::Tensor<T> dlogits(dlogp.shape);
    nn::log_softmax_backward<T>(dlogp.rows(), cfg.num_categories,
                                cache.logp.data.data(), dlogp.data.data(),
                                dlogits.data.data());
    nn::Tensor<T> dh1 = fc2.backward(cache.fc2c, dlogits);
    nn::Tensor<T> dpre = nn::relu_grad(cache.act, dh1);
    nn::Tensor<T> dpooled = fc1.backward(cache.fc1c, dpre);
    nn::Tensor<T> dh = nn::pool_sequence_grad(cache.pool, dpooled, cfg.k);
    nn::Tensor<T> dx = encoder.backward(cache.enc, dh);
    if (cache.has_latents) latent_proj.backward(cache.projc, dx);
    e1.backward(*cache.batch, dx);
  }

  // Negative log-likelihood summed over every target category of every
  // example. Also writes the upstream gradient for backward().
  T loss_mle(const nn::Tensor<T>& logp,
             const std::vector<std::vector<int32_t>>& targets,
             nn::Tensor<T>* dlogp) const {
    if (logp.rows() != targets.size())
      throw DimensionError("target rows do not match batch");
    if (dlogp) *dlogp = nn::Tensor<T>(logp.shape);
    T loss = T(0);
    for (size_t b = 0; b < targets.size(); ++b) {
      for (int32_t c : targets[b]) {
        if (c < 1 || static_cast<size_t>(c) > cfg.num_categories)
          throw DataError("target category index out of range");
        loss -= logp.at(b, static_cast<size_t>(c - 1));
        if (dlogp) dlogp->at(b, static_cast<size_t>(c - 1)) -= T(1);
      }
    }
    return loss;
  }
};

enum class CandidateSampling { Top, Proportional };

struct CandidateList {
  std::vector<int32_t> r;  // 1-based category indices, by descending probability
  std::vector<double> p;
};

// Selects r_size candidates from one probability row (index j maps to
// category j+1). Deterministic top-r by default; proportional mode samples
// without replacement weighted by probability. Either way the returned list
// is ordered by descending probability with ties broken by ascending index.
inline CandidateList generate_candidates(const std::vector<double>& probs,
                                         size_t r_size, CandidateSampling mode,
                                         Rng* rng) {
  size_t n = probs.size();
  if (n == 0) throw DimensionError("empty probability row");
  size_t r = std::min(r_size, n);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<size_t> chosen;
  if (mode == CandidateSampling::Top) {
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return a < b;
    });
    chosen.assign(order.begin(), order.begin() + r);
  } else {
    if (!rng) throw ContractError("proportional sampling needs an rng");
    // Weighted sampling without replacement: top-r keys u^(1/w).
    std::vector<double> keys(n);
    for (size_t i = 0; i < n; ++i) {
      double u = rng->uniform();
      double w = probs[i] > 0.0 ? probs[i] : 1e-300;
      keys[i] = std::pow(u, 1.0 / w);
    }
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (keys[a] != keys[b]) return keys[a] > keys[b];
      return a < b;
    });
    chosen.assign(order.begin(), order.begin() + r);
    std::sort(chosen.begin(), chosen.end(), [&](size_t a, size_t b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return a < b;
    });
  }
  CandidateList out;
  out.r.reserve(r);
  out.p.reserve(r);
  for (size_t i : chosen) {
    out.r.push_back(static_cast<int32_t>(i + 1));
    out.p.push_back(probs[i]);
  }
  return out;
}

}  // namespace ccrec
