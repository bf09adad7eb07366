#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ccrec/layers.hpp"

namespace ccrec {

struct VAEConfig {
  size_t input_dim = 0;
  size_t hidden = 256;
  size_t latent = 256;
  double logvar_min = -10.0;
  double logvar_max = 10.0;

  void validate() const {
    if (input_dim == 0 || hidden == 0 || latent == 0)
      throw ConfigError("vae dimensions must be positive");
  }
};

// Variational autoencoder over per-group inputs [f ; normalized item
// profile ; one-hot category]. Two-layer encoder trunk with mu / log-var
// heads, reparameterized latent, two-layer decoder.
template <typename T>
struct VAEModel {
  VAEConfig cfg;
  nn::Affine<T> enc1, enc2, mu_head, lv_head, dec1, dec2;

  VAEModel(const VAEConfig& c, Rng& rng)
      : cfg(c),
        enc1("vae.enc1", c.input_dim, c.hidden, rng),
        enc2("vae.enc2", c.hidden, c.hidden, rng),
        mu_head("vae.mu", c.hidden, c.latent, rng),
        lv_head("vae.lv", c.hidden, c.latent, rng),
        dec1("vae.dec1", c.latent, c.hidden, rng),
        dec2("vae.dec2", c.hidden, c.input_dim, rng) {
    cfg.validate();
  }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out;
    enc1.collect(out);
    enc2.collect(out);
    mu_head.collect(out);
    lv_head.collect(out);
    dec1.collect(out);
    dec2.collect(out);
    return out;
  }

  struct Cache {
    typename nn::Affine<T>::Cache e1c, e2c, muc, lvc, d1c, d2c;
    nn::ReluCache<T> a1, a2, a3;
    nn::Tensor<T> mu, logvar_raw, logvar, z, xhat;
  };

  // Full pass: encode, clamp log-variance, reparameterize with the given
  // noise, decode. eps must be [rows x latent]; pass zeros for inference.
  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::Tensor<T>& eps,
                        Cache& cache) const {
    if (x.cols() != cfg.input_dim) throw DimensionError("vae input width mismatch");
    if (eps.rows() != x.rows() || eps.cols() != cfg.latent)
      throw DimensionError("noise shape mismatch");
    nn::Tensor<T> t1 = nn::relu(enc1.forward(x, &cache.e1c), &cache.a1);
    nn::Tensor<T> t2 = nn::relu(enc2.forward(t1, &cache.e2c), &cache.a2);
    cache.mu = mu_head.forward(t2, &cache.muc);
    cache.logvar_raw = lv_head.forward(t2, &cache.lvc);
    cache.logvar = cache.logvar_raw;
    for (auto& v : cache.logvar.data)
      v = std::min(std::max(v, static_cast<T>(cfg.logvar_min)),
                   static_cast<T>(cfg.logvar_max));
    cache.z = nn::Tensor<T>(cache.mu.shape);
    for (size_t i = 0; i < cache.z.size(); ++i)
      cache.z.data[i] =
          cache.mu.data[i] + std::exp(T(0.5) * cache.logvar.data[i]) * eps.data[i];
    nn::Tensor<T> h = nn::relu(dec1.forward(cache.z, &cache.d1c), &cache.a3);
    cache.xhat = dec2.forward(h, &cache.d2c);
    return cache.xhat;
  }

  // Squared reconstruction error plus beta-weighted KL to the unit normal,
  // summed over the batch. Fills parameter gradients when with_grad is set.
  T loss_and_grad(const nn::Tensor<T>& x, const nn::Tensor<T>& eps, T beta,
                  Cache& cache, bool with_grad) {
    forward(x, eps, cache);
    T recon = T(0);
    for (size_t i = 0; i < x.size(); ++i) {
      T d = x.data[i] - cache.xhat.data[i];
      recon += d * d;
    }
    T kl = T(0);
    for (size_t i = 0; i < cache.mu.size(); ++i) {
      T mu = cache.mu.data[i];
      T lv = cache.logvar.data[i];
      kl += T(-0.5) * (T(1) + lv - mu * mu - std::exp(lv));
    }
    T loss = recon + beta * kl;
    if (!with_grad) return loss;

    nn::Tensor<T> dxhat(cache.xhat.shape);
    for (size_t i = 0; i < x.size(); ++i)
      dxhat.data[i] = T(2) * (cache.xhat.data[i] - x.data[i]);
    nn::Tensor<T> dh = dec2.backward(cache.d2c, dxhat);
    nn::Tensor<T> dz = dec1.backward(cache.d1c, nn::relu_grad(cache.a3, dh));

    nn::Tensor<T> dmu(cache.mu.shape), dlv(cache.logvar.shape);
    for (size_t i = 0; i < dmu.size(); ++i) {
      T mu = cache.mu.data[i];
      T lv = cache.logvar.data[i];
      dmu.data[i] = dz.data[i] + beta * mu;
      T from_z = dz.data[i] * eps.data[i] * T(0.5) * std::exp(T(0.5) * lv);
      T from_kl = beta * T(0.5) * (std::exp(lv) - T(1));
      T raw = cache.logvar_raw.data[i];
      bool inside = raw >= static_cast<T>(cfg.logvar_min) &&
                    raw <= static_cast<T>(cfg.logvar_max);
      dlv.data[i] = inside ? from_z + from_kl : T(0);
    }
    nn::Tensor<T> dt2 = mu_head.backward(cache.muc, dmu);
    nn::Tensor<T> dt2b = lv_head.backward(cache.lvc, dlv);
    nn::add_elementwise<T>(dt2.size(), dt2.data.data(), dt2b.data.data(),
                           dt2.data.data());
    nn::Tensor<T> dt1 = enc2.backward(cache.e2c, nn::relu_grad(cache.a2, dt2));
    enc1.backward(cache.e1c, nn::relu_grad(cache.a1, dt1));
    return loss;
  }

  // Posterior mean only; this is the category embedding used downstream
  // (noise-free inference path).
  nn::Tensor<T> encode_mu(const nn::Tensor<T>& x) const {
    Cache cache;
    nn::Tensor<T> t1 = nn::relu(enc1.forward(x, &cache.e1c), &cache.a1);
    nn::Tensor<T> t2 = nn::relu(enc2.forward(t1, &cache.e2c), &cache.a2);
    return mu_head.forward(t2, &cache.muc);
  }
};

// One VAE input row: [user features ; L1-normalized hashed item profile ;
// one-hot category]. profile_nonzeros holds (bucket, count) pairs.
template <typename T>
void fill_vae_input(T* row, const std::vector<double>& f,
                    const std::vector<std::pair<uint32_t, uint32_t>>& profile_nonzeros,
                    int32_t category_index, size_t hash_dim,
                    size_t num_categories) {
  size_t F = f.size();
  for (size_t i = 0; i < F + hash_dim + num_categories; ++i) row[i] = T(0);
  for (size_t i = 0; i < F; ++i) row[i] = static_cast<T>(f[i]);
  double total = 0.0;
  for (const auto& [bucket, count] : profile_nonzeros) total += count;
  if (total > 0.0) {
    for (const auto& [bucket, count] : profile_nonzeros) {
      if (static_cast<size_t>(bucket) >= hash_dim)
        throw DataError("profile bucket out of range");
      row[F + static_cast<size_t>(bucket)] = static_cast<T>(count / total);
    }
  }
  if (category_index < 1 || static_cast<size_t>(category_index) > num_categories)
    throw DataError("category index out of range in vae input");
  row[F + hash_dim + static_cast<size_t>(category_index - 1)] = T(1);
}

}  // namespace ccrec
