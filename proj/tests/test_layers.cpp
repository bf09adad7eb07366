#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "ccrec/gradcheck.hpp"
#include "ccrec/layers.hpp"
#include "ccrec/rng.hpp"
#include "doctest.h"

using namespace ccrec;
using nn::Tensor;

namespace {

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void zero_all(std::vector<nn::Parameter<T>*>& ps) {
  for (auto* p : ps) p->zero_grad();
}

// Squared-sum readout used to drive gradients through a layer under test.
template <typename T>
T sumsq_loss(const Tensor<T>& y, Tensor<T>* dy) {
  T loss = T(0);
  if (dy) *dy = Tensor<T>(y.shape);
  for (size_t i = 0; i < y.size(); ++i) {
    loss += y.data[i] * y.data[i];
    if (dy) dy->data[i] = T(2) * y.data[i];
  }
  return loss;
}

nn::SeqBatch make_batch() {
  // Two sequences of length 4; second has two leading PADs.
  nn::SeqBatch b;
  b.b = 2;
  b.k = 4;
  b.idx = {3, 1, 4, 2, 0, 0, 2, 5};
  b.mask = {1, 1, 1, 1, 0, 0, 1, 1};
  return b;
}

}  // namespace

TEST_CASE("affine layer gradients match finite differences") {
  Rng rng(21);
  nn::Affine<double> aff("aff", 5, 3, rng);
  Tensor<double> x({7, 5});
  fill_uniform(x, rng);
  auto params = [&] {
    std::vector<nn::Parameter<double>*> ps;
    aff.collect(ps);
    return ps;
  }();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename nn::Affine<double>::Cache c;
    Tensor<double> y = aff.forward(x, &c);
    Tensor<double> dy;
    double loss = sumsq_loss(y, with_grad ? &dy : nullptr);
    if (with_grad) aff.backward(c, dy);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 64, 1e-6, rng);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("layernorm gradients match finite differences") {
  Rng rng(22);
  nn::LayerNorm<double> ln("ln", 6);
  fill_uniform(ln.gamma.value, rng, 0.5, 1.5);
  fill_uniform(ln.beta.value, rng, -0.3, 0.3);
  Tensor<double> x({9, 6});
  fill_uniform(x, rng, -2.0, 2.0);
  auto params = [&] {
    std::vector<nn::Parameter<double>*> ps;
    ln.collect(ps);
    return ps;
  }();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename nn::LayerNorm<double>::Cache c;
    Tensor<double> y = ln.forward(x, &c);
    Tensor<double> dy;
    double loss = sumsq_loss(y, with_grad ? &dy : nullptr);
    if (with_grad) ln.backward(c, dy);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 64, 1e-6, rng);
  CHECK(rep.pass);
}

TEST_CASE("self-attention gradients match finite differences") {
  Rng rng(23);
  nn::SelfAttention<double> attn("attn", 8, 2, rng);
  nn::SeqBatch batch = make_batch();
  Tensor<double> x({batch.b, batch.k, size_t(8)});
  fill_uniform(x, rng);
  auto params = [&] {
    std::vector<nn::Parameter<double>*> ps;
    attn.collect(ps);
    return ps;
  }();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename nn::SelfAttention<double>::Cache c;
    Tensor<double> y = attn.forward(x, batch, c);
    Tensor<double> dy;
    double loss = sumsq_loss(y, with_grad ? &dy : nullptr);
    if (with_grad) attn.backward(c, dy);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 96, 1e-5, rng);
  CHECK(rep.pass);
}

TEST_CASE("encoder layer gradients match finite differences") {
  Rng rng(24);
  nn::EncoderLayer<double> enc("enc", 8, 2, 16, rng);
  // Randomize the norm scales so the readout is not nearly constant (the
  // squared norm of a layernorm output barely depends on upstream weights).
  fill_uniform(enc.ln1.gamma.value, rng, 0.5, 1.5);
  fill_uniform(enc.ln2.gamma.value, rng, 0.5, 1.5);
  nn::SeqBatch batch = make_batch();
  Tensor<double> x({batch.b, batch.k, size_t(8)});
  fill_uniform(x, rng);
  Tensor<double> coeff({batch.b, batch.k, size_t(8)});
  fill_uniform(coeff, rng);
  auto params = [&] {
    std::vector<nn::Parameter<double>*> ps;
    enc.collect(ps);
    return ps;
  }();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename nn::EncoderLayer<double>::Cache c;
    Tensor<double> y = enc.forward(x, batch, c);
    double loss = 0;
    for (size_t i = 0; i < y.size(); ++i) loss += coeff.data[i] * y.data[i];
    if (with_grad) enc.backward(c, coeff);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 96, 1e-5, rng);
  CHECK(rep.pass);
}

TEST_CASE("embedding backward accumulates only into used non-PAD rows") {
  Rng rng(25);
  nn::Embedding<double> emb("emb", 6, 3, rng);
  nn::SeqBatch batch;
  batch.b = 1;
  batch.k = 3;
  batch.idx = {2, 0, 2};
  batch.mask = {1, 0, 1};
  Tensor<double> dy({1, 3, 3});
  dy.fill(1.0);
  emb.table.zero_grad();
  emb.backward(batch, dy);
  for (size_t j = 0; j < 3; ++j) {
    CHECK(emb.table.grad.at(0, j) == 0.0);   // PAD row untouched
    CHECK(emb.table.grad.at(2, j) == 2.0);   // used twice
    CHECK(emb.table.grad.at(1, j) == 0.0);
  }
}

TEST_CASE("positional encoding matches the closed form at small indices") {
  auto pe = nn::make_positional_encoding<double>(3, 4);
  CHECK(pe.at(0, 0) == doctest::Approx(0.0));
  CHECK(pe.at(0, 1) == doctest::Approx(1.0));
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe.at(1, 1) == doctest::Approx(std::cos(1.0)));
  CHECK(pe.at(1, 2) == doctest::Approx(std::sin(1.0 / 100.0)));
  CHECK(pe.at(1, 3) == doctest::Approx(std::cos(1.0 / 100.0)));
  CHECK(pe.at(2, 2) == doctest::Approx(std::sin(2.0 / 100.0)));
}

TEST_CASE("attention over a single unmasked position puts weight 1 on it") {
  Rng rng(26);
  nn::SelfAttention<float> attn("a1", 4, 1, rng);
  nn::SeqBatch batch;
  batch.b = 1;
  batch.k = 3;
  batch.idx = {0, 0, 7};
  batch.mask = {0, 0, 1};
  Tensor<float> x({1, 3, 4});
  fill_uniform(x, rng);
  typename nn::SelfAttention<float>::Cache c;
  attn.forward(x, batch, c);
  CHECK(c.weights.at(0, 0, 2 * 3 + 2) == 1.0f);  // head 0, query 2, key 2
  CHECK(c.weights.at(0, 0, 2 * 3 + 0) == 0.0f);
  CHECK(c.weights.at(0, 0, 2 * 3 + 1) == 0.0f);
}

TEST_CASE("masked positions cannot influence unmasked outputs") {
  Rng rng(27);
  nn::EncoderLayer<float> enc("enc", 8, 2, 16, rng);
  nn::SeqBatch batch = make_batch();
  Tensor<float> x({batch.b, batch.k, size_t(8)});
  fill_uniform(x, rng);

  typename nn::EncoderLayer<float>::Cache c1, c2;
  Tensor<float> y1 = enc.forward(x, batch, c1);
  // Perturb the two masked positions of example 1 arbitrarily.
  for (size_t j = 0; j < 8; ++j) {
    x.at(1, 0, j) = 5.0f + float(j);
    x.at(1, 1, j) = -9.0f;
  }
  Tensor<float> y2 = enc.forward(x, batch, c2);
  for (size_t p = 2; p < 4; ++p)
    for (size_t j = 0; j < 8; ++j)
      CHECK(y1.at(1, p, j) == y2.at(1, p, j));  // bitwise equal
  // Example 0 (fully unmasked) must be untouched as well.
  CHECK(std::memcmp(&y1.at(0, 0, 0), &y2.at(0, 0, 0), 4 * 8 * sizeof(float)) == 0);
}

TEST_CASE("mean pooling averages unmasked rows; last pooling picks the final one") {
  nn::SeqBatch batch;
  batch.b = 1;
  batch.k = 3;
  batch.idx = {0, 1, 2};
  batch.mask = {0, 1, 1};
  Tensor<float> h({1, 3, 2});
  h.at(0, 0, 0) = 100.0f;  // masked, must not count
  h.at(0, 0, 1) = 100.0f;
  h.at(0, 1, 0) = 2.0f;
  h.at(0, 1, 1) = 4.0f;
  h.at(0, 2, 0) = 6.0f;
  h.at(0, 2, 1) = 8.0f;

  nn::PoolCache<float> pc;
  Tensor<float> mean = nn::pool_sequence(h, batch, nn::Pooling::Mean, pc);
  CHECK(mean.at(0, 0) == doctest::Approx(4.0));
  CHECK(mean.at(0, 1) == doctest::Approx(6.0));

  nn::PoolCache<float> pc2;
  Tensor<float> last = nn::pool_sequence(h, batch, nn::Pooling::Last, pc2);
  CHECK(last.at(0, 0) == 6.0f);
  CHECK(last.at(0, 1) == 8.0f);

  Tensor<float> dp({1, 2});
  dp.fill(1.0f);
  Tensor<float> dh = nn::pool_sequence_grad(pc, dp, 3);
  CHECK(dh.at(0, 0, 0) == 0.0f);
  CHECK(dh.at(0, 1, 0) == 0.5f);
  CHECK(dh.at(0, 2, 0) == 0.5f);
}

TEST_CASE("pooling an all-masked example raises a data error") {
  nn::SeqBatch batch;
  batch.b = 1;
  batch.k = 2;
  batch.idx = {0, 0};
  batch.mask = {0, 0};
  Tensor<float> h({1, 2, 2});
  nn::PoolCache<float> pc;
  CHECK_THROWS_AS(nn::pool_sequence(h, batch, nn::Pooling::Mean, pc), DataError);
}

TEST_CASE("uniform keys yield uniform attention weights") {
  Rng rng(28);
  nn::SelfAttention<float> attn("u", 4, 1, rng);
  nn::SeqBatch batch;
  batch.b = 1;
  batch.k = 3;
  batch.idx = {1, 1, 1};
  batch.mask = {1, 1, 1};
  Tensor<float> x({1, 3, 4});
  // Identical rows -> identical keys -> uniform weights per query row.
  for (size_t p = 0; p < 3; ++p)
    for (size_t j = 0; j < 4; ++j) x.at(0, p, j) = 0.3f * float(j + 1);
  typename nn::SelfAttention<float>::Cache c;
  attn.forward(x, batch, c);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j)
      CHECK(c.weights.at(0, 0, i * 3 + j) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}
