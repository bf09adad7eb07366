#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "ccrec/adam.hpp"
#include "ccrec/gradcheck.hpp"
#include "ccrec/mle_model.hpp"
#include "ccrec/rng.hpp"
#include "doctest.h"

using namespace ccrec;
using nn::Tensor;

namespace {

M1Config tiny_config(size_t categories, size_t k, size_t latent = 0) {
  M1Config c;
  c.num_categories = categories;
  c.d1 = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 16;
  c.k = k;
  c.group_latent = latent;
  return c;
}

nn::SeqBatch tiny_batch() {
  nn::SeqBatch b;
  b.b = 3;
  b.k = 4;
  b.idx = {0, 2, 1, 5, 3, 3, 4, 1, 0, 0, 0, 6};
  b.mask = {0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1};
  return b;
}

template <typename T>
void zero_all(std::vector<nn::Parameter<T>*>& ps) {
  for (auto* p : ps) p->zero_grad();
}

}  // namespace

TEST_CASE("summed NLL of a uniform distribution is |targets| * log C") {
  Rng rng(30);
  M1Model<double> model(tiny_config(4, 4), rng);
  Tensor<double> logp({1, 4});
  for (size_t j = 0; j < 4; ++j) logp.at(0, j) = std::log(0.25);
  Tensor<double> dlogp;
  double loss = model.loss_mle(logp, {{1, 3, 4}}, &dlogp);
  CHECK(loss == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
  CHECK(dlogp.at(0, 0) == -1.0);
  CHECK(dlogp.at(0, 1) == 0.0);
  CHECK(dlogp.at(0, 2) == -1.0);
  CHECK(dlogp.at(0, 3) == -1.0);

  CHECK_THROWS_AS(model.loss_mle(logp, {{0}}, nullptr), DataError);
  CHECK_THROWS_AS(model.loss_mle(logp, {{5}}, nullptr), DataError);
  CHECK_THROWS_AS(model.loss_mle(logp, {{1}, {2}}, nullptr), DimensionError);
}

TEST_CASE("model output rows are log-probabilities that sum to one") {
  Rng rng(31);
  M1Model<float> model(tiny_config(6, 4), rng);
  nn::SeqBatch batch = tiny_batch();
  typename M1Model<float>::Cache cache;
  Tensor<float> logp = model.forward(batch, nullptr, cache);
  REQUIRE(logp.shape == std::vector<size_t>{3, 6});
  for (size_t b = 0; b < 3; ++b) {
    double sum = 0.0;
    for (size_t j = 0; j < 6; ++j) sum += std::exp(double(logp.at(b, j)));
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }

  // Bitwise deterministic across repeated forwards.
  typename M1Model<float>::Cache cache2;
  Tensor<float> logp2 = model.forward(batch, nullptr, cache2);
  CHECK(std::memcmp(logp.data.data(), logp2.data.data(),
                    logp.size() * sizeof(float)) == 0);
}

TEST_CASE("forward rejects malformed batches") {
  Rng rng(32);
  M1Model<float> model(tiny_config(6, 4), rng);
  typename M1Model<float>::Cache cache;

  nn::SeqBatch wrong_k = tiny_batch();
  wrong_k.k = 3;
  wrong_k.idx.resize(9);
  wrong_k.mask.resize(9);
  CHECK_THROWS_AS(model.forward(wrong_k, nullptr, cache), DimensionError);

  nn::SeqBatch empty_history = tiny_batch();
  for (size_t p = 0; p < 4; ++p) empty_history.mask[4 + p] = 0;
  CHECK_THROWS_AS(model.forward(empty_history, nullptr, cache), DataError);

  M1Model<float> with_latent(tiny_config(6, 4, 3), rng);
  CHECK_THROWS_AS(with_latent.forward(tiny_batch(), nullptr, cache), ContractError);
}

TEST_CASE("out-of-range category indices fall back to the PAD embedding") {
  Rng rng(39);
  M1Model<float> model(tiny_config(4, 4), rng);  // vocab rows 0..4
  nn::SeqBatch overflow = tiny_batch();          // contains indices 5 and 6
  nn::SeqBatch padded = tiny_batch();
  for (auto& i : padded.idx)
    if (i > 4) i = 0;
  typename M1Model<float>::Cache c1, c2;
  Tensor<float> a = model.forward(overflow, nullptr, c1);
  Tensor<float> b = model.forward(padded, nullptr, c2);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("likelihood gradients match finite differences") {
  Rng rng(33);
  M1Model<double> model(tiny_config(6, 4), rng);
  nn::SeqBatch batch = tiny_batch();
  std::vector<std::vector<int32_t>> targets = {{2, 5}, {1}, {3, 4, 6}};
  auto params = model.params();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename M1Model<double>::Cache cache;
    Tensor<double> logp = model.forward(batch, nullptr, cache);
    Tensor<double> dlogp;
    double loss = model.loss_mle(logp, targets, with_grad ? &dlogp : nullptr);
    if (with_grad) model.backward(cache, dlogp);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 96, 1e-5, rng);
  INFO(rep.worst_param, "[", rep.worst_index, "] rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("latent-conditioned gradients match finite differences") {
  Rng rng(34);
  M1Model<double> model(tiny_config(6, 4, 3), rng);
  nn::SeqBatch batch = tiny_batch();
  Tensor<double> latents({3, 4, 3});
  for (size_t bi = 0; bi < 3; ++bi)
    for (size_t p = 0; p < 4; ++p)
      for (size_t j = 0; j < 3; ++j)
        latents.at(bi, p, j) = batch.masked(bi, p) ? 0.0 : rng.uniform(-1.0, 1.0);
  std::vector<std::vector<int32_t>> targets = {{2}, {1, 5}, {3}};
  auto params = model.params();
  auto loss_fn = [&](bool with_grad) {
    zero_all(params);
    typename M1Model<double>::Cache cache;
    Tensor<double> logp = model.forward(batch, &latents, cache);
    Tensor<double> dlogp;
    double loss = model.loss_mle(logp, targets, with_grad ? &dlogp : nullptr);
    if (with_grad) model.backward(cache, dlogp);
    return loss;
  };
  auto rep = nn::check_gradients(params, loss_fn, 96, 1e-5, rng);
  INFO(rep.worst_param, "[", rep.worst_index, "] rel err ", rep.max_rel_err);
  CHECK(rep.pass);

  // The injected latents genuinely condition the output.
  typename M1Model<double>::Cache c1, c2;
  Tensor<double> zeros({3, 4, 3});
  Tensor<double> with = model.forward(batch, &latents, c1);
  Tensor<double> without = model.forward(batch, &zeros, c2);
  bool differs = false;
  for (size_t i = 0; i < with.size(); ++i)
    differs = differs || with.data[i] != without.data[i];
  CHECK(differs);
}

TEST_CASE("adam training drives the likelihood loss down") {
  Rng rng(35);
  M1Model<float> model(tiny_config(6, 4), rng);
  nn::SeqBatch batch = tiny_batch();
  std::vector<std::vector<int32_t>> targets = {{2}, {4}, {1, 3}};
  auto params = model.params();
  nn::Adam<float> opt(1e-2f);
  opt.bind(params);
  float first = 0.0f, last = 0.0f;
  for (int step = 0; step < 50; ++step) {
    typename M1Model<float>::Cache cache;
    Tensor<float> logp = model.forward(batch, nullptr, cache);
    Tensor<float> dlogp;
    float loss = model.loss_mle(logp, targets, &dlogp);
    if (step == 0) first = loss;
    last = loss;
    zero_all(params);
    model.backward(cache, dlogp);
    opt.step(params);
  }
  CHECK(last < 0.5f * first);
}

TEST_CASE("top-r candidate selection orders by probability then index") {
  auto top = generate_candidates({0.1, 0.5, 0.4}, 2, CandidateSampling::Top, nullptr);
  CHECK(top.r == std::vector<int32_t>{2, 3});
  CHECK(top.p == std::vector<double>{0.5, 0.4});

  auto clamped = generate_candidates({0.1, 0.5, 0.4}, 9, CandidateSampling::Top, nullptr);
  CHECK(clamped.r == std::vector<int32_t>{2, 3, 1});

  auto tied = generate_candidates({0.4, 0.4, 0.2}, 2, CandidateSampling::Top, nullptr);
  CHECK(tied.r == std::vector<int32_t>{1, 2});

  CHECK_THROWS_AS(generate_candidates({}, 3, CandidateSampling::Top, nullptr),
                  DimensionError);
}

TEST_CASE("growing r only appends to the top-r list") {
  Rng rng(36);
  std::vector<double> probs(20);
  double sum = 0.0;
  for (auto& p : probs) {
    p = rng.uniform();
    sum += p;
  }
  for (auto& p : probs) p /= sum;
  std::vector<int32_t> prev;
  for (size_t r = 1; r <= probs.size(); ++r) {
    auto list = generate_candidates(probs, r, CandidateSampling::Top, nullptr);
    REQUIRE(list.r.size() == r);
    for (size_t i = 0; i < prev.size(); ++i) CHECK(list.r[i] == prev[i]);
    prev = list.r;
  }
}

TEST_CASE("proportional sampling tracks the probability weights") {
  std::vector<double> probs = {0.7, 0.2, 0.1, 0.0};
  Rng rng(37);
  std::vector<size_t> included(4, 0);
  const int trials = 600;
  for (int t = 0; t < trials; ++t) {
    auto list = generate_candidates(probs, 2, CandidateSampling::Proportional, &rng);
    REQUIRE(list.r.size() == 2);
    // Output stays sorted by descending probability regardless of the draw.
    CHECK(list.p[0] >= list.p[1]);
    for (int32_t c : list.r) included[static_cast<size_t>(c - 1)]++;
  }
  CHECK(included[0] > included[1]);
  CHECK(included[1] > included[2]);
  CHECK(included[0] > 500);  // p=0.7 nearly always survives 2 draws
  CHECK(included[3] == 0);   // zero probability never drawn
  CHECK_THROWS_AS(generate_candidates(probs, 2, CandidateSampling::Proportional, nullptr),
                  ContractError);

  // Same seed, same draws.
  Rng r1(91), r2(91);
  for (int t = 0; t < 10; ++t) {
    auto a = generate_candidates(probs, 2, CandidateSampling::Proportional, &r1);
    auto b = generate_candidates(probs, 2, CandidateSampling::Proportional, &r2);
    CHECK(a.r == b.r);
  }
}
