// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"

#include "ctseq/rnn/cells.hpp"

using namespace ctseq;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

struct Gru {
  ad::ParameterStore store;
  rnn::GruParams p;
  Gru(std::size_t hidden, std::size_t input, std::uint64_t seed = 1, double std = 0.5) {
    std::mt19937_64 rng(seed);
    p = rnn::GruParams::create(store, "gru", hidden, input, 8, rng);
    // larger weights than the default init so gates move away from 0.5
    for (auto id : store.ids()) {
      for (double& v : store.value(id).data()) v *= std / 0.1;
    }
  }
};

Tensor ones(std::size_t r, std::size_t c) { return Tensor(ad::Shape{r, c}, 1.0); }

// raw value whose softplus is `tau`
double inv_softplus(double tau) { return std::log(std::expm1(tau)); }

}  // namespace

TEST_CASE("gru update with an all-zero mask keeps the state") {
  Gru gru(4, 2);
  std::mt19937_64 rng(2);
  Graph g(&gru.store);
  const Var h = ad::constant(g, testutil::uniform({3, 4}, rng));
  const Var x = ad::constant(g, testutil::uniform({3, 2}, rng));
  const Var out = rnn::gru_update(gru.p, h, x, rnn::row_observed(Tensor(ad::Shape{3, 2})));
  CHECK(ad::bitwise_equal(out.value(), h.value()));

  // Mixed rows: unobserved rows are copied bit for bit.
  Tensor mask(ad::Shape{3, 2});
  mask.at(1, 0) = 1.0;
  const Var mixed = rnn::gru_update(gru.p, h, x, rnn::row_observed(mask));
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(mixed.value().at(0, c) == h.value().at(0, c));
    CHECK(mixed.value().at(2, c) == h.value().at(2, c));
  }
  CHECK(mixed.value().at(1, 0) != h.value().at(1, 0));
}

TEST_CASE("gru with zero parameters halves the state") {
  Gru gru(3, 2);
  gru.p.f_z.zero_all(gru.store);
  gru.p.f_r.zero_all(gru.store);
  gru.p.g.zero_all(gru.store);
  std::mt19937_64 rng(3);
  Graph g(&gru.store);
  const Tensor h = testutil::uniform({2, 3}, rng);
  const Var out = rnn::gru_update(gru.p, ad::constant(g, h),
                                  ad::constant(g, testutil::uniform({2, 2}, rng)), ones(2, 1));
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(out.value()[i] == 0.5 * h[i]);
}

TEST_CASE("saturated update gate copies the state") {
  Gru gru(3, 2);
  gru.p.f_z.zero_output_layer(gru.store);
  for (double& b : gru.store.value(gru.p.f_z.biases().back()).data()) b = 50.0;
  std::mt19937_64 rng(4);
  Graph g(&gru.store);
  const Tensor h = testutil::uniform({2, 3}, rng);
  const Var out = rnn::gru_update(gru.p, ad::constant(g, h),
                                  ad::constant(g, testutil::uniform({2, 2}, rng)), ones(2, 1));
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(out.value()[i] == doctest::Approx(h[i]).epsilon(1e-12));
}

TEST_CASE("gru output lies between the candidate and the previous state") {
  Gru gru(5, 3, 9, 1.0);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g(&gru.store);
    const Var h = ad::constant(g, testutil::uniform({4, 5}, rng, -2, 2));
    const Var x = ad::constant(g, testutil::uniform({4, 3}, rng, -2, 2));
    const Var xin = ad::concat({h, x}, 1);
    const Var r = gru.p.f_r(xin);
    const Var cand = gru.p.g(ad::concat({r * h, x}, 1));
    const Var out = rnn::gru_update(gru.p, h, x, ones(4, 1));
    for (std::size_t i = 0; i < 20; ++i) {
      const double lo = std::min(cand.value()[i], h.value()[i]);
      const double hi = std::max(cand.value()[i], h.value()[i]);
      CHECK(out.value()[i] >= lo - 1e-15);
      CHECK(out.value()[i] <= hi + 1e-15);
    }
  }
}

TEST_CASE("shape mismatch in the gru is reported") {
  Gru gru(3, 2);
  Graph g(&gru.store);
  const Var h = ad::constant(g, Tensor(ad::Shape{2, 3}));
  const Var x = ad::constant(g, Tensor(ad::Shape{2, 4}));
  CHECK_THROWS_AS(rnn::gru_update(gru.p, h, x, ones(2, 1)), ad::ShapeError);
}

TEST_CASE("decay closed forms") {
  ad::ParameterStore store;
  const auto p = rnn::DecayParams::create(store, "decay", 1, inv_softplus(1.0));
  Graph g(&store);
  const Var h = ad::constant(g, Tensor::matrix(1, 1, {2.0}));
  CHECK(ad::bitwise_equal(rnn::decay_state(h, 0.0, p).value(), h.value()));
  CHECK(rnn::decay_state(h, std::log(2.0), p).value()[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rnn::decay_state(h, 1e4, p).value()[0] == 0.0);
  double prev = 2.0;
  for (double dt : {0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double v = rnn::decay_state(h, dt, p).value()[0];
    CHECK(v < prev);
    CHECK(v >= 0.0);
    prev = v;
  }
  CHECK_THROWS(rnn::decay_state(h, -0.1, p));
}

TEST_CASE("decay semigroup") {
  ad::ParameterStore store;
  std::mt19937_64 rng(6);
  const auto p = rnn::DecayParams::create(store, "decay", 4, 0.3);
  store.value(p.raw_tau) = testutil::uniform({1, 4}, rng, -2, 2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g(&store);
    const Var h = ad::constant(g, testutil::uniform({2, 4}, rng, -3, 3));
    const double a = u(rng), b = u(rng);
    const Tensor twice = rnn::decay_state(rnn::decay_state(h, a, p), b, p).value();
    const Tensor once = rnn::decay_state(h, a + b, p).value();
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(std::abs(twice[i] - once[i]) <= 1e-14 * std::max(1.0, std::abs(once[i])));
    }
  }
}

TEST_CASE("imputation limits") {
  ad::ParameterStore store;
  const auto stats = rnn::ImputeStats::create(store, "impute", Tensor::matrix(1, 2, {0.5, -1.0}));
  Graph g(&store);
  const Var x = ad::constant(g, Tensor::matrix(1, 2, {3.0, 4.0}));
  const Tensor last = Tensor::matrix(1, 2, {2.0, 7.0});

  const Var full = rnn::impute(x, ones(1, 2), last, Tensor(ad::Shape{1, 2}, 1.0), stats);
  CHECK(ad::bitwise_equal(full.value(), x.value()));

  const Tensor mask = Tensor::matrix(1, 2, {1.0, 0.0});
  const Var now = rnn::impute(x, mask, last, Tensor(ad::Shape{1, 2}), stats);
  CHECK(now.value()[0] == 3.0);
  CHECK(now.value()[1] == 7.0);

  const Var later = rnn::impute(x, mask, last, Tensor(ad::Shape{1, 2}, 1e6), stats);
  CHECK(later.value()[0] == 3.0);
  CHECK(later.value()[1] == -1.0);
}

TEST_CASE("observation tracker") {
  rnn::ObservationTracker tr(1, Tensor::matrix(1, 2, {0.5, 0.25}), 0.0);
  CHECK(tr.last[0] == 0.5);
  CHECK(tr.since(0.3)[0] == doctest::Approx(0.3));
  tr.observe(Tensor::matrix(1, 2, {1.0, 0.0}), Tensor::matrix(1, 2, {1.0, 0.0}), 0.4);
  CHECK(tr.last[0] == 1.0);
  CHECK(tr.last[1] == 0.25);
  CHECK(tr.since(1.0)[0] == doctest::Approx(0.6));
  CHECK(tr.since(1.0)[1] == doctest::Approx(1.0));
}

TEST_CASE("rnn with time gaps") {
  Gru gru(4, 3, 7, 0.5);
  std::mt19937_64 rng(8);
  Graph g(&gru.store);
  const Var h = ad::constant(g, testutil::uniform({2, 4}, rng));
  const Var x = ad::constant(g, testutil::uniform({2, 2}, rng));
  const Tensor zero_dt(ad::Shape{2, 1});
  const Var a = rnn::rnn_delta_t_update(gru.p, h, x, zero_dt, ones(2, 1));
  const Var b = rnn::gru_update(gru.p, h, ad::concat({x, ad::constant(g, zero_dt)}, 1), ones(2, 1));
  CHECK(ad::bitwise_equal(a.value(), b.value()));

  const Var c = rnn::rnn_delta_t_update(gru.p, h, x, Tensor(ad::Shape{2, 1}, 0.5), ones(2, 1));
  const Var d = rnn::rnn_delta_t_update(gru.p, h, x, Tensor(ad::Shape{2, 1}, 2.0), ones(2, 1));
  CHECK(ad::max_abs_diff(c.value(), d.value()) > 1e-6);

  const Var masked = rnn::rnn_delta_t_update(gru.p, h, x, Tensor(ad::Shape{2, 1}, 0.5),
                                             Tensor(ad::Shape{2, 1}));
  CHECK(ad::bitwise_equal(masked.value(), h.value()));
}

TEST_CASE("gru-d with no gap and a full mask is the plain gru") {
  Gru gru(4, 6, 10, 0.5);
  ad::ParameterStore& store = gru.store;
  const auto decay = rnn::DecayParams::create(store, "decay", 4, 0.7);
  const auto stats = rnn::ImputeStats::create(store, "impute", Tensor::matrix(1, 3, {0.1, 0.2, 0.3}));
  std::mt19937_64 rng(11);
  Graph g(&store);
  const Var h = ad::constant(g, testutil::uniform({2, 4}, rng));
  const Var x = ad::constant(g, testutil::uniform({2, 3}, rng));
  const Tensor m = ones(2, 3);
  const Var hd = rnn::decay_state(h, 0.0, decay);
  const Var xi = rnn::impute(x, m, Tensor(ad::Shape{2, 3}), Tensor(ad::Shape{2, 3}), stats);
  const Var composed = rnn::gru_update(gru.p, hd, ad::concat({xi, ad::constant(g, m)}, 1), ones(2, 1));
  const Var plain = rnn::gru_update(gru.p, h, ad::concat({x, ad::constant(g, m)}, 1), ones(2, 1));
  CHECK(ad::bitwise_equal(composed.value(), plain.value()));
}
