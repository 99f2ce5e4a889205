// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "ctseq/autodiff/grad_check.hpp"
#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/mlp.hpp"
#include "ctseq/autodiff/params.hpp"

using namespace ctseq::ad;

TEST_CASE("forward examples") {
  Graph g;
  Var eye = constant(g, Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var x = constant(g, Tensor::matrix(2, 1, {3, 4}));
  Var y = matmul(eye, x);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 4.0);

  CHECK(tanh(constant(g, Tensor::vector({0.0}))).value()[0] == 0.0);
  CHECK(sigmoid(constant(g, Tensor::vector({0.0}))).value()[0] ==
        doctest::Approx(1.0 / (1.0 + std::exp(0.0))).epsilon(1e-15));
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Graph g;
  Var a = constant(g, Tensor(Shape{2, 3}, 1.0));
  Var b = constant(g, Tensor(Shape{2, 3}, 1.0));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(constant(g, Tensor(Shape{2}, 1.0)) + constant(g, Tensor(Shape{3}, 1.0)),
                  ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    Graph g;
    Var w(&g, g.parameter(ParamId{0}, Tensor::vector({3.0})));
    Gradients grads = g.backward(sum(square(w)).id());
    CHECK(grads.at(ParamId{0})[0] == 6.0);
  }
  SUBCASE("constant loss gives zero gradient") {
    Graph g;
    Var w(&g, g.parameter(ParamId{0}, Tensor::vector({3.0, 1.0})));
    (void)w;
    Var c = sum(constant(g, Tensor::vector({2.0})));
    Gradients grads = g.backward(c.id());
    REQUIRE(grads.count(ParamId{0}) == 1);
    CHECK(grads.at(ParamId{0})[0] == 0.0);
    CHECK(grads.at(ParamId{0})[1] == 0.0);
  }
  SUBCASE("linear form") {
    Graph g;
    Var w(&g, g.parameter(ParamId{0}, Tensor::vector({0.3, -0.7})));
    Var x = constant(g, Tensor::vector({2.0, 5.0}));
    Gradients grads = g.backward(sum(w * x).id());
    CHECK(grads.at(ParamId{0})[0] == 2.0);
    CHECK(grads.at(ParamId{0})[1] == 5.0);
    CHECK(grads.size() == 1);  // the constant leaf gets no entry
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    Var w(&g, g.parameter(ParamId{0}, Tensor::vector({1.0, 2.0})));
    CHECK_THROWS_AS(g.backward(square(w).id()), ShapeError);
  }
  SUBCASE("fan-out accumulates") {
    Graph g;
    Var w(&g, g.parameter(ParamId{0}, Tensor::vector({2.0})));
    Var l = sum(w * w * w);  // 3 w^2 = 12
    CHECK(g.backward(l.id()).at(ParamId{0})[0] == doctest::Approx(12.0));
  }
}

namespace {

// Weighted sum so each output element contributes a distinct gradient.
Var project(Graph& g, Var y, std::mt19937_64& rng) {
  return sum(y * constant(g, testutil::uniform(y.shape(), rng)));
}

double op_check(const std::function<Var(Graph&, Var)>& op, Tensor p, std::uint64_t seed) {
  return grad_check(
      [&](Graph& g, Var v) {
        std::mt19937_64 rng(seed);
        return project(g, op(g, v), rng);
      },
      p);
}

}  // namespace

TEST_CASE("gradients of every op match central differences") {
  std::mt19937_64 rng(7);
  const Tensor p = testutil::uniform({3, 4}, rng);
  const Tensor positive = testutil::uniform({3, 4}, rng, 0.2, 1.0);
  const Tensor other = testutil::uniform({3, 4}, rng);
  const Tensor right = testutil::uniform({4, 2}, rng);
  const Tensor rowvec = testutil::uniform({1, 4}, rng);
  const double tol = 1e-4;

  auto C = [](Graph& g, const Tensor& t) { return constant(g, t); };
  CHECK(op_check([&](Graph& g, Var v) { return matmul(v, C(g, right)); }, p, 1) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return matmul(C(g, Tensor::matrix(2, 3, {1, -2, 3, 0.5, 5, -6})), v); }, p, 2) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return v + C(g, other); }, p, 3) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return C(g, other) - v; }, p, 4) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return v * C(g, other); }, p, 5) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return v * v; }, p, 6) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return v + C(g, rowvec); }, rowvec, 7) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return C(g, p) * v; }, rowvec, 8) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return concat({v, C(g, other)}, 1); }, p, 9) < tol);
  CHECK(op_check([&](Graph& g, Var v) { return concat({C(g, other), v}, 0); }, p, 10) < tol);
  CHECK(op_check([](Graph&, Var v) { return slice(v, 1, 1, 2); }, p, 11) < tol);
  CHECK(op_check([](Graph&, Var v) { return slice(v, 0, 2, 1); }, p, 12) < tol);
  CHECK(op_check([](Graph&, Var v) { return tanh(v); }, p, 13) < tol);
  CHECK(op_check([](Graph&, Var v) { return sigmoid(v); }, p, 14) < tol);
  CHECK(op_check([](Graph&, Var v) { return softplus(v); }, p, 15) < tol);
  CHECK(op_check([](Graph&, Var v) { return exp(v); }, p, 16) < tol);
  CHECK(op_check([](Graph&, Var v) { return log(v); }, positive, 17) < tol);
  CHECK(op_check([](Graph&, Var v) { return square(v); }, p, 18) < tol);
  CHECK(op_check([](Graph&, Var v) { return relu(v); }, p, 19) < tol);
  CHECK(op_check([](Graph&, Var v) { return sum(v, 0); }, p, 20) < tol);
  CHECK(op_check([](Graph&, Var v) { return sum(v, 1); }, p, 21) < tol);
  CHECK(op_check([](Graph&, Var v) { return mean(v); }, p, 22) < tol);
  CHECK(op_check([](Graph&, Var v) { return mean(v, 1); }, p, 23) < tol);
  CHECK(op_check([](Graph&, Var v) { return broadcast(v, {3, 4}); }, rowvec, 24) < tol);
  CHECK(op_check([](Graph&, Var v) { return scale(v, -2.5); }, p, 25) < tol);
  CHECK(op_check([&](Graph& g, Var v) {
          const std::vector<Var> terms{v, C(g, other), v};
          const std::vector<double> w{0.5, 2.0, -1.5};
          return lincomb(terms, w);
        }, p, 26) < tol);
  CHECK(op_check([](Graph&, Var v) { return log_softmax(v); }, p, 27) < tol);
}

TEST_CASE("identity loss gradient is exact") {
  const double err = grad_check([](Graph&, Var v) { return sum(v); },
                                Tensor::vector({0.25}));
  CHECK(err < 1e-10);
}

TEST_CASE("two-layer tanh MLP with 10 parameters") {
  std::mt19937_64 rng(0);
  ParameterStore store;
  // 1 -> 3 -> 1: 3 + 3 weights, 3 + 1 biases.
  Mlp net = Mlp::create(store, "mlp", {{1, 3, 1}}, rng);
  REQUIRE(store.total_elements() == 10);
  for (ParamId id : store.ids()) {
    for (double& v : store.value(id).data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  const Tensor x = Tensor::matrix(4, 1, {-1.0, -0.3, 0.4, 0.9});
  const GradCheckReport r = grad_check_store(
      [&](Graph& g) { return sum(square(net(constant(g, x)))); }, store);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("strict mode flags non-finite values") {
  Graph g;
  g.set_strict(true);
  CHECK_THROWS_AS(log(constant(g, Tensor::vector({-1.0}))), NumericalError);
  Graph lax;
  lax.set_strict(false);
  CHECK(std::isnan(log(constant(lax, Tensor::vector({-1.0}))).value()[0]));
}

TEST_CASE("evaluation is deterministic") {
  std::mt19937_64 rng(3);
  ParameterStore store;
  Mlp net = Mlp::create(store, "f", {{3, 16, 3}}, rng);
  const Tensor x = testutil::uniform({5, 3}, rng);
  auto run = [&] {
    Graph g(&store);
    Var out = net(constant(g, x));
    Gradients grads = g.backward(sum(square(out)).id());
    return std::pair{out.value(), grads};
  };
  const auto [a, ga] = run();
  const auto [b, gb] = run();
  CHECK(bitwise_equal(a, b));
  for (const auto& [id, t] : ga) CHECK(bitwise_equal(t, gb.at(id)));
}

TEST_CASE("concat then slice reconstructs the inputs exactly") {
  std::mt19937_64 rng(4);
  Graph g;
  const Tensor a = testutil::uniform({3, 2}, rng), b = testutil::uniform({3, 5}, rng);
  Var c = concat({constant(g, a), constant(g, b)}, 1);
  CHECK(bitwise_equal(slice(c, 1, 0, 2).value(), a));
  CHECK(bitwise_equal(slice(c, 1, 2, 5).value(), b));
  const Tensor d = testutil::uniform({4, 2}, rng);
  Var r = concat({constant(g, a), constant(g, d)}, 0);
  CHECK(bitwise_equal(slice(r, 0, 0, 3).value(), a));
  CHECK(bitwise_equal(slice(r, 0, 3, 4).value(), d));
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(5);
  ParameterStore store;
  Mlp::create(store, "net", {{2, 7, 3}}, rng);
  store.value(ParamId{1})[0] = 1.0 / 3.0;
  std::stringstream ss;
  save_checkpoint(ss, store, R"({"model":"test"})");
  const Checkpoint ck = read_checkpoint(ss);
  CHECK(ck.meta == R"({"model":"test"})");

  ParameterStore fresh;
  std::mt19937_64 other(99);
  Mlp::create(fresh, "net", {{2, 7, 3}}, other);
  load_into(ck, fresh);
  for (ParamId id : store.ids()) CHECK(bitwise_equal(store.value(id), fresh.value(id)));

  ParameterStore wrong;
  Mlp::create(wrong, "net", {{2, 6, 3}}, other);
  CHECK_THROWS_AS(load_into(ck, wrong), CheckpointError);

  std::stringstream bad("NOT-A-CHECKPOINT 1\n");
  CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
}

TEST_CASE("positive links") {
  Graph g;
  const Tensor x = Tensor::matrix(1, 4, {-30.0, -1.0, 0.0, 2.0});
  const Var sp = positive(constant(g, x), PositiveLink::softplus);
  const Var ex = positive(constant(g, x), PositiveLink::exp);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(sp.value()[i] == doctest::Approx(std::log1p(std::exp(x[i]))).epsilon(1e-14));
    CHECK(ex.value()[i] == doctest::Approx(std::exp(x[i])).epsilon(1e-14));
    CHECK(sp.value()[i] > 0.0);
  }
  for (auto l : {PositiveLink::softplus, PositiveLink::exp}) CHECK(parse_link(link_name(l)) == l);
  CHECK_THROWS_AS(parse_link("relu"), std::invalid_argument);
}
