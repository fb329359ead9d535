#include <doctest.h>

#include <cmath>

#include "fsdt/autograd.hpp"
#include "fsdt/random.hpp"
#include "oracles.hpp"

using namespace fsdt;

TEST_SUITE("autograd") {

TEST_CASE("every operation matches central differences") {
  for (const auto& c : oracle::op_gradient_suite(11)) {
    INFO(c.name << " worst " << c.result.worst);
    CHECK(c.result.checked > 0);
    CHECK(c.result.max_rel_error < 1e-5);
  }
}

TEST_CASE("matmul and add_bias forward") {
  Graph g;
  const Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const Var b = g.constant(Tensor({2, 2}, {5, 6, 7, 8}));
  const Var y = g.add_bias(g.matmul(a, b), g.constant(Tensor::vector({1, -1})));
  CHECK(g.value(y) == Tensor({2, 2}, {20, 21, 44, 49}));
  CHECK_THROWS_AS(g.matmul(a, g.constant(Tensor({3, 1}, {1, 2, 3}))), ShapeError);
}

TEST_CASE("attention on a two-row hand example") {
  // One head, width 2. Row 0 sees only itself; row 1 mixes both values.
  Graph g;
  const Tensor qkv({2, 6}, {1, 0, 1, 0, 1, 2,  //
                            0, 1, 0, 2, 3, 4});
  const std::vector<std::uint8_t> mask = {1, 1};
  const Tensor& out = g.value(g.causal_attention(g.constant(qkv), mask, 1, 2));
  CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out.at(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
  const double p1 = std::exp(std::sqrt(2.0)) / (1.0 + std::exp(std::sqrt(2.0)));
  CHECK(out.at(1, 0) == doctest::Approx((1 - p1) * 1 + p1 * 3).epsilon(1e-14));
  CHECK(out.at(1, 1) == doctest::Approx((1 - p1) * 2 + p1 * 4).epsilon(1e-14));
}

TEST_CASE("a single token attends only to itself") {
  Graph g;
  const Tensor qkv({1, 6}, {0.3, -2, 7, 1, 5, -6});
  const Tensor& out = g.value(g.causal_attention(g.constant(qkv), std::vector<std::uint8_t>{1}, 1, 1));
  CHECK(out.at(0, 0) == 5.0);
  CHECK(out.at(0, 1) == -6.0);
}

TEST_CASE("attention ignores masked keys and yields zero rows without keys") {
  Graph g;
  const Tensor qkv({2, 6}, {1, 0, 1, 0, 1, 2,  //
                            0, 1, 0, 2, 3, 4});
  const std::vector<std::uint8_t> mask = {0, 1};
  const Tensor& out = g.value(g.causal_attention(g.constant(qkv), mask, 1, 2));
  CHECK(out.at(0, 0) == 0.0);
  CHECK(out.at(0, 1) == 0.0);
  CHECK(out.at(1, 0) == 3.0);
  CHECK(out.at(1, 1) == 4.0);
}

TEST_CASE("attention output rows never depend on later rows") {
  Rng rng(3);
  Tensor qkv = oracle::random_tensor({8, 12}, rng);
  const std::vector<std::uint8_t> mask(8, 1);
  Graph g1;
  const Tensor before = g1.value(g1.causal_attention(g1.constant(qkv), mask, 2, 4));
  for (std::size_t c = 0; c < 12; ++c) qkv.at(2, c) += 5.0;
  Graph g2;
  const Tensor after = g2.value(g2.causal_attention(g2.constant(qkv), mask, 2, 4));
  for (std::size_t r : {0u, 1u, 4u, 5u, 6u, 7u}) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(before.at(r, c) == after.at(r, c));
  }
  CHECK(before.at(3, 0) != after.at(3, 0));
}

TEST_CASE("attention validates its shapes") {
  Graph g;
  const Var x = g.constant(Tensor({4, 6}));
  const std::vector<std::uint8_t> mask(4, 1);
  CHECK_THROWS_AS(g.causal_attention(x, mask, 4, 2), ShapeError);
  CHECK_THROWS_AS(g.causal_attention(x, mask, 1, 3), ShapeError);
  CHECK_THROWS_AS(g.causal_attention(x, std::vector<std::uint8_t>(3, 1), 1, 2), ShapeError);
}

TEST_CASE("gradients of shared nodes accumulate") {
  Parameter w{"w", Tensor::scalar(3.0)};
  Graph g;
  const Var x = g.parameter(w);
  CHECK(g.parameter(w).id == x.id);
  const Var y = g.add(g.mul(x, x), x);
  g.backward(y);
  CHECK(g.parameter_grad(w)->item() == 7.0);
}

TEST_CASE("backward contract") {
  Graph g;
  const Var x = g.input(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
  const Var s = g.sum(x);
  g.backward(s);
  CHECK(g.grad(x) == Tensor::vector({1, 1}));
  CHECK_THROWS_AS(g.backward(s), ContractError);
  CHECK_THROWS_AS(g.sum(x), ContractError);
  CHECK_THROWS_AS(g.value(Var{}), ContractError);
}

TEST_CASE("explicit seed drives a non-scalar backward") {
  Graph g;
  const Var x = g.input(Tensor::vector({1, 2, 3}));
  const Var y = g.scale(x, 2.0);
  g.backward(y, Tensor::vector({1, 0, -1}));
  CHECK(g.grad(x) == Tensor::vector({2, 0, -2}));
}

TEST_CASE("constants receive no gradient and parameters outside the graph report null") {
  Parameter p{"p", Tensor::scalar(1.0)};
  Parameter q{"q", Tensor::scalar(1.0)};
  Graph g;
  const Var c = g.constant(Tensor::scalar(2.0));
  g.backward(g.mul(c, g.parameter(p)));
  CHECK(g.grad(c).item() == 0.0);
  CHECK(g.parameter_grad(p)->item() == 2.0);
  CHECK(g.parameter_grad(q) == nullptr);
}

TEST_CASE("gaussian_nll clamps log sigma and blocks its gradient outside the range") {
  Parameter mu{"mu", Tensor({1, 1}, {0.0})};
  Parameter ls{"ls", Tensor({1, 1}, {10.0})};
  Graph g;
  const Var loss = g.gaussian_nll(g.parameter(mu), g.parameter(ls), Tensor({1, 1}, {1.0}), -5, 2);
  const double expect = 0.5 * std::exp(-4.0) + 2.0 + 0.9189385332046727;
  CHECK(g.value(loss).item() == doctest::Approx(expect).epsilon(1e-14));
  g.backward(loss);
  CHECK(g.parameter_grad(ls)->item() == 0.0);
}

}  // TEST_SUITE
