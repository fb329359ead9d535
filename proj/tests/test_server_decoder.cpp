#include <doctest.h>

#include <cmath>

#include "fsdt/server_decoder.hpp"
#include "oracles.hpp"

using namespace fsdt;

namespace {

DecoderConfig small_config() {
  DecoderConfig c;
  c.width = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 24;
  return c;
}

void zero(Parameter& p) { p.value.fill(0.0); }

}  // namespace

TEST_SUITE("server_decoder") {

TEST_CASE("parameter count") {
  const ServerDecoder G(DecoderConfig{}, 1);
  CHECK(G.parameter_count() == 595072);
  CHECK(ServerDecoder::expected_parameter_count(DecoderConfig{}) == 595072);
  auto c = small_config();
  c.final_norm = false;
  const ServerDecoder S(c, 1);
  CHECK(S.parameter_count() == 2 * (4 * 256 + 2 * 16 * 24 + 24 + 9 * 16));
}

TEST_CASE("zeroed residual branches pass tokens through") {
  auto c = small_config();
  c.final_norm = false;
  ServerDecoder G(c, 3);
  for (auto& blk : G.blocks()) {
    zero(blk.w_o);
    zero(blk.b_o);
    zero(blk.w_2);
    zero(blk.b_2);
  }
  Rng rng(2);
  const Tensor x = oracle::random_tensor({6, 16}, rng);
  const std::vector<std::uint8_t> mask(6, 1);
  CHECK(decode(G, x, mask, 6) == x);
}

TEST_CASE("matches the plain-loop reference") {
  for (bool final_norm : {true, false}) {
    auto c = small_config();
    c.final_norm = final_norm;
    ServerDecoder G(c, 4);
    Rng rng(5);
    oracle::randomize(G, rng, 0.3);
    const Tensor x = oracle::random_tensor({18, 16}, rng);
    std::vector<std::uint8_t> mask(18, 1);
    for (std::size_t r : {0u, 1u, 2u, 9u, 10u, 11u}) mask[r] = 0;
    const Tensor fast = decode(G, x, mask, 9);
    const Tensor slow = oracle::naive_decode(G, x, mask, 9);
    CHECK(max_abs_diff(fast, slow) < 1e-12);
    for (std::size_t c2 = 0; c2 < 16; ++c2) CHECK(fast.at(10, c2) == 0.0);
  }
}

TEST_CASE("two real tokens by hand") {
  // Width 2, one head, zero queries so attention averages the admissible
  // values, values = normalized input, identity output projection, no MLP.
  DecoderConfig c;
  c.width = 2;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_ff = 2;
  c.final_norm = false;
  ServerDecoder G(c, 1);
  auto& blk = G.blocks()[0];
  blk.ln1_g.value = Tensor::vector({1, 1});
  zero(blk.ln1_b);
  zero(blk.w_qkv);
  zero(blk.b_qkv);
  blk.w_qkv.value.at(0, 4) = 1.0;
  blk.w_qkv.value.at(1, 5) = 1.0;
  blk.w_o.value = Tensor({2, 2}, {1, 0, 0, 1});
  zero(blk.b_o);
  zero(blk.w_2);
  zero(blk.b_2);

  const Tensor x({3, 2}, {9, 9, 1, 3, 4, -2});
  const std::vector<std::uint8_t> mask = {0, 1, 1};
  const Tensor y = decode(G, x, mask, 3);
  auto ln = [](double a, double b) {
    const double half = (a - b) / 2;
    const double s = std::sqrt(half * half + 1e-5);
    return std::pair{half / s, -half / s};
  };
  const auto [n1a, n1b] = ln(1, 3);
  const auto [n2a, n2b] = ln(4, -2);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(1, 0) == doctest::Approx(1 + n1a).epsilon(1e-14));
  CHECK(y.at(1, 1) == doctest::Approx(3 + n1b).epsilon(1e-14));
  CHECK(y.at(2, 0) == doctest::Approx(4 + (n1a + n2a) / 2).epsilon(1e-14));
  CHECK(y.at(2, 1) == doctest::Approx(-2 + (n1b + n2b) / 2).epsilon(1e-14));
}

TEST_CASE("output rows depend only on earlier rows") {
  ServerDecoder G(small_config(), 8);
  Rng rng(9);
  Tensor x = oracle::random_tensor({9, 16}, rng);
  const std::vector<std::uint8_t> mask(9, 1);
  const Tensor before = decode(G, x, mask, 9);
  for (std::size_t c = 0; c < 16; ++c) x.at(5, c) += 1.0;
  const Tensor after = decode(G, x, mask, 9);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 16; ++c) CHECK(before.at(r, c) == after.at(r, c));
  }
  CHECK(max_abs_diff(before, after) > 0.0);
}

TEST_CASE("backward seeds") {
  ServerDecoder G(small_config(), 2);
  Rng rng(1);
  const Tensor x = oracle::random_tensor({6, 16}, rng);
  std::vector<std::uint8_t> mask = {0, 0, 0, 1, 1, 1};

  Graph g0;
  const Var in0 = g0.input(x);
  g0.backward(decode(g0, G, in0, mask, 6), Tensor({6, 16}));
  for (double v : g0.grad(in0).data()) CHECK(v == 0.0);

  Graph g1;
  const Var in1 = g1.input(x);
  g1.backward(decode(g1, G, in1, mask, 6), Tensor::filled({6, 16}, 1.0));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 16; ++c) CHECK(g1.grad(in1).at(r, c) == 0.0);
  }
  double norm = 0.0;
  for (double v : g1.grad(in1).data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("sum of outputs through zeroed branches gives all-ones input gradients") {
  auto c = small_config();
  c.final_norm = false;
  ServerDecoder G(c, 3);
  for (auto& blk : G.blocks()) {
    zero(blk.w_o);
    zero(blk.b_o);
    zero(blk.w_2);
    zero(blk.b_2);
  }
  Rng rng(4);
  const Tensor x = oracle::random_tensor({6, 16}, rng);
  const std::vector<std::uint8_t> mask = {0, 0, 0, 1, 1, 1};
  Graph g;
  const Var in = g.input(x);
  g.backward(g.sum(decode(g, G, in, mask, 6)));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 16; ++j) CHECK(g.grad(in).at(r, j) == (r < 3 ? 0.0 : 1.0));
  }
}

TEST_CASE("gradients match central differences") {
  for (const auto& c : oracle::model_gradient_suite(7)) {
    if (c.name != "decoder") continue;
    INFO("worst " << c.result.worst);
    CHECK(c.result.max_rel_error < 1e-4);
  }
}

TEST_CASE("contracts, freezing and hashing") {
  ServerDecoder G(small_config(), 2);
  const std::vector<std::uint8_t> mask(4, 1);
  CHECK_THROWS_AS(decode(G, Tensor({4, 16}), mask, 4), ShapeError);
  CHECK_THROWS(decode(G, Tensor({6, 8}), std::vector<std::uint8_t>(6, 1), 6));
  auto bad = small_config();
  bad.n_heads = 5;
  CHECK_THROWS(ServerDecoder(bad, 1));
  CHECK_FALSE(G.frozen());
  G.set_frozen(true);
  CHECK(G.frozen());
  for (const Parameter* p : G.parameters()) CHECK(p->frozen);
  CHECK(G.hash() == ServerDecoder(small_config(), 2).hash());
  CHECK(G.hash() != ServerDecoder(small_config(), 3).hash());
  CHECK(G.parameters().front()->name.rfind("G.block0.", 0) == 0);
}

}  // TEST_SUITE
