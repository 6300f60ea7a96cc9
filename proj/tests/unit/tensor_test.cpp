#include <doctest.h>

#include <cmath>
#include <random>

#include "partmem/errors.hpp"
#include "partmem/tensor.hpp"

#include "test_util.hpp"

using namespace partmem;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("add is componentwise") {
  ad::Tape t;
  ad::Var a = t.constant({2}, {1, 2});
  ad::Var b = t.constant({2}, {3, 4});
  ad::Var c = ad::add(a, b);
  CHECK(c.values() == std::vector<double>{4, 6});
}

TEST_CASE("l2_normalize on a 3-4-5 triangle") {
  ad::Tape t;
  ad::Var v = ad::l2_normalize(t.constant({2}, {3, 4}));
  CHECK(v.values()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v.values()[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("l2_normalize guard returns the zero vector with zero gradient") {
  ad::Tape t;
  ad::Var x = t.leaf({3}, {0, 0, 0}, true);
  ad::Var y = ad::l2_normalize(x);
  CHECK(y.values() == std::vector<double>{0, 0, 0});
  t.backward(ad::dot(y, y), {1.0});
  CHECK(t.grad(x) == std::vector<double>{0, 0, 0});
}

TEST_CASE("mean_over_region of a 2x2 block of ones") {
  ad::Tape t;
  ad::Var block = t.constant({2, 2}, {1, 1, 1, 1});
  ad::Var m = ad::mean_over_region(block, {0, 1});
  CHECK(m.scalar() == 1.0);
}

TEST_CASE("mean_over_region keeps unreduced axes") {
  ad::Tape t;
  // [2,2,3] map: mean over the two spatial axes leaves the channel vector.
  std::vector<double> vals(12);
  for (std::size_t i = 0; i < 12; ++i) vals[i] = static_cast<double>(i);
  ad::Var m = ad::mean_over_region(t.constant({2, 2, 3}, vals), {0, 1});
  REQUIRE(m.shape() == ad::Shape{3});
  CHECK(m.values()[0] == doctest::Approx((0 + 3 + 6 + 9) / 4.0));
  CHECK(m.values()[1] == doctest::Approx((1 + 4 + 7 + 10) / 4.0));
  CHECK(m.values()[2] == doctest::Approx((2 + 5 + 8 + 11) / 4.0));
}

TEST_CASE("gradient of dot(x,x) is 2x") {
  ad::Tape t;
  ad::Var x = t.leaf({2}, {1, 2}, true);
  t.backward(ad::dot(x, x), {1.0});
  CHECK(t.grad(x) == std::vector<double>{2, 4});
}

TEST_CASE("gradient of l2_normalize at [1,0] with seed [0,1]") {
  ad::Tape t;
  ad::Var x = t.leaf({2}, {1, 0}, true);
  ad::Var y = ad::l2_normalize(x);
  t.backward(y, {0, 1});
  const auto g = t.grad(x);
  CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Same value from the central-difference oracle on y[1].
  auto fn = [](ad::Tape& tape, const ad::Var& in) {
    return ad::dot(ad::l2_normalize(in), tape.constant({2}, {0, 1}));
  };
  CHECK(ad::finite_diff_check(fn, {2}, {1, 0}, 1e-6) < 1e-6);
}

TEST_CASE("relu gates its gradient") {
  ad::Tape t;
  ad::Var x = t.leaf({2}, {-1, 2}, true);
  ad::Var y = ad::relu(x);
  CHECK(y.values() == std::vector<double>{0, 2});
  t.backward(y, {1, 1});
  CHECK(t.grad(x) == std::vector<double>{0, 1});
}

TEST_CASE("backward on a tape with no recorded ops is not an error") {
  ad::Tape t;
  ad::Var c = t.constant({2}, {1, 2});
  t.backward(c, {1, 1});
  CHECK(t.grad(c) == std::vector<double>{0, 0});
}

TEST_CASE("shape mismatch diagnostics name the op and shapes") {
  ad::Tape t;
  ad::Var a = t.constant({2}, {1, 2});
  ad::Var b = t.constant({3}, {1, 2, 3});
  CHECK_THROWS_WITH_AS(ad::add(a, b), "add: shape mismatch [2] vs [3]",
                       std::invalid_argument);
  CHECK_THROWS_AS(ad::matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::dot(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::slice(a, 1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(ad::slice(a, 0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(ad::mean_over_region(a, {2}), std::invalid_argument);
}

TEST_CASE("matmul matches a hand computation, matrix and vector forms") {
  ad::Tape t;
  ad::Var a = t.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  ad::Var m = ad::matmul(a, t.constant({3, 2}, {1, 0, 0, 1, 1, 1}));
  CHECK(m.values() == std::vector<double>{4, 5, 10, 11});
  ad::Var v = ad::matmul(a, t.constant({3}, {1, 1, 1}));
  CHECK(v.shape() == ad::Shape{2});
  CHECK(v.values() == std::vector<double>{6, 15});
}

TEST_CASE("concat and slice are inverse along the chosen axis") {
  ad::Tape t;
  ad::Var a = t.constant({2, 2}, {1, 2, 3, 4});
  ad::Var b = t.constant({2, 2}, {5, 6, 7, 8});
  std::vector<ad::Var> parts{a, b};
  ad::Var along0 = ad::concat(parts, 0);
  CHECK(along0.shape() == ad::Shape{4, 2});
  CHECK(ad::slice(along0, 0, 2, 4).values() == b.values());
  ad::Var along1 = ad::concat(parts, 1);
  CHECK(along1.shape() == ad::Shape{2, 4});
  CHECK(along1.values() == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
  CHECK(ad::slice(along1, 1, 0, 2).values() == a.values());
}

TEST_CASE("every op passes the finite-difference oracle on random inputs") {
  std::mt19937_64 rng(20240617);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = testutil::random_vector(rng, 12);
    const auto w = testutil::random_vector(rng, 12);
    const auto probes = std::vector<std::pair<const char*, ad::ScalarFn>>{
        {"add", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(ad::add(in, t.constant({12}, w)), t.constant({12}, w));
         }},
        {"scale", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(ad::scale(in, -1.7), t.constant({12}, w));
         }},
        {"matmul", [&](ad::Tape& t, const ad::Var& in) {
           ad::Var m = ad::matmul(in.reshape({3, 4}), t.constant({4}, {w[0], w[1], w[2], w[3]}));
           return ad::dot(m, t.constant({3}, {w[4], w[5], w[6]}));
         }},
        {"relu", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(ad::relu(in), t.constant({12}, w));
         }},
        {"mean_over_region", [&](ad::Tape& t, const ad::Var& in) {
           ad::Var m = ad::mean_over_region(in.reshape({3, 4}), {0});
           return ad::dot(m, t.constant({4}, {w[0], w[1], w[2], w[3]}));
         }},
        {"l2_normalize", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(ad::l2_normalize(in), t.constant({12}, w));
         }},
        {"dot", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(in, t.constant({12}, w));
         }},
        {"concat", [&](ad::Tape& t, const ad::Var& in) {
           ad::Var lo = ad::slice(in, 0, 0, 6);
           ad::Var hi = ad::slice(in, 0, 6, 12);
           std::vector<ad::Var> parts{hi, lo};
           return ad::dot(ad::concat(parts, 0), t.constant({12}, w));
         }},
        {"slice", [&](ad::Tape& t, const ad::Var& in) {
           return ad::dot(ad::slice(in, 0, 3, 9),
                          t.constant({6}, {w[0], w[1], w[2], w[3], w[4], w[5]}));
         }},
    };
    for (const auto& [name, fn] : probes) {
      INFO("op: " << name << " trial " << trial);
      CHECK(ad::finite_diff_check(fn, {12}, x, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("backward is linear in the seed") {
  std::mt19937_64 rng(99);
  const auto x = testutil::random_vector(rng, 6);
  for (double scalar : {0.5, -3.0, 7.25}) {
    ad::Tape t1;
    ad::Var a1 = t1.leaf({6}, x, true);
    ad::Var y1 = ad::l2_normalize(ad::relu(a1));
    std::vector<double> seed = testutil::random_vector(rng, 6);
    t1.backward(y1, seed);
    const auto g1 = t1.grad(a1);

    ad::Tape t2;
    ad::Var a2 = t2.leaf({6}, x, true);
    ad::Var y2 = ad::l2_normalize(ad::relu(a2));
    std::vector<double> scaled = seed;
    for (double& s : scaled) s *= scalar;
    t2.backward(y2, scaled);
    const auto g2 = t2.grad(a2);

    for (std::size_t i = 0; i < g1.size(); ++i)
      CHECK(g2[i] == doctest::Approx(scalar * g1[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic bit for bit") {
  std::mt19937_64 rng(4321);
  const auto x = testutil::random_vector(rng, 16);
  auto run = [&]() {
    ad::Tape t;
    ad::Var in = t.leaf({16}, x, false);
    ad::Var y = ad::l2_normalize(
        ad::relu(ad::matmul(in.reshape({4, 4}), ad::slice(in, 0, 0, 4))));
    return y.values();
  };
  CHECK(run() == run());
}

TEST_CASE("finite_diff_check on a constant function is zero") {
  auto fn = [](ad::Tape& t, const ad::Var&) { return t.scalar_constant(3.5); };
  CHECK(ad::finite_diff_check(fn, {4}, {1, 2, 3, 4}, 1e-6) == 0.0);
}

TEST_CASE("finite_diff_check rejects bad arguments") {
  auto fn = [](ad::Tape&, const ad::Var& in) { return ad::dot(in, in); };
  CHECK_THROWS_AS(ad::finite_diff_check(fn, {2}, {1, 2}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ad::finite_diff_check(fn, {3}, {1, 2}, 1e-6), std::invalid_argument);
}

TEST_CASE("values stay finite through ops on finite inputs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Tape t;
    ad::Var a = t.constant({8}, testutil::random_vector(rng, 8));
    ad::Var b = t.constant({8}, testutil::random_vector(rng, 8));
    ad::Var y = ad::l2_normalize(ad::add(ad::relu(a), ad::scale(b, 3.0)));
    for (double v : y.values()) CHECK(std::isfinite(v));
  }
}

TEST_SUITE_END();
