#include <cstring>
#include <stdexcept>
#include <vector>

#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using cirnet::Rng;
using cirnet::Shape;
using cirnet::Tensor;

TEST_CASE("shape and flat indexing agree") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  int64_t flat = 0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 5; ++w) CHECK(t.index(n, c, h, w) == flat++);
  CHECK(Shape{2, 3, 4, 5}.dim(0) == 2);
  CHECK(Shape{2, 3, 4, 5}.dim(3) == 5);
}

TEST_CASE("elementwise ops on known values") {
  Tensor a = Tensor::from_values({1, 1, 1, 2}, {2.0, 3.0});
  Tensor b = Tensor::from_values({1, 1, 1, 2}, {4.0, 5.0});
  Tensor m = cirnet::mul(a, b);
  CHECK(m[0] == 8.0);
  CHECK(m[1] == 15.0);
  Tensor s = cirnet::add(a, b);
  CHECK(s[0] == 6.0);
  CHECK(s[1] == 8.0);
  Tensor d = cirnet::sub(b, a);
  CHECK(d[0] == 2.0);
  CHECK(d[1] == 2.0);
}

TEST_CASE("broadcast matches a materialized tile") {
  Rng rng(11);
  Shape full{2, 3, 4, 5};
  std::vector<Shape> smalls = {{1, 3, 1, 1}, {1, 1, 4, 5}, {2, 1, 1, 1},
                               {1, 1, 1, 1}, {2, 3, 4, 5}, {1, 3, 4, 1}};
  for (const Shape& bs : smalls) {
    Tensor a = Tensor::uniform(full, rng, -2.0, 2.0);
    Tensor b = Tensor::uniform(bs, rng, -2.0, 2.0);
    Tensor tiled = oracle::tile_to(b, full);
    for (auto op : {&cirnet::add, &cirnet::sub, &cirnet::mul}) {
      Tensor got = op(a, b);
      Tensor want = op(a, tiled);
      REQUIRE(got.shape() == full);
      for (int64_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
    }
  }
}

TEST_CASE("broadcast rejects shape mismatches") {
  CHECK(cirnet::broadcastable_to({1, 3, 1, 1}, {2, 3, 4, 5}));
  CHECK_FALSE(cirnet::broadcastable_to({1, 4, 1, 1}, {2, 3, 4, 5}));
  CHECK_FALSE(cirnet::broadcastable_to({2, 3, 4, 5}, {1, 3, 1, 1}));
  Tensor a({1, 3, 2, 2});
  Tensor b({1, 2, 2, 2});
  CHECK_THROWS_AS(cirnet::add(a, b), std::invalid_argument);
}

TEST_CASE("concat stacks channel blocks in order") {
  Rng rng(5);
  Tensor a = Tensor::uniform({2, 2, 3, 3}, rng, -1.0, 1.0);
  Tensor b = Tensor::uniform({2, 1, 3, 3}, rng, -1.0, 1.0);
  Tensor c = Tensor::uniform({2, 4, 3, 3}, rng, -1.0, 1.0);
  Tensor out = cirnet::concat_channels({a, b, c});
  REQUIRE(out.shape() == Shape{2, 7, 3, 3});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 3; ++x) {
        for (int64_t ch = 0; ch < 2; ++ch) CHECK(out.at(n, ch, y, x) == a.at(n, ch, y, x));
        CHECK(out.at(n, 2, y, x) == b.at(n, 0, y, x));
        for (int64_t ch = 0; ch < 4; ++ch) CHECK(out.at(n, 3 + ch, y, x) == c.at(n, ch, y, x));
      }
  Tensor bad({1, 1, 3, 3});
  CHECK_THROWS_AS(cirnet::concat_channels({a, bad}), std::invalid_argument);
}

TEST_CASE("matmul matches the reference on assorted shapes") {
  Rng rng(17);
  struct Case {
    int64_t n, m, k, c;
  };
  for (Case cs : {Case{1, 1, 1, 1}, Case{1, 3, 4, 5}, Case{1, 7, 2, 9}, Case{2, 4, 4, 4},
                  Case{3, 5, 8, 2}, Case{1, 9, 16, 9}}) {
    Tensor a = Tensor::uniform({cs.n, 1, cs.m, cs.k}, rng, -1.0, 1.0);
    Tensor b = Tensor::uniform({cs.n, 1, cs.k, cs.c}, rng, -1.0, 1.0);
    Tensor got = cirnet::matmul(a, b);
    Tensor want = oracle::matmul(a, b, false, false);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
  Tensor a({1, 1, 2, 3});
  Tensor b({1, 1, 4, 5});
  CHECK_THROWS_AS(cirnet::matmul(a, b), std::invalid_argument);
}

TEST_CASE("transpose2d flips rows and columns") {
  Rng rng(23);
  Tensor a = Tensor::uniform({2, 1, 3, 5}, rng, -1.0, 1.0);
  Tensor t = cirnet::transpose2d(a);
  REQUIRE(t.shape() == Shape{2, 1, 5, 3});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) CHECK(t.at(n, 0, j, i) == a.at(n, 0, i, j));
}

TEST_CASE("reshape keeps flat order and checks counts") {
  Rng rng(29);
  Tensor a = Tensor::uniform({2, 3, 2, 2}, rng, -1.0, 1.0);
  Tensor r = cirnet::reshape(a, {1, 1, 6, 4});
  REQUIRE(r.numel() == a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(r[i] == a[i]);
  CHECK_THROWS_AS(cirnet::reshape(a, Shape{1, 1, 5, 4}), std::invalid_argument);
}

TEST_CASE("ops leave their inputs untouched") {
  Rng rng(31);
  Tensor a = Tensor::uniform({1, 2, 3, 3}, rng, -1.0, 1.0);
  Tensor b = Tensor::uniform({1, 2, 3, 3}, rng, -1.0, 1.0);
  std::vector<double> a0(a.data(), a.data() + a.numel());
  std::vector<double> b0(b.data(), b.data() + b.numel());
  (void)cirnet::mul(a, b);
  (void)cirnet::add(a, b);
  (void)cirnet::concat_channels({a, b});
  CHECK(std::memcmp(a0.data(), a.data(), a0.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(b0.data(), b.data(), b0.size() * sizeof(double)) == 0);
}

TEST_CASE("rng sequences are pure functions of the seed") {
  Rng a(99), b(99), c(100);
  bool differs = false;
  for (int i = 0; i < 64; ++i) {
    uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    differs = differs || va != c.next_u64();
  }
  CHECK(differs);

  Rng d(7), e(7);
  Tensor t1 = Tensor::uniform({1, 2, 3, 3}, d, -1.0, 1.0);
  Tensor t2 = Tensor::uniform({1, 2, 3, 3}, e, -1.0, 1.0);
  CHECK(oracle::checksum(t1) == oracle::checksum(t2));
}

TEST_CASE("bounded draws stay in range and always consume one draw") {
  Rng a(3);
  for (int i = 0; i < 1000; ++i) CHECK(a.below(5) < 5);
  Rng b(3), c(3);
  (void)b.below(1);
  (void)c.next_u64();
  CHECK(b.next_u64() == c.next_u64());
  CHECK(Rng(8).below(1) == 0);
}

TEST_CASE("uniform spans its interval") {
  Rng rng(41);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 4000; ++i) {
    double v = rng.uniform(0.0, 1.0);
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}
