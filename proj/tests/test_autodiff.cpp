#include <cmath>
#include <stdexcept>

#include "cirnet/autodiff.hpp"
#include "cirnet/gradsuite.hpp"
#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"
#include "doctest.h"

using cirnet::Rng;
using cirnet::Shape;
using cirnet::Tensor;
namespace ad = cirnet::ad;

TEST_CASE("backward of x*x is 2x") {
  ad::Tape t;
  Tensor x0 = Tensor::from_values({1, 1, 1, 3}, {1.5, -2.0, 0.25});
  ad::Var x = t.leaf(x0, true);
  ad::Var loss = ad::sum(t, ad::mul(t, x, x));
  t.backward(loss);
  REQUIRE(t.has_grad(x));
  const Tensor& g = t.grad(x);
  for (int64_t i = 0; i < 3; ++i) CHECK(g[i] == 2.0 * x0[i]);
}

TEST_CASE("gradients accumulate across reuses") {
  ad::Tape t;
  Tensor x0 = Tensor::from_values({1, 1, 1, 2}, {3.0, -1.0});
  ad::Var x = t.leaf(x0, true);
  ad::Var y = ad::add(t, x, x);
  ad::Var z = ad::add(t, y, x);
  t.backward(ad::sum(t, z));
  const Tensor& g = t.grad(x);
  CHECK(g[0] == 3.0);
  CHECK(g[1] == 3.0);
}

TEST_CASE("broadcast gradients reduce to the leaf shape") {
  ad::Tape t;
  Rng rng(7);
  Tensor a0 = Tensor::uniform({2, 3, 2, 2}, rng, -1.0, 1.0);
  Tensor b0 = Tensor::uniform({1, 3, 1, 1}, rng, -1.0, 1.0);
  ad::Var a = t.leaf(a0, true);
  ad::Var b = t.leaf(b0, true);
  t.backward(ad::sum(t, ad::mul(t, a, b)));
  REQUIRE(t.grad(b).shape() == Shape{1, 3, 1, 1});
  for (int64_t c = 0; c < 3; ++c) {
    double want = 0.0;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 0; x < 2; ++x) want += a0.at(n, c, y, x);
    CHECK(std::abs(t.grad(b)[c] - want) < 1e-12);
  }
}

TEST_CASE("reduce_to sums over squeezed axes") {
  Rng rng(11);
  Tensor g = Tensor::uniform({2, 3, 4, 5}, rng, -1.0, 1.0);
  Tensor r = ad::reduce_to(g, {1, 3, 1, 1});
  REQUIRE(r.shape() == Shape{1, 3, 1, 1});
  for (int64_t c = 0; c < 3; ++c) {
    double want = 0.0;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 5; ++x) want += g.at(n, c, y, x);
    CHECK(std::abs(r[c] - want) < 1e-12);
  }
}

TEST_CASE("bce agrees with the closed form at plain points") {
  ad::Tape t;
  Tensor s0 = Tensor::from_values({1, 1, 1, 2}, {0.8, 0.3});
  Tensor g0 = Tensor::from_values({1, 1, 1, 2}, {1.0, 0.0});
  ad::Var s = t.leaf(s0, false);
  double want = 0.5 * (-std::log(0.8) - std::log(0.7));
  CHECK(std::abs(t.value(ad::bce_loss(t, s, g0))[0] - want) < 1e-12);

  Tensor hard = Tensor::from_values({1, 1, 1, 1}, {0.0});
  Tensor one = Tensor::from_values({1, 1, 1, 1}, {1.0});
  ad::Var h = t.leaf(hard, false);
  CHECK(std::abs(t.value(ad::bce_loss(t, h, one))[0] + std::log(1e-7)) < 1e-9);
}

TEST_CASE("grad_check rejects an unusable step") {
  auto value = [](const Tensor& x) { return x[0]; };
  auto gradient = [](const Tensor& x) { return Tensor(x.shape(), 1.0); };
  Tensor x({1, 1, 1, 1}, 0.5);
  CHECK_THROWS_AS(ad::grad_check(value, gradient, x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ad::grad_check(value, gradient, x, 2e-3), std::invalid_argument);
}

TEST_CASE("grad_check flags non-finite probes") {
  auto value = [](const Tensor& x) { return std::log(x[0]); };
  auto gradient = [](const Tensor& x) { return Tensor(x.shape(), 1.0 / x[0]); };
  Tensor x({1, 1, 1, 1}, 1e-7);
  CHECK_THROWS_AS(ad::grad_check(value, gradient, x, 1e-5), std::runtime_error);
}

TEST_CASE("grad_check honors coordinate subsets and skips") {
  auto value = [](const Tensor& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i] * x[i];
    return acc;
  };
  auto gradient = [](const Tensor& x) {
    Tensor g(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) g[i] = 2.0 * x[i];
    return g;
  };
  Rng rng(3);
  Tensor x = Tensor::uniform({1, 2, 4, 4}, rng, -1.0, 1.0);
  ad::GradCheckResult r = ad::grad_check(value, gradient, x, 1e-5, 1e-4, nullptr, 7, 99);
  CHECK(r.pass);
  CHECK(r.checked == 7);

  std::vector<uint8_t> skip(static_cast<size_t>(x.numel()), 1);
  skip[3] = 0;
  r = ad::grad_check(value, gradient, x, 1e-5, 1e-4, &skip);
  CHECK(r.checked == 1);
}

TEST_CASE("grad_check catches a wrong gradient") {
  auto value = [](const Tensor& x) { return x[0] * x[0]; };
  auto gradient = [](const Tensor& x) { return Tensor(x.shape(), 3.0 * x[0]); };
  Tensor x({1, 1, 1, 1}, 0.7);
  ad::GradCheckResult r = ad::grad_check(value, gradient, x, 1e-5, 1e-4);
  CHECK_FALSE(r.pass);
}

TEST_CASE("binder keeps parameter order") {
  ad::Tape t;
  ad::Binder b(t);
  Tensor p1({1, 2, 1, 1}, 1.0), p2({1, 3, 1, 1}, 2.0), p3({1, 1, 1, 1}, 3.0);
  ad::Var v1 = b.bind(p1);
  ad::Var v2 = b.bind(p2);
  ad::Var v3 = b.bind(p3);
  REQUIRE(b.entries.size() == 3);
  CHECK(b.entries[0].first.id == v1.id);
  CHECK(b.entries[0].second == &p1);
  CHECK(b.entries[1].second == &p2);
  CHECK(b.entries[2].first.id == v3.id);
}

TEST_CASE("full derivative sweep at one seed") {
  auto results = cirnet::gradsuite::run_all(20260819, 1, 1e-4);
  REQUIRE(!results.empty());
  for (const auto& r : results) {
    INFO(r.name, " rel err ", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.checked > 0);
  }
}
