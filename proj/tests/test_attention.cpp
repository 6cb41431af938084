#include <cmath>
#include <stdexcept>

#include "cirnet/attention.hpp"
#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using cirnet::Rng;
using cirnet::Shape;
using cirnet::Tensor;
namespace att = cirnet::att;

namespace {

void zero_gates(att::SmarUnit& u) {
  if (u.sa) {
    u.sa->conv.conv.kernel.fill(0.0);
    u.sa->conv.conv.bias.fill(0.0);
  }
  if (u.ca) {
    u.ca->fc1.kernel.fill(0.0);
    u.ca->fc1.bias.fill(0.0);
    u.ca->fc2.kernel.fill(0.0);
    u.ca->fc2.bias.fill(0.0);
  }
}

}  // namespace

TEST_CASE("spatial gate lives strictly inside the unit interval") {
  Rng rng(301);
  att::SpatialAttention sa = att::SpatialAttention::make();
  sa.init(rng);
  Tensor x = Tensor::uniform({2, 5, 6, 6}, rng, -2.0, 2.0);
  Tensor a = att::spatial_attention(x, sa, true);
  REQUIRE(a.shape() == Shape{2, 1, 6, 6});
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] > 0.0);
    CHECK(a[i] < 1.0);
  }
}

TEST_CASE("spatial gate matches its cue pipeline in eval mode") {
  Rng rng(307);
  att::SpatialAttention sa = att::SpatialAttention::make();
  sa.init(rng);
  for (int64_t c = 0; c < 1; ++c) {
    sa.conv.bn.running_mean[c] = rng.uniform(-0.5, 0.5);
    sa.conv.bn.running_var[c] = rng.uniform(0.5, 2.0);
  }
  Tensor x = Tensor::uniform({2, 4, 5, 5}, rng, -2.0, 2.0);
  Tensor got = att::spatial_attention(x, sa, false);
  Tensor want = oracle::spatial_gate_eval(x, sa);
  for (int64_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("a forced bias saturates the spatial gate exactly") {
  Rng rng(311);
  att::SpatialAttention sa = att::SpatialAttention::make();
  sa.init(rng);
  sa.conv.conv.kernel.fill(0.0);
  Tensor x = Tensor::uniform({1, 3, 4, 4}, rng, -1.0, 1.0);

  sa.conv.conv.bias.fill(-1e4);
  Tensor closed = att::spatial_attention(x, sa, false);
  for (int64_t i = 0; i < closed.numel(); ++i) CHECK(closed[i] == 0.0);

  sa.conv.conv.bias.fill(1e4);
  Tensor open = att::spatial_attention(x, sa, false);
  for (int64_t i = 0; i < open.numel(); ++i) CHECK(open[i] == 1.0);
}

TEST_CASE("channel gate shape, range, and divisibility guard") {
  Rng rng(313);
  att::ChannelAttention ca = att::ChannelAttention::make(8, 4);
  ca.init(rng);
  Tensor x = Tensor::uniform({2, 8, 3, 3}, rng, -2.0, 2.0);
  Tensor g = att::channel_attention(x, ca);
  REQUIRE(g.shape() == Shape{2, 8, 1, 1});
  for (int64_t i = 0; i < g.numel(); ++i) {
    CHECK(g[i] > 0.0);
    CHECK(g[i] < 1.0);
  }
  CHECK_THROWS_AS(att::ChannelAttention::make(6, 4), std::invalid_argument);
}

TEST_CASE("attention cube is the exact outer product of its gates") {
  Rng rng(317);
  Tensor ca = Tensor::uniform({2, 4, 1, 1}, rng, 0.0, 1.0);
  Tensor sa = Tensor::uniform({2, 1, 3, 5}, rng, 0.0, 1.0);
  Tensor cube = att::attention_cube(ca, sa);
  REQUIRE(cube.shape() == Shape{2, 4, 3, 5});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 5; ++x)
          CHECK(cube.at(n, c, y, x) == ca.at(n, c, 0, 0) * sa.at(n, 0, y, x));

  Tensor bad({2, 4, 2, 1});
  CHECK_THROWS_AS(att::attention_cube(bad, sa), std::invalid_argument);
}

TEST_CASE("zeroed gates turn the premix into a fixed residual scale") {
  Rng rng(331);
  Tensor x = Tensor::uniform({1, 4, 4, 4}, rng, 0.05, 0.95);

  for (att::SmarMode mode : {att::SmarMode::full3d, att::SmarMode::serial_sa_ca}) {
    att::SmarUnit u = att::SmarUnit::make(4, 2, mode);
    u.init(rng);
    zero_gates(u);
    Tensor pre = att::smar_premix(x, u, false);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(pre[i] == 1.25 * x[i]);
  }
  for (att::SmarMode mode : {att::SmarMode::ca_only, att::SmarMode::sa_only}) {
    att::SmarUnit u = att::SmarUnit::make(4, 2, mode);
    u.init(rng);
    zero_gates(u);
    Tensor pre = att::smar_premix(x, u, false);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(pre[i] == 1.5 * x[i]);
  }
}

TEST_CASE("refinement output is the mixed premix") {
  Rng rng(337);
  att::SmarUnit u = att::SmarUnit::make(4, 2, att::SmarMode::full3d);
  u.init(rng);
  Tensor x = Tensor::uniform({2, 4, 5, 5}, rng, -1.0, 1.0);
  Tensor y = att::smar_refine(x, u, true);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] >= 0.0);
}

TEST_CASE("unit construction honors its mode") {
  CHECK_THROWS_AS(att::SmarUnit::make(4, 2, att::SmarMode::off), std::invalid_argument);
  att::SmarUnit sa_only = att::SmarUnit::make(4, 2, att::SmarMode::sa_only);
  CHECK(sa_only.sa.has_value());
  CHECK_FALSE(sa_only.ca.has_value());
  att::SmarUnit ca_only = att::SmarUnit::make(4, 2, att::SmarMode::ca_only);
  CHECK_FALSE(ca_only.sa.has_value());
  CHECK(ca_only.ca.has_value());
  att::SmarUnit full = att::SmarUnit::make(4, 2, att::SmarMode::full3d);
  CHECK(full.sa.has_value());
  CHECK(full.ca.has_value());
}
