#include <cmath>
#include <filesystem>
#include <vector>

#include "cirnet/data.hpp"
#include "cirnet/errors.hpp"
#include "cirnet/png_io.hpp"
#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "testutil.hpp"

using cirnet::Rng;
using cirnet::Shape;
using cirnet::Tensor;
namespace data = cirnet::data;

namespace {

int64_t mask_count(const Tensor& gt) {
  int64_t n = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) n += gt[i] > 0.5;
  return n;
}

}  // namespace

TEST_CASE("generation is a pure function of spec and index") {
  data::SceneSpec spec;
  spec.size = 48;
  spec.seed = 77;
  data::Sample a = data::generate_one(spec, 3);
  data::Sample b = data::generate_one(spec, 3);
  CHECK(oracle::checksum(a.rgb) == oracle::checksum(b.rgb));
  CHECK(oracle::checksum(a.depth) == oracle::checksum(b.depth));
  CHECK(oracle::checksum(a.gt) == oracle::checksum(b.gt));

  data::Sample c = data::generate_one(spec, 4);
  CHECK(oracle::checksum(a.rgb) != oracle::checksum(c.rgb));

  std::vector<data::Sample> batch = data::generate(spec, 5);
  REQUIRE(batch.size() == 5);
  CHECK(oracle::checksum(batch[3].rgb) == oracle::checksum(a.rgb));
}

TEST_CASE("masks equal the repainted object supports exactly") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    data::SceneSpec spec;
    spec.size = 48;
    spec.seed = seed;
    for (int64_t index : {0, 1, 2}) {
      data::Sample s = data::generate_one(spec, index);
      std::vector<data::ObjectSpec> objs = data::scene_objects(spec, index);
      REQUIRE(!objs.empty());
      REQUIRE(static_cast<int>(objs.size()) <= spec.max_objects);
      for (int64_t y = 0; y < spec.size; ++y)
        for (int64_t x = 0; x < spec.size; ++x) {
          bool inside = false;
          for (const data::ObjectSpec& o : objs)
            inside = inside || data::shape_contains(o, static_cast<double>(x) + 0.5,
                                                    static_cast<double>(y) + 0.5);
          CHECK(s.gt.at(0, 0, y, x) == (inside ? 1.0 : 0.0));
        }
    }
  }
}

TEST_CASE("objects sit strictly nearer than the background in depth") {
  data::SceneSpec spec;
  spec.size = 48;
  spec.seed = 11;
  spec.depth_noise = 0.0;
  for (int64_t index : {0, 1, 2, 3}) {
    data::Sample s = data::generate_one(spec, index);
    REQUIRE(mask_count(s.gt) > 0);
    double min_obj = 1.0, max_bg = 0.0;
    for (int64_t i = 0; i < s.depth.numel(); ++i) {
      if (s.gt[i] > 0.5) {
        min_obj = std::min(min_obj, s.depth[i]);
      } else {
        max_bg = std::max(max_bg, s.depth[i]);
      }
    }
    CHECK(min_obj >= 0.55);
    CHECK(max_bg <= 0.45);
  }
}

TEST_CASE("object colors clear the background by the contrast gap") {
  data::SceneSpec spec;
  spec.size = 32;
  spec.seed = 13;
  data::Sample s = data::generate_one(spec, 0);
  for (int64_t i = 0; i < 32 * 32; ++i) {
    for (int64_t c = 0; c < 3; ++c) {
      double v = s.rgb[c * 32 * 32 + i];
      if (s.gt[i] > 0.5) {
        CHECK(v >= spec.contrast);
      } else {
        CHECK(v <= 1.0 - spec.contrast);
      }
    }
  }
}

TEST_CASE("flips and quarter turns move pixels without losing any") {
  Rng rng(17);
  Tensor x = Tensor::uniform({1, 3, 6, 8}, rng, 0.0, 1.0);

  Tensor f = data::flip_h(x);
  REQUIRE(f.shape() == x.shape());
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 6; ++y)
      for (int64_t xx = 0; xx < 8; ++xx) CHECK(f.at(0, c, y, xx) == x.at(0, c, y, 7 - xx));
  Tensor ff = data::flip_h(f);
  CHECK(oracle::checksum(ff) == oracle::checksum(x));

  Tensor r1 = data::rot90k(x, 1);
  REQUIRE(r1.shape() == Shape{1, 3, 8, 6});
  Tensor r4 = data::rot90k(x, 4);
  CHECK(oracle::checksum(r4) == oracle::checksum(x));
  Tensor twice = data::rot90k(data::rot90k(x, 1), 1);
  Tensor r2 = data::rot90k(x, 2);
  CHECK(oracle::checksum(twice) == oracle::checksum(r2));

  data::SceneSpec spec;
  spec.size = 32;
  spec.seed = 19;
  data::Sample s = data::generate_one(spec, 0);
  int64_t n0 = mask_count(s.gt);
  CHECK(mask_count(data::flip_h(s.gt)) == n0);
  CHECK(mask_count(data::rot90k(s.gt, 1)) == n0);
  CHECK(mask_count(data::rot90k(s.gt, 3)) == n0);
}

TEST_CASE("resampling to the same size is the identity") {
  Rng rng(23);
  Tensor x = Tensor::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor same = data::resize_any(x, 16, 16);
  CHECK(oracle::checksum(same) == oracle::checksum(x));
}

TEST_CASE("downscale then upscale keeps the mask close") {
  data::SceneSpec spec;
  spec.size = 64;
  spec.seed = 29;
  int64_t worst = 0;
  for (int64_t index : {0, 1, 2, 3, 4, 5, 6, 7}) {
    data::Sample s = data::generate_one(spec, index);
    Tensor down = data::resize_any(s.gt, 48, 48);
    for (int64_t i = 0; i < down.numel(); ++i) down[i] = down[i] >= 0.5 ? 1.0 : 0.0;
    Tensor up = data::resize_any(down, 64, 64);
    int64_t mismatch = 0;
    for (int64_t i = 0; i < up.numel(); ++i) {
      double rebinarized = up[i] >= 0.5 ? 1.0 : 0.0;
      mismatch += rebinarized != s.gt[i];
    }
    worst = std::max(worst, mismatch);
  }
  // boundary pixels may flip under resampling; the bulk must survive
  CHECK(worst < 64 * 64 / 20);
}

TEST_CASE("augmentation draws flips, turns, and scales from its rng") {
  data::SceneSpec spec;
  spec.size = 64;
  spec.seed = 31;
  data::Sample s = data::generate_one(spec, 0);

  data::AugmentConfig cfg;
  cfg.scales = {48};
  Rng r1(5), r2(5);
  data::Sample a = data::augment(s, r1, cfg);
  data::Sample b = data::augment(s, r2, cfg);
  CHECK(a.rgb.shape() == Shape{1, 3, 48, 48});
  CHECK(a.depth.shape() == Shape{1, 1, 48, 48});
  CHECK(oracle::checksum(a.rgb) == oracle::checksum(b.rgb));
  CHECK(oracle::checksum(a.gt) == oracle::checksum(b.gt));
  for (int64_t i = 0; i < a.gt.numel(); ++i) {
    bool binary = a.gt[i] == 0.0 || a.gt[i] == 1.0;
    CHECK(binary);
  }

  data::AugmentConfig keep;
  keep.flip_prob = 0.0;
  keep.rotate = false;
  keep.scales = {64};
  Rng r3(9);
  data::Sample c = data::augment(s, r3, keep);
  CHECK(oracle::checksum(c.rgb) == oracle::checksum(s.rgb));
  CHECK(oracle::checksum(c.gt) == oracle::checksum(s.gt));
}

TEST_CASE("png round trip preserves every quantized byte") {
  testutil::TempDir dir("png_roundtrip");
  std::string rgb_dir = dir.sub("rgb"), depth_dir = dir.sub("depth"), gt_dir = dir.sub("gt");
  data::SceneSpec spec;
  spec.size = 32;
  spec.seed = 37;
  data::Sample s = data::generate_one(spec, 0);
  data::save_sample(rgb_dir, depth_dir, gt_dir, 0, s);
  data::save_sample(rgb_dir, depth_dir, gt_dir, 12, data::generate_one(spec, 12));

  CHECK(std::filesystem::exists(rgb_dir + "/0000_rgb.png"));
  CHECK(std::filesystem::exists(depth_dir + "/0012_depth.png"));
  CHECK(std::filesystem::exists(gt_dir + "/0012_gt.png"));

  auto pairs = data::load_pairs(rgb_dir, depth_dir, gt_dir);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].first == "0000");
  CHECK(pairs[1].first == "0012");

  const data::Sample& back = pairs[0].second;
  REQUIRE(back.rgb.shape() == s.rgb.shape());
  for (int64_t i = 0; i < s.rgb.numel(); ++i) {
    double q = std::floor(255.0 * s.rgb[i] + 0.5) / 255.0;
    CHECK(back.rgb[i] == q);
  }
  for (int64_t i = 0; i < s.depth.numel(); ++i) {
    double q = std::floor(255.0 * s.depth[i] + 0.5) / 255.0;
    CHECK(back.depth[i] == q);
  }
  for (int64_t i = 0; i < s.gt.numel(); ++i) CHECK(back.gt[i] == s.gt[i]);

  auto no_gt = data::load_pairs(rgb_dir, depth_dir, "");
  REQUIRE(no_gt.size() == 2);
  CHECK(no_gt[0].second.gt.empty());
}

TEST_CASE("the loader rejects broken triples") {
  testutil::TempDir dir("broken_triples");
  std::string rgb_dir = dir.sub("rgb"), depth_dir = dir.sub("depth"), gt_dir = dir.sub("gt");
  CHECK_THROWS_AS(data::load_pairs(rgb_dir, depth_dir, gt_dir), cirnet::IoError);

  data::SceneSpec spec;
  spec.size = 16;
  spec.seed = 41;
  data::Sample s = data::generate_one(spec, 0);
  data::save_sample(rgb_dir, depth_dir, gt_dir, 0, s);
  std::filesystem::remove(depth_dir + "/0000_depth.png");
  CHECK_THROWS_AS(data::load_pairs(rgb_dir, depth_dir, gt_dir), cirnet::IoError);

  // size mismatch within a triple
  std::vector<uint8_t> gray(8 * 8, 100);
  cirnet::io::write_png_gray(depth_dir + "/0000_depth.png", 8, 8, gray.data());
  CHECK_THROWS_AS(data::load_pairs(rgb_dir, depth_dir, gt_dir), cirnet::IoError);
}

TEST_CASE("empty scenes never happen and object counts respect the spec") {
  data::SceneSpec spec;
  spec.size = 32;
  spec.min_objects = 2;
  spec.max_objects = 3;
  spec.seed = 43;
  for (int64_t i = 0; i < 6; ++i) {
    std::vector<data::ObjectSpec> objs = data::scene_objects(spec, i);
    CHECK(objs.size() >= 2);
    CHECK(objs.size() <= 3);
  }
}
