#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"

namespace cirnet::data {

// Recipe for a synthetic scene set. Bright shapes on a dark background with
// the objects nearer (depth closer to 1) than anything behind them.
struct SceneSpec {
  int64_t size = 64;
  int min_objects = 1, max_objects = 3;
  double contrast = 0.9;     // color gap: background <= 1-contrast, objects >= contrast
  double depth_noise = 0.1;  // how much background depth bleeds into object depth
  uint64_t seed = 0;
};

struct Sample {
  Tensor rgb;    // (1,3,H,W) in [0,1]
  Tensor depth;  // (1,1,H,W) in [0,1]
  Tensor gt;     // (1,1,H,W) in {0,1}
};

enum class ShapeKind { disk, rect, triangle };

struct ObjectSpec {
  ShapeKind kind = ShapeKind::disk;
  // disk: center + radius; rect: corner box; triangle: three vertices.
  double p[6] = {0, 0, 0, 0, 0, 0};
  std::array<double, 3> color{1, 1, 1};
  double depth = 0.9;
};

// Support predicate at a continuous point; generation samples it at pixel
// centers (x+0.5, y+0.5), so tests can recount supports independently.
bool shape_contains(const ObjectSpec& o, double px, double py);

// Deterministic in (spec, index): sample i draws from Rng(seed ^ i).
Sample generate_one(const SceneSpec& spec, int64_t index);
std::vector<Sample> generate(const SceneSpec& spec, int64_t n);

// The objects rendered into sample `index`, in paint order.
std::vector<ObjectSpec> scene_objects(const SceneSpec& spec, int64_t index);

struct AugmentConfig {
  double flip_prob = 0.5;
  bool rotate = true;        // k*90 degrees, k uniform in 0..3
  std::vector<int64_t> scales{48, 64, 80};
};

// Horizontal flip, quarter-turn rotation, and rescale to a size drawn from
// the scale set; rgb, depth and gt move together and gt re-binarizes at 0.5.
Sample augment(const Sample& s, Rng& rng, const AugmentConfig& cfg);

Tensor flip_h(const Tensor& x);
Tensor rot90k(const Tensor& x, int k);
// Bilinear resample to any size (up or down), half-pixel centers. Identity
// when the size already matches.
Tensor resize_any(const Tensor& x, int64_t oh, int64_t ow);

// NNNN_{rgb|depth|gt}.png triple under the three directories, 8-bit
// quantized as round(255*v).
void save_sample(const std::string& rgb_dir, const std::string& depth_dir,
                 const std::string& gt_dir, int64_t index, const Sample& s);

// Loads every *_rgb.png stem found in rgb_dir together with its depth and gt
// partners. Pass an empty gt_dir to skip masks (gt tensors stay empty).
// Missing partners and size mismatches within a triple are errors.
std::vector<std::pair<std::string, Sample>> load_pairs(const std::string& rgb_dir,
                                                       const std::string& depth_dir,
                                                       const std::string& gt_dir);

}  // namespace cirnet::data
