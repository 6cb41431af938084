#include "cirnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "cirnet/errors.hpp"
#include "cirnet/png_io.hpp"

namespace fs = std::filesystem;

namespace cirnet::data {

namespace {

void validate(const SceneSpec& spec) {
  if (spec.size < 16 || spec.size % 16 != 0) {
    throw std::invalid_argument("scene size must be a positive multiple of 16");
  }
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects) {
    throw std::invalid_argument("object count range must satisfy 1 <= min <= max");
  }
  if (spec.contrast < 0.0 || spec.contrast > 1.0 || spec.depth_noise < 0.0 ||
      spec.depth_noise > 1.0) {
    throw std::invalid_argument("contrast and depth_noise must lie in [0,1]");
  }
}

struct SceneParams {
  std::array<double, 3> bg_color;
  double bg_depth_base;
  std::vector<ObjectSpec> objects;
};

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Consumes a fixed-order stream of draws so the object list and the render
// agree between generate_one and scene_objects.
SceneParams draw_scene(const SceneSpec& spec, Rng& rng) {
  SceneParams sp;
  double sz = static_cast<double>(spec.size);
  for (int c = 0; c < 3; ++c) sp.bg_color[c] = rng.uniform(0.0, 1.0 - spec.contrast);
  sp.bg_depth_base = rng.uniform(0.05, 0.40);
  int k = spec.min_objects +
          static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1)));
  sp.objects.resize(k);
  for (ObjectSpec& o : sp.objects) {
    switch (rng.below(3)) {
      case 0: {
        o.kind = ShapeKind::disk;
        double r = rng.uniform(0.10, 0.25) * sz;
        o.p[0] = rng.uniform(r, sz - r);
        o.p[1] = rng.uniform(r, sz - r);
        o.p[2] = r;
        break;
      }
      case 1: {
        o.kind = ShapeKind::rect;
        double w = rng.uniform(0.15, 0.40) * sz;
        double h = rng.uniform(0.15, 0.40) * sz;
        o.p[0] = rng.uniform(0.05 * sz, 0.95 * sz - w);
        o.p[1] = rng.uniform(0.05 * sz, 0.95 * sz - h);
        o.p[2] = o.p[0] + w;
        o.p[3] = o.p[1] + h;
        break;
      }
      default: {
        o.kind = ShapeKind::triangle;
        double min_area = 0.08 * sz * 0.08 * sz;
        do {
          for (int i = 0; i < 6; ++i) o.p[i] = rng.uniform(0.05 * sz, 0.95 * sz);
        } while (0.5 * std::fabs(cross2(o.p[2] - o.p[0], o.p[3] - o.p[1], o.p[4] - o.p[0],
                                        o.p[5] - o.p[1])) < min_area);
        break;
      }
    }
    for (int c = 0; c < 3; ++c) o.color[c] = rng.uniform(spec.contrast, 1.0);
    o.depth = rng.uniform(0.55, 0.95);
  }
  return sp;
}

}  // namespace

bool shape_contains(const ObjectSpec& o, double px, double py) {
  switch (o.kind) {
    case ShapeKind::disk: {
      double dx = px - o.p[0], dy = py - o.p[1];
      return dx * dx + dy * dy <= o.p[2] * o.p[2];
    }
    case ShapeKind::rect:
      return px >= o.p[0] && px <= o.p[2] && py >= o.p[1] && py <= o.p[3];
    case ShapeKind::triangle: {
      double d1 = cross2(o.p[2] - o.p[0], o.p[3] - o.p[1], px - o.p[0], py - o.p[1]);
      double d2 = cross2(o.p[4] - o.p[2], o.p[5] - o.p[3], px - o.p[2], py - o.p[3]);
      double d3 = cross2(o.p[0] - o.p[4], o.p[1] - o.p[5], px - o.p[4], py - o.p[5]);
      return (d1 >= 0 && d2 >= 0 && d3 >= 0) || (d1 <= 0 && d2 <= 0 && d3 <= 0);
    }
  }
  return false;
}

std::vector<ObjectSpec> scene_objects(const SceneSpec& spec, int64_t index) {
  validate(spec);
  Rng rng(spec.seed ^ static_cast<uint64_t>(index));
  return draw_scene(spec, rng).objects;
}

Sample generate_one(const SceneSpec& spec, int64_t index) {
  validate(spec);
  Rng rng(spec.seed ^ static_cast<uint64_t>(index));
  SceneParams sp = draw_scene(spec, rng);

  int64_t s = spec.size;
  Sample out;
  out.rgb = Tensor(Shape{1, 3, s, s});
  out.depth = Tensor(Shape{1, 1, s, s});
  out.gt = Tensor(Shape{1, 1, s, s});

  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      double jitter = rng.uniform();
      double noise = rng.uniform();
      double bg_d = sp.bg_depth_base + 0.05 * jitter;
      double px = static_cast<double>(x) + 0.5;
      double py = static_cast<double>(y) + 0.5;
      const ObjectSpec* top = nullptr;
      for (const ObjectSpec& o : sp.objects) {
        if (shape_contains(o, px, py)) top = &o;
      }
      int64_t at = y * s + x;
      if (top) {
        for (int c = 0; c < 3; ++c) out.rgb[c * s * s + at] = top->color[c];
        out.depth[at] = top->depth + (bg_d - top->depth) * (spec.depth_noise * noise);
        out.gt[at] = 1.0;
      } else {
        for (int c = 0; c < 3; ++c) out.rgb[c * s * s + at] = sp.bg_color[c];
        out.depth[at] = bg_d;
        out.gt[at] = 0.0;
      }
    }
  }
  return out;
}

std::vector<Sample> generate(const SceneSpec& spec, int64_t n) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) out.push_back(generate_one(spec, i));
  return out;
}

Tensor flip_h(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(s);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t xx = 0; xx < s.w; ++xx) {
          out.at(n, c, y, xx) = x.at(n, c, y, s.w - 1 - xx);
        }
      }
    }
  }
  return out;
}

namespace {

Tensor rot90_once(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(Shape{s.n, s.c, s.w, s.h});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < s.w; ++y) {
        for (int64_t xx = 0; xx < s.h; ++xx) {
          out.at(n, c, y, xx) = x.at(n, c, s.h - 1 - xx, y);
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor rot90k(const Tensor& x, int k) {
  int r = ((k % 4) + 4) % 4;
  Tensor out = x;
  for (int i = 0; i < r; ++i) out = rot90_once(out);
  return out;
}

Tensor resize_any(const Tensor& x, int64_t oh, int64_t ow) {
  const Shape& s = x.shape();
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize target must be positive");
  if (oh == s.h && ow == s.w) return x;

  auto coeffs = [](int64_t in, int64_t out, std::vector<int64_t>& i0, std::vector<int64_t>& i1,
                   std::vector<double>& w1) {
    i0.resize(out);
    i1.resize(out);
    w1.resize(out);
    for (int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                       static_cast<double>(out) -
                   0.5;
      double f = std::floor(src);
      int64_t a = static_cast<int64_t>(f);
      double frac = src - f;
      if (a < 0) {
        a = 0;
        frac = 0.0;
      }
      int64_t b = a + 1;
      if (b > in - 1) {
        b = in - 1;
        if (a > b) a = b;
        if (a == b) frac = 0.0;
      }
      i0[o] = a;
      i1[o] = b;
      w1[o] = frac;
    }
  };
  std::vector<int64_t> y0, y1, x0, x1;
  std::vector<double> fy, fx;
  coeffs(s.h, oh, y0, y1, fy);
  coeffs(s.w, ow, x0, x1, fx);

  Tensor out(Shape{s.n, s.c, oh, ow});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xx = 0; xx < ow; ++xx) {
          double top = x.at(n, c, y0[y], x0[xx]) * (1.0 - fx[xx]) +
                       x.at(n, c, y0[y], x1[xx]) * fx[xx];
          double bot = x.at(n, c, y1[y], x0[xx]) * (1.0 - fx[xx]) +
                       x.at(n, c, y1[y], x1[xx]) * fx[xx];
          out.at(n, c, y, xx) = top * (1.0 - fy[y]) + bot * fy[y];
        }
      }
    }
  }
  return out;
}

Sample augment(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
  Sample out = s;
  if (rng.bernoulli(cfg.flip_prob)) {
    out.rgb = flip_h(out.rgb);
    out.depth = flip_h(out.depth);
    out.gt = flip_h(out.gt);
  }
  if (cfg.rotate) {
    int k = static_cast<int>(rng.below(4));
    if (k != 0) {
      out.rgb = rot90k(out.rgb, k);
      out.depth = rot90k(out.depth, k);
      out.gt = rot90k(out.gt, k);
    }
  }
  if (!cfg.scales.empty()) {
    int64_t target = cfg.scales[rng.below(cfg.scales.size())];
    if (target != out.rgb.shape().h || target != out.rgb.shape().w) {
      out.rgb = resize_any(out.rgb, target, target);
      out.depth = resize_any(out.depth, target, target);
      out.gt = resize_any(out.gt, target, target);
      for (int64_t i = 0; i < out.gt.numel(); ++i) out.gt[i] = out.gt[i] >= 0.5 ? 1.0 : 0.0;
    }
  }
  return out;
}

namespace {

uint8_t quantize(double v) {
  double q = std::floor(255.0 * v + 0.5);
  if (q < 0.0) q = 0.0;
  if (q > 255.0) q = 255.0;
  return static_cast<uint8_t>(q);
}

std::string stem_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(index));
  return buf;
}

Tensor gray_to_tensor(const io::ImageU8& img, const std::string& path) {
  if (img.channels != 1) throw IoError("expected a grayscale png: " + path);
  Tensor t(Shape{1, 1, img.h, img.w});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = img.pix[i] / 255.0;
  return t;
}

}  // namespace

void save_sample(const std::string& rgb_dir, const std::string& depth_dir,
                 const std::string& gt_dir, int64_t index, const Sample& s) {
  const Shape& sh = s.rgb.shape();
  int64_t hw = sh.h * sh.w;
  std::vector<uint8_t> rgb(3 * hw), gray(hw);
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = quantize(s.rgb[c * hw + i]);
  }
  std::string stem = stem_name(index);
  std::error_code ec;
  fs::create_directories(rgb_dir, ec);
  fs::create_directories(depth_dir, ec);
  fs::create_directories(gt_dir, ec);
  io::write_png_rgb(rgb_dir + "/" + stem + "_rgb.png", sh.h, sh.w, rgb.data());
  for (int64_t i = 0; i < hw; ++i) gray[i] = quantize(s.depth[i]);
  io::write_png_gray(depth_dir + "/" + stem + "_depth.png", sh.h, sh.w, gray.data());
  for (int64_t i = 0; i < hw; ++i) gray[i] = quantize(s.gt[i]);
  io::write_png_gray(gt_dir + "/" + stem + "_gt.png", sh.h, sh.w, gray.data());
}

std::vector<std::pair<std::string, Sample>> load_pairs(const std::string& rgb_dir,
                                                       const std::string& depth_dir,
                                                       const std::string& gt_dir) {
  if (!fs::is_directory(rgb_dir)) throw IoError("not a directory: " + rgb_dir);
  const std::string suffix = "_rgb.png";
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(rgb_dir)) {
    std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw IoError("no *_rgb.png files in " + rgb_dir);

  std::vector<std::pair<std::string, Sample>> out;
  out.reserve(stems.size());
  for (const std::string& stem : stems) {
    std::string rgb_path = rgb_dir + "/" + stem + suffix;
    std::string depth_path = depth_dir + "/" + stem + "_depth.png";
    if (!fs::exists(depth_path)) throw IoError("missing depth partner: " + depth_path);

    io::ImageU8 rgb_img = io::read_png(rgb_path);
    if (rgb_img.channels != 3) throw IoError("expected a 3-channel png: " + rgb_path);
    Sample s;
    int64_t hw = rgb_img.h * rgb_img.w;
    s.rgb = Tensor(Shape{1, 3, rgb_img.h, rgb_img.w});
    for (int64_t i = 0; i < hw; ++i) {
      for (int c = 0; c < 3; ++c) s.rgb[c * hw + i] = rgb_img.pix[i * 3 + c] / 255.0;
    }
    s.depth = gray_to_tensor(io::read_png(depth_path), depth_path);
    if (s.depth.shape().h != rgb_img.h || s.depth.shape().w != rgb_img.w) {
      throw IoError("depth size differs from rgb for stem " + stem);
    }
    if (!gt_dir.empty()) {
      std::string gt_path = gt_dir + "/" + stem + "_gt.png";
      if (!fs::exists(gt_path)) throw IoError("missing gt partner: " + gt_path);
      s.gt = gray_to_tensor(io::read_png(gt_path), gt_path);
      if (s.gt.shape().h != rgb_img.h || s.gt.shape().w != rgb_img.w) {
        throw IoError("gt size differs from rgb for stem " + stem);
      }
    }
    out.emplace_back(stem, std::move(s));
  }
  return out;
}

}  // namespace cirnet::data
