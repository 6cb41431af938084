#pragma once

// Brute-force reference implementations the tests trust over the library's
// fast paths. Everything here is written as the most literal loop possible.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cirnet/fusion.hpp"
#include "cirnet/metrics.hpp"
#include "cirnet/nn_ops.hpp"
#include "cirnet/tensor.hpp"

namespace oracle {

using cirnet::Shape;
using cirnet::Tensor;

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ks = k.shape();
  int64_t hout = (xs.h + 2 * pad - ks.h) / stride + 1;
  int64_t wout = (xs.w + 2 * pad - ks.w) / stride + 1;
  Tensor out({xs.n, ks.n, hout, wout});
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t co = 0; co < ks.n; ++co)
      for (int64_t oy = 0; oy < hout; ++oy)
        for (int64_t ox = 0; ox < wout; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int64_t ci = 0; ci < xs.c; ++ci)
            for (int64_t ky = 0; ky < ks.h; ++ky)
              for (int64_t kx = 0; kx < ks.w; ++kx) {
                int64_t y = oy * stride + ky - pad;
                int64_t xx = ox * stride + kx - pad;
                if (y < 0 || y >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += x.at(n, ci, y, xx) * k.at(co, ci, ky, kx);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  int64_t m = ta ? as.w : as.h;
  int64_t k = ta ? as.h : as.w;
  int64_t cols = tb ? bs.h : bs.w;
  Tensor out({as.n, 1, m, cols});
  for (int64_t n = 0; n < as.n; ++n)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) {
          double av = ta ? a.at(n, 0, p, i) : a.at(n, 0, i, p);
          double bv = tb ? b.at(n, 0, j, p) : b.at(n, 0, p, j);
          acc += av * bv;
        }
        out.at(n, 0, i, j) = acc;
      }
  return out;
}

// Materialized broadcast of b to shape s (axes of extent 1 repeat).
inline Tensor tile_to(const Tensor& b, const Shape& s) {
  const Shape& bs = b.shape();
  Tensor out(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x)
          out.at(n, c, y, x) =
              b.at(bs.n == 1 ? 0 : n, bs.c == 1 ? 0 : c, bs.h == 1 ? 0 : y, bs.w == 1 ? 0 : x);
  return out;
}

inline Tensor bilinear_up(const Tensor& x, int64_t oh, int64_t ow) {
  const Shape& s = x.shape();
  Tensor out({s.n, s.c, oh, ow});
  auto clampi = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t oy = 0; oy < oh; ++oy) {
        double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(s.h) /
                        static_cast<double>(oh) -
                    0.5;
        double fy = sy - std::floor(sy);
        int64_t y0 = clampi(static_cast<int64_t>(std::floor(sy)), s.h - 1);
        int64_t y1 = clampi(static_cast<int64_t>(std::floor(sy)) + 1, s.h - 1);
        for (int64_t ox = 0; ox < ow; ++ox) {
          double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(s.w) /
                          static_cast<double>(ow) -
                      0.5;
          double fx = sx - std::floor(sx);
          int64_t x0 = clampi(static_cast<int64_t>(std::floor(sx)), s.w - 1);
          int64_t x1 = clampi(static_cast<int64_t>(std::floor(sx)) + 1, s.w - 1);
          out.at(n, c, oy, ox) = (1.0 - fy) * ((1.0 - fx) * x.at(n, c, y0, x0) +
                                               fx * x.at(n, c, y0, x1)) +
                                 fy * ((1.0 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
      }
  return out;
}

inline Tensor avgpool_down(const Tensor& x, int64_t oh, int64_t ow) {
  const Shape& s = x.shape();
  int64_t bh = s.h / oh, bw = s.w / ow;
  Tensor out({s.n, s.c, oh, ow});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int64_t y = 0; y < bh; ++y)
            for (int64_t xx = 0; xx < bw; ++xx) acc += x.at(n, c, oy * bh + y, ox * bw + xx);
          out.at(n, c, oy, ox) = acc / static_cast<double>(bh * bw);
        }
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < s.h; ++y) {
        double mx = x.at(n, c, y, 0);
        for (int64_t xx = 1; xx < s.w; ++xx) mx = std::max(mx, x.at(n, c, y, xx));
        double sum = 0.0;
        for (int64_t xx = 0; xx < s.w; ++xx) {
          double e = std::exp(x.at(n, c, y, xx) - mx);
          out.at(n, c, y, xx) = e;
          sum += e;
        }
        for (int64_t xx = 0; xx < s.w; ++xx) out.at(n, c, y, xx) /= sum;
      }
  return out;
}

inline double sigmoid1(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Tensor map_sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = sigmoid1(x[i]);
  return out;
}

inline Tensor map_relu(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

// Eval-mode affine of the stored running statistics, same a*x+b arrangement
// the library folds the normalization into.
inline Tensor bn_eval(const Tensor& x, const cirnet::nn::BatchNorm& bn) {
  const Shape& s = x.shape();
  Tensor out(s);
  for (int64_t c = 0; c < s.c; ++c) {
    double inv = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    double a = bn.gamma[c] * inv;
    double b = bn.beta[c] - a * bn.running_mean[c];
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t xx = 0; xx < s.w; ++xx) out.at(n, c, y, xx) = a * x.at(n, c, y, xx) + b;
  }
  return out;
}

inline Tensor conv_block_eval(const Tensor& x, const cirnet::nn::ConvBnRelu& l) {
  Tensor y = conv2d(x, l.conv.kernel, l.conv.bias, l.stride, l.padding);
  if (l.use_bn) y = bn_eval(y, l.bn);
  if (l.act == cirnet::nn::Activation::relu) y = map_relu(y);
  return y;
}

inline Tensor channel_mean(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out({s.n, 1, s.h, s.w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t xx = 0; xx < s.w; ++xx) {
        double acc = 0.0;
        for (int64_t c = 0; c < s.c; ++c) acc += x.at(n, c, y, xx);
        out.at(n, 0, y, xx) = acc / static_cast<double>(s.c);
      }
  return out;
}

inline Tensor channel_max(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out({s.n, 1, s.h, s.w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t xx = 0; xx < s.w; ++xx) {
        double best = x.at(n, 0, y, xx);
        for (int64_t c = 1; c < s.c; ++c) best = std::max(best, x.at(n, c, y, xx));
        out.at(n, 0, y, xx) = best;
      }
  return out;
}

inline Tensor spatial_gate_eval(const Tensor& x, const cirnet::att::SpatialAttention& sa) {
  Tensor cues = cirnet::concat_channels({channel_mean(x), channel_max(x)});
  return map_sigmoid(conv_block_eval(cues, sa.conv));
}

// Eval-mode mirror of the progressive merge: per level mix the concatenated
// streams, gate levels past the first with the spatial gate of the previous
// (downsampled) merge, residual add.
inline std::array<Tensor, 3> pai_eval(const std::array<Tensor, 3>& f_r,
                                      const std::array<Tensor, 3>& f_d,
                                      const cirnet::fus::PaiUnit& u) {
  std::array<Tensor, 3> out;
  Tensor guide;
  for (int i = 0; i < 3; ++i) {
    Tensor m = conv_block_eval(cirnet::concat_channels({f_r[i], f_d[i]}), u.mix[i]);
    if (i == 0) {
      out[i] = m;
    } else {
      Tensor a = tile_to(spatial_gate_eval(guide, u.gate), m.shape());
      Tensor g(m.shape());
      for (int64_t j = 0; j < m.numel(); ++j) g[j] = m[j] * a[j] + m[j];
      out[i] = g;
    }
    if (i < 2) {
      const Shape& next = f_r[i + 1].shape();
      guide = avgpool_down(out[i], next.h, next.w);
    }
  }
  return out;
}

// Cross-modality weighting as explicit matrix loops. Row r of a flattened
// stream is channel r; column p is pixel p in row-major order.
inline std::array<Tensor, 3> cmwr(const Tensor& f_r, const Tensor& f_d, const Tensor& f_rgbd,
                                  const cirnet::fus::CmwrUnit& u) {
  const Shape& s = f_r.shape();
  int64_t hw = s.h * s.w;
  int64_t c2 = u.embed_r1.kernel.shape().n;

  auto flat = [&](const Tensor& t, int64_t n, int64_t c, int64_t p) {
    return t.at(n, c, p / s.w, p % s.w);
  };
  auto affinity = [&](const Tensor& e1, const Tensor& e2, int64_t n) {
    std::vector<double> m(static_cast<size_t>(hw * hw));
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t j = 0; j < hw; ++j) {
        double acc = 0.0;
        for (int64_t c = 0; c < c2; ++c) acc += flat(e1, n, c, i) * flat(e2, n, c, j);
        m[static_cast<size_t>(i * hw + j)] = acc;
      }
    return m;
  };
  auto softmax_mat = [&](std::vector<double>& m) {
    for (int64_t i = 0; i < hw; ++i) {
      double* row = m.data() + i * hw;
      double mx = row[0];
      for (int64_t j = 1; j < hw; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < hw; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (int64_t j = 0; j < hw; ++j) row[j] /= sum;
    }
  };

  std::array<Tensor, 3> out{Tensor(s), Tensor(s), Tensor(s)};
  const std::array<const Tensor*, 3> in{&f_r, &f_d, &f_rgbd};
  for (int64_t n = 0; n < s.n; ++n) {
    std::vector<double> w;
    if (u.mode == cirnet::fus::CmwrMode::m2_only) {
      Tensor phi = conv2d(f_r, u.embed_r2.kernel, u.embed_r2.bias, 1, 0);
      Tensor psi = conv2d(f_d, u.embed_d2.kernel, u.embed_d2.bias, 1, 0);
      w = affinity(phi, psi, n);
      softmax_mat(w);
    } else if (u.mode == cirnet::fus::CmwrMode::m1_only) {
      Tensor theta = conv2d(f_r, u.embed_r1.kernel, u.embed_r1.bias, 1, 0);
      Tensor xi = conv2d(f_d, u.embed_d1.kernel, u.embed_d1.bias, 1, 0);
      w = affinity(theta, xi, n);
      softmax_mat(w);
    } else {
      Tensor theta = conv2d(f_r, u.embed_r1.kernel, u.embed_r1.bias, 1, 0);
      Tensor xi = conv2d(f_d, u.embed_d1.kernel, u.embed_d1.bias, 1, 0);
      Tensor phi = conv2d(f_r, u.embed_r2.kernel, u.embed_r2.bias, 1, 0);
      Tensor psi = conv2d(f_d, u.embed_d2.kernel, u.embed_d2.bias, 1, 0);
      std::vector<double> m1 = affinity(theta, xi, n);
      std::vector<double> m2 = affinity(phi, psi, n);
      softmax_mat(m1);
      softmax_mat(m2);
      w.resize(m1.size());
      for (size_t i = 0; i < w.size(); ++i) w[i] = m1[i] * m2[i];
      softmax_mat(w);
    }
    for (int t = 0; t < 3; ++t)
      for (int64_t c = 0; c < s.c; ++c)
        for (int64_t i = 0; i < hw; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < hw; ++j)
            acc += flat(*in[t], n, c, j) * w[static_cast<size_t>(i * hw + j)];
          out[t].at(n, c, i / s.w, i % s.w) = acc + flat(*in[t], n, c, i);
        }
  }
  return out;
}

inline double bce(const Tensor& s, const Tensor& g) {
  double acc = 0.0;
  for (int64_t i = 0; i < s.numel(); ++i) {
    double v = std::min(1.0 - 1e-7, std::max(1e-7, s[i]));
    acc -= g[i] * std::log(v) + (1.0 - g[i]) * std::log(1.0 - v);
  }
  return acc / static_cast<double>(s.numel());
}

// One precision/recall point counted pixel by pixel.
inline cirnet::metrics::PrPoint pr_at(const cirnet::metrics::SaliencyMap& s,
                                      const cirnet::metrics::GroundTruth& g, int t) {
  int64_t tp = 0, predicted = 0, positives = 0;
  for (size_t i = 0; i < s.values.size(); ++i) {
    int q = static_cast<int>(std::floor(255.0 * s.values[i] + 0.5));
    bool pos = g.mask[i] != 0;
    positives += pos;
    if (q >= t) {
      ++predicted;
      if (pos) ++tp;
    }
  }
  cirnet::metrics::PrPoint p;
  p.threshold = t;
  p.precision = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 1.0;
  p.recall = static_cast<double>(tp) / static_cast<double>(positives);
  return p;
}

namespace sm_detail {

constexpr double kEps = 2.220446049250313e-16;

inline double mean_sd(const std::vector<double>& v, double* sd) {
  double sum = 0.0;
  for (double x : v) sum += x;
  double m = v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  *sd = v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size() - 1)) : 0.0;
  return m;
}

inline double object_term(const std::vector<double>& vals) {
  double sd = 0.0;
  double m = mean_sd(vals, &sd);
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

inline double block_term(const std::vector<double>& p, const std::vector<double>& g) {
  size_t n = p.size();
  if (n == 0) return 0.0;
  double sdx = 0.0, sdy = 0.0;
  double x = mean_sd(p, &sdx);
  double y = mean_sd(g, &sdy);
  double vxy = 0.0;
  if (n > 1) {
    for (size_t i = 0; i < n; ++i) vxy += (p[i] - x) * (g[i] - y);
    vxy /= static_cast<double>(n - 1);
  }
  double a = 4.0 * x * y * vxy;
  double b = (x * x + y * y) * (sdx * sdx + sdy * sdy);
  if (a != 0.0) return a / (b + kEps);
  if (b == 0.0) return 1.0;
  return 0.0;
}

}  // namespace sm_detail

// Second transliteration of the structure measure, kept deliberately separate
// from the library's: masked values are gathered into vectors, blocks are
// extracted before scoring, and the centroid rounds the 1-based coordinate
// means half-up.
inline double s_measure(const cirnet::metrics::SaliencyMap& s,
                        const cirnet::metrics::GroundTruth& g) {
  using sm_detail::kEps;
  size_t total = s.values.size();
  int64_t positives = 0;
  for (uint8_t m : g.mask) positives += m;

  double smean = 0.0;
  for (double v : s.values) smean += v;
  smean /= static_cast<double>(total);

  double q;
  if (positives == 0) {
    q = 1.0 - smean;
  } else if (static_cast<size_t>(positives) == total) {
    q = smean;
  } else {
    std::vector<double> fg, bg;
    for (size_t i = 0; i < total; ++i) {
      if (g.mask[i]) {
        fg.push_back(s.values[i]);
      } else {
        bg.push_back(1.0 - s.values[i]);
      }
    }
    double y = static_cast<double>(positives) / static_cast<double>(total);
    double obj = y * sm_detail::object_term(fg) + (1.0 - y) * sm_detail::object_term(bg);

    double cx = 0.0, cy = 0.0;
    for (int64_t r = 0; r < g.h; ++r)
      for (int64_t c = 0; c < g.w; ++c)
        if (g.mask[r * g.w + c]) {
          cx += static_cast<double>(c + 1);
          cy += static_cast<double>(r + 1);
        }
    int64_t bx = static_cast<int64_t>(std::floor(cx / static_cast<double>(positives) + 0.5));
    int64_t by = static_cast<int64_t>(std::floor(cy / static_cast<double>(positives) + 0.5));

    auto block = [&](int64_t r0, int64_t r1, int64_t c0, int64_t c1, bool from_gt) {
      std::vector<double> v;
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c)
          v.push_back(from_gt ? static_cast<double>(g.mask[r * g.w + c]) : s.values[r * g.w + c]);
      return v;
    };
    double area = static_cast<double>(g.h * g.w);
    struct Quad {
      int64_t r0, r1, c0, c1;
    };
    const Quad quads[4] = {{0, by, 0, bx}, {0, by, bx, g.w}, {by, g.h, 0, bx}, {by, g.h, bx, g.w}};
    double region = 0.0;
    for (const Quad& qd : quads) {
      double wgt = static_cast<double>((qd.r1 - qd.r0) * (qd.c1 - qd.c0)) / area;
      if (wgt == 0.0) continue;
      region += wgt * sm_detail::block_term(block(qd.r0, qd.r1, qd.c0, qd.c1, false),
                                            block(qd.r0, qd.r1, qd.c0, qd.c1, true));
    }
    q = 0.5 * obj + 0.5 * region;
  }
  return std::min(1.0, std::max(0.0, q));
}

inline uint64_t fnv1a(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t checksum(const Tensor& t) {
  return fnv1a(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

}  // namespace oracle
