#include "cirnet/nn_ops.hpp"

#include <cmath>
#include <stdexcept>

#include "cirnet/kernels.hpp"

namespace cirnet::nn {

Conv2d Conv2d::make(int64_t cin, int64_t cout, int64_t k) {
  if (cin <= 0 || cout <= 0 || k <= 0 || k % 2 == 0) {
    throw std::invalid_argument("conv2d wants positive channels and odd kernel size");
  }
  Conv2d c;
  c.kernel = Tensor({cout, cin, k, k});
  c.bias = Tensor({1, cout, 1, 1});
  return c;
}

void Conv2d::init(Rng& rng) {
  const Shape& s = kernel.shape();
  double fan_in = static_cast<double>(s.c * s.h * s.w);
  double bound = std::sqrt(6.0 / fan_in);
  for (int64_t i = 0; i < kernel.numel(); ++i) kernel[i] = rng.uniform(-bound, bound);
  bias.fill(0.0);
}

BatchNorm BatchNorm::make(int64_t c) {
  BatchNorm bn;
  bn.gamma = Tensor({1, c, 1, 1});
  bn.beta = Tensor({1, c, 1, 1});
  bn.running_mean = Tensor({1, c, 1, 1});
  bn.running_var = Tensor({1, c, 1, 1});
  bn.init();
  return bn;
}

void BatchNorm::init() {
  gamma.fill(1.0);
  beta.fill(0.0);
  running_mean.fill(0.0);
  running_var.fill(1.0);
}

ConvBnRelu ConvBnRelu::make(int64_t cin, int64_t cout, int64_t k, Activation act, bool use_bn,
                            int stride) {
  ConvBnRelu l;
  l.conv = Conv2d::make(cin, cout, k);
  if (use_bn) l.bn = BatchNorm::make(cout);
  l.use_bn = use_bn;
  l.act = act;
  l.stride = stride;
  l.padding = static_cast<int>((k - 1) / 2);
  return l;
}

void ConvBnRelu::init(Rng& rng) {
  conv.init(rng);
  if (use_bn) bn.init();
}

namespace detail {

std::vector<double> pad_image(const Tensor& x, int64_t n, int64_t pad) {
  const Shape& s = x.shape();
  int64_t hp = s.h + 2 * pad, wp = s.w + 2 * pad;
  std::vector<double> buf(static_cast<size_t>(s.c * hp * wp) + 8, 0.0);
  for (int64_t c = 0; c < s.c; ++c) {
    for (int64_t y = 0; y < s.h; ++y) {
      const double* src = x.data() + x.index(n, c, y, 0);
      double* dst = buf.data() + (c * hp + y + pad) * wp + pad;
      for (int64_t xx = 0; xx < s.w; ++xx) dst[xx] = src[xx];
    }
  }
  return buf;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                      int padding) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks.h != ks.w) throw std::invalid_argument("conv kernel must be square");
  if (xs.c != ks.c) {
    throw std::invalid_argument("conv input channels " + xs.str() + " do not match kernel " +
                                ks.str());
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("bad conv stride/padding");
  int64_t k = ks.h;
  int64_t hp = xs.h + 2 * padding, wp = xs.w + 2 * padding;
  if (hp < k || wp < k) throw std::invalid_argument("conv input smaller than kernel");
  int64_t hout = (hp - k) / stride + 1;
  int64_t wout = (wp - k) / stride + 1;
  Tensor out({xs.n, ks.n, hout, wout});
  for (int64_t n = 0; n < xs.n; ++n) {
    std::vector<double> xpad = pad_image(x, n, padding);
    kernels::conv2d(xpad.data(), xs.c, hp, wp, kernel.data(), bias.data(), ks.n, k, stride,
                    out.data() + out.index(n, 0, 0, 0), hout, wout);
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& kernel, int stride, int padding,
                     const Tensor& gout, Tensor* dx, Tensor* dk, Tensor* db) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  const Shape& gs = gout.shape();
  int64_t k = ks.h;
  int64_t hp = xs.h + 2 * padding, wp = xs.w + 2 * padding;

  if (db) {
    *db = Tensor({1, ks.n, 1, 1});
    for (int64_t n = 0; n < gs.n; ++n)
      for (int64_t co = 0; co < gs.c; ++co) {
        double acc = 0.0;
        const double* g = gout.data() + gout.index(n, co, 0, 0);
        for (int64_t i = 0; i < gs.h * gs.w; ++i) acc += g[i];
        (*db)[co] += acc;
      }
  }

  if (dk) *dk = Tensor(ks);
  if (dx) *dx = Tensor(xs);

  std::vector<double> dxpad;
  for (int64_t n = 0; n < xs.n; ++n) {
    const double* g = gout.data() + gout.index(n, 0, 0, 0);
    if (dk) {
      std::vector<double> xpad = pad_image(x, n, padding);
      kernels::conv2d_grad_weights(xpad.data(), xs.c, hp, wp, g, ks.n, gs.h, gs.w, k, stride,
                                   dk->data());
    }
    if (dx) {
      dxpad.assign(static_cast<size_t>(xs.c * hp * wp), 0.0);
      kernels::conv2d_grad_input(g, ks.n, gs.h, gs.w, kernel.data(), xs.c, k, stride,
                                 dxpad.data(), hp, wp);
      for (int64_t c = 0; c < xs.c; ++c)
        for (int64_t y = 0; y < xs.h; ++y) {
          const double* src = dxpad.data() + (c * hp + y + padding) * wp + padding;
          double* dst = dx->data() + dx->index(n, c, y, 0);
          for (int64_t xx = 0; xx < xs.w; ++xx) dst[xx] = src[xx];
        }
    }
  }
}

Tensor bn_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNorm& bn,
                  bool training, BnSaved* saved) {
  const Shape& s = x.shape();
  int64_t C = s.c;
  if (gamma.shape().c != C || beta.shape().c != C) {
    throw std::invalid_argument("batchnorm channel mismatch: " + gamma.shape().str() + " vs input " +
                                s.str());
  }
  int64_t plane = s.h * s.w;
  int64_t m = s.n * plane;
  Tensor out(s);
  if (saved) {
    saved->xhat = Tensor(s);
    saved->inv.assign(C, 0.0);
  }
  for (int64_t c = 0; c < C; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (int64_t n = 0; n < s.n; ++n) {
        const double* p = x.data() + x.index(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (int64_t n = 0; n < s.n; ++n) {
        const double* p = x.data() + x.index(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) {
          double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);  // biased, matching the running estimate
      bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean;
      bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * var;
    } else {
      mean = bn.running_mean[c];
      var = bn.running_var[c];
    }
    double inv = 1.0 / std::sqrt(var + bn.eps);
    if (saved) saved->inv[c] = inv;
    double a = gamma[c] * inv;
    double b = beta[c] - a * mean;
    for (int64_t n = 0; n < s.n; ++n) {
      const double* p = x.data() + x.index(n, c, 0, 0);
      double* o = out.data() + out.index(n, c, 0, 0);
      kernels::scale_add(p, a, b, o, static_cast<size_t>(plane));
      if (saved) {
        double* xh = saved->xhat.data() + saved->xhat.index(n, c, 0, 0);
        kernels::scale_add(p, inv, -inv * mean, xh, static_cast<size_t>(plane));
      }
    }
  }
  return out;
}

void bn_backward(const BnSaved& saved, const Tensor& gamma, const Tensor& gy, bool training,
                 Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
  const Shape& s = gy.shape();
  int64_t C = s.c;
  int64_t plane = s.h * s.w;
  double m = static_cast<double>(s.n * plane);
  if (dgamma) *dgamma = Tensor({1, C, 1, 1});
  if (dbeta) *dbeta = Tensor({1, C, 1, 1});
  if (dx) *dx = Tensor(s);
  for (int64_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      const double* g = gy.data() + gy.index(n, c, 0, 0);
      const double* xh = saved.xhat.data() + saved.xhat.index(n, c, 0, 0);
      for (int64_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    if (dgamma) (*dgamma)[c] = sum_gx;
    if (dbeta) (*dbeta)[c] = sum_g;
    if (!dx) continue;
    double a = gamma[c] * saved.inv[c];
    if (training) {
      double mg = sum_g / m, mgx = sum_gx / m;
      for (int64_t n = 0; n < s.n; ++n) {
        const double* g = gy.data() + gy.index(n, c, 0, 0);
        const double* xh = saved.xhat.data() + saved.xhat.index(n, c, 0, 0);
        double* d = dx->data() + dx->index(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) d[i] = a * (g[i] - mg - xh[i] * mgx);
      }
    } else {
      for (int64_t n = 0; n < s.n; ++n) {
        const double* g = gy.data() + gy.index(n, c, 0, 0);
        double* d = dx->data() + dx->index(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) d[i] = a * g[i];
      }
    }
  }
}

void bilinear_coeffs(int64_t in, int64_t out, int64_t o, int64_t* i0, int64_t* i1, double* w0,
                     double* w1) {
  double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
  double f = std::floor(src);
  double frac = src - f;
  int64_t lo = static_cast<int64_t>(f);
  int64_t a = lo < 0 ? 0 : (lo > in - 1 ? in - 1 : lo);
  int64_t b = lo + 1 < 0 ? 0 : (lo + 1 > in - 1 ? in - 1 : lo + 1);
  *i0 = a;
  *i1 = b;
  *w0 = 1.0 - frac;
  *w1 = frac;
}

}  // namespace detail

Tensor conv_bn_act(const Tensor& x, ConvBnRelu& layer, bool training) {
  Tensor y = detail::conv2d_forward(x, layer.conv.kernel, layer.conv.bias, layer.stride,
                                    layer.padding);
  if (layer.use_bn) {
    y = detail::bn_forward(y, layer.bn.gamma, layer.bn.beta, layer.bn, training, nullptr);
  }
  if (layer.act == Activation::relu) {
    Tensor r(y.shape());
    kernels::relu(y.data(), r.data(), static_cast<size_t>(y.numel()));
    return r;
  }
  return y;
}

Tensor conv2d_raw(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                  int padding) {
  return detail::conv2d_forward(x, kernel, bias, stride, padding);
}

Tensor softmax_rows(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(s);
  int64_t rows = s.n * s.c * s.h;
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = x.data() + r * s.w;
    double* o = out.data() + r * s.w;
    double mx = p[0];
    for (int64_t i = 1; i < s.w; ++i) mx = p[i] > mx ? p[i] : mx;
    double sum = 0.0;
    for (int64_t i = 0; i < s.w; ++i) {
      o[i] = std::exp(p[i] - mx);
      sum += o[i];
    }
    for (int64_t i = 0; i < s.w; ++i) o[i] /= sum;
  }
  return out;
}

double sigmoid1(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = sigmoid1(x[i]);
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out({s.n, s.c, 1, 1});
  int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const double* p = x.data() + x.index(n, c, 0, 0);
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      out.at(n, c, 0, 0) = acc / static_cast<double>(plane);
    }
  return out;
}

Tensor resize(const Tensor& x, int64_t oh, int64_t ow, ResizeMode mode) {
  const Shape& s = x.shape();
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize target must be positive");
  if (oh == s.h && ow == s.w) return x;
  Tensor out({s.n, s.c, oh, ow});
  if (mode == ResizeMode::bilinear_up) {
    if (oh < s.h || ow < s.w) {
      throw std::invalid_argument("bilinear_up cannot shrink " + s.str());
    }
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c) {
        const double* p = x.data() + x.index(n, c, 0, 0);
        double* o = out.data() + out.index(n, c, 0, 0);
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t y0, y1;
          double wy0, wy1;
          detail::bilinear_coeffs(s.h, oh, oy, &y0, &y1, &wy0, &wy1);
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t x0, x1;
            double wx0, wx1;
            detail::bilinear_coeffs(s.w, ow, ox, &x0, &x1, &wx0, &wx1);
            o[oy * ow + ox] = wy0 * (wx0 * p[y0 * s.w + x0] + wx1 * p[y0 * s.w + x1]) +
                              wy1 * (wx0 * p[y1 * s.w + x0] + wx1 * p[y1 * s.w + x1]);
          }
        }
      }
    return out;
  }
  if (s.h % oh != 0 || s.w % ow != 0) {
    throw std::invalid_argument("avgpool_down needs exact divisibility, " + s.str() + " -> (" +
                                std::to_string(oh) + "," + std::to_string(ow) + ")");
  }
  int64_t bh = s.h / oh, bw = s.w / ow;
  double scale = 1.0 / static_cast<double>(bh * bw);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const double* p = x.data() + x.index(n, c, 0, 0);
      double* o = out.data() + out.index(n, c, 0, 0);
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int64_t by = 0; by < bh; ++by) {
            const double* row = p + (oy * bh + by) * s.w + ox * bw;
            for (int64_t bx = 0; bx < bw; ++bx) acc += row[bx];
          }
          o[oy * ow + ox] = acc * scale;
        }
    }
  return out;
}

}  // namespace cirnet::nn
