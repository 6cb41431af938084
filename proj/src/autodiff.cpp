#include "cirnet/autodiff.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "cirnet/kernels.hpp"
#include "cirnet/rng.hpp"

namespace cirnet::ad {

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  nodes_.push_back(Node{value, nullptr, requires_grad});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), std::move(fn), requires_grad});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("invalid tape handle");
  }
  return nodes_[v.id].value;
}

bool Tape::needs_grad(Var v) const {
  return v.valid() && static_cast<size_t>(v.id) < nodes_.size() && nodes_[v.id].requires_grad;
}

bool Tape::has_grad(Var v) const {
  return v.valid() && static_cast<size_t>(v.id) < grads_.size() && !grads_[v.id].empty();
}

const Tensor& Tape::grad(Var v) const {
  if (!has_grad(v)) throw std::invalid_argument("no gradient recorded for this handle");
  return grads_[v.id];
}

void Tape::accumulate_grad(Var v, Tensor g) {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("invalid tape handle");
  }
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  Tensor& slot = grads_[v.id];
  if (slot.empty()) {
    slot = std::move(g);
    return;
  }
  if (!(slot.shape() == g.shape())) {
    throw std::invalid_argument("gradient shape mismatch: " + slot.shape().str() + " vs " +
                                g.shape().str());
  }
  kernels::accumulate(slot.data(), g.data(), static_cast<size_t>(g.numel()));
}

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar, got " + lv.shape().str());
  }
  grads_.assign(nodes_.size(), Tensor{});
  accumulate_grad(loss, Tensor(lv.shape(), 1.0));
  for (int32_t id = loss.id; id >= 0; --id) {
    if (grads_[id].empty() || !nodes_[id].backward || !nodes_[id].requires_grad) continue;
    nodes_[id].backward(*this, grads_[id]);
  }
}

void Tape::note_relu_margin(double m) {
  if (m < min_relu_margin_) min_relu_margin_ = m;
}

void Tape::note_channelmax_gap(double g) {
  if (g < min_channelmax_gap_) min_channelmax_gap_ = g;
}

Var Binder::bind(Tensor& param) {
  Var v = tape->leaf(param, true);
  entries.emplace_back(v, &param);
  return v;
}

ConvBnReluVars bind_layer(Binder& b, nn::ConvBnRelu& layer) {
  ConvBnReluVars v;
  v.kernel = b.bind(layer.conv.kernel);
  v.bias = b.bind(layer.conv.bias);
  if (layer.use_bn) {
    v.gamma = b.bind(layer.bn.gamma);
    v.beta = b.bind(layer.bn.beta);
  }
  return v;
}

Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (!broadcastable_to(target, g.shape())) {
    throw std::invalid_argument("cannot reduce " + g.shape().str() + " to " + target.str());
  }
  const Shape& s = g.shape();
  int64_t sn = (target.n == 1) ? 0 : target.c * target.h * target.w;
  int64_t sc = (target.c == 1) ? 0 : target.h * target.w;
  int64_t sh = (target.h == 1) ? 0 : target.w;
  int64_t sw = (target.w == 1) ? 0 : 1;
  Tensor out(target);
  int64_t i = 0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w, ++i)
          out.data()[n * sn + c * sc + h * sh + w * sw] += g[i];
  return out;
}

namespace {

bool any_requires(const Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (t.needs_grad(v)) return true;
  return false;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  Tensor y = cirnet::add(t.value(a), t.value(b));
  Shape bs = t.value(b).shape();
  return t.record(std::move(y), any_requires(t, {a, b}), [a, b, bs](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(a)) tp.accumulate_grad(a, g);
    if (tp.needs_grad(b)) tp.accumulate_grad(b, reduce_to(g, bs));
  });
}

Var sub(Tape& t, Var a, Var b) {
  Tensor y = cirnet::sub(t.value(a), t.value(b));
  Shape bs = t.value(b).shape();
  return t.record(std::move(y), any_requires(t, {a, b}), [a, b, bs](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(a)) tp.accumulate_grad(a, g);
    if (tp.needs_grad(b)) {
      Tensor gb = reduce_to(g, bs);
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
      tp.accumulate_grad(b, std::move(gb));
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  Tensor y = cirnet::mul(t.value(a), t.value(b));
  Shape bs = t.value(b).shape();
  return t.record(std::move(y), any_requires(t, {a, b}), [a, b, bs](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(a)) tp.accumulate_grad(a, cirnet::mul(g, tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate_grad(b, reduce_to(cirnet::mul(g, tp.value(a)), bs));
  });
}

Var concat_channels(Tape& t, const std::vector<Var>& parts) {
  std::vector<Tensor> vals;
  vals.reserve(parts.size());
  bool req = false;
  for (Var p : parts) {
    vals.push_back(t.value(p));
    req = req || t.needs_grad(p);
  }
  Tensor y = cirnet::concat_channels(vals);
  std::vector<Var> ps = parts;
  return t.record(std::move(y), req, [ps](Tape& tp, const Tensor& g) {
    const Shape& gs = g.shape();
    int64_t plane = gs.h * gs.w;
    int64_t cbase = 0;
    for (Var p : ps) {
      const Shape& s = tp.value(p).shape();
      if (tp.needs_grad(p)) {
        Tensor gp(s);
        for (int64_t n = 0; n < s.n; ++n) {
          const double* src = g.data() + (n * gs.c + cbase) * plane;
          double* dst = gp.data() + n * s.c * plane;
          for (int64_t i = 0; i < s.c * plane; ++i) dst[i] = src[i];
        }
        tp.accumulate_grad(p, std::move(gp));
      }
      cbase += s.c;
    }
  });
}

Var reshape(Tape& t, Var x, Shape s) {
  Tensor y = cirnet::reshape(t.value(x), s);
  Shape xs = t.value(x).shape();
  return t.record(std::move(y), t.needs_grad(x), [x, xs](Tape& tp, const Tensor& g) {
    tp.accumulate_grad(x, cirnet::reshape(g, xs));
  });
}

Var matmul(Tape& t, Var a, Var b, bool trans_a, bool trans_b) {
  Tensor av = trans_a ? transpose2d(t.value(a)) : t.value(a);
  Tensor bv = trans_b ? transpose2d(t.value(b)) : t.value(b);
  Tensor y = cirnet::matmul(av, bv);
  return t.record(std::move(y), any_requires(t, {a, b}),
                  [a, b, trans_a, trans_b](Tape& tp, const Tensor& g) {
                    // y = A' B' with A' = op(A), B' = op(B)
                    Tensor ap = trans_a ? transpose2d(tp.value(a)) : tp.value(a);
                    Tensor bp = trans_b ? transpose2d(tp.value(b)) : tp.value(b);
                    if (tp.needs_grad(a)) {
                      Tensor da = cirnet::matmul(g, transpose2d(bp));
                      tp.accumulate_grad(a, trans_a ? transpose2d(da) : std::move(da));
                    }
                    if (tp.needs_grad(b)) {
                      Tensor db = cirnet::matmul(transpose2d(ap), g);
                      tp.accumulate_grad(b, trans_b ? transpose2d(db) : std::move(db));
                    }
                  });
}

Var conv2d(Tape& t, Var x, Var kernel, Var bias, int stride, int padding) {
  Tensor y = nn::detail::conv2d_forward(t.value(x), t.value(kernel), t.value(bias), stride,
                                        padding);
  return t.record(std::move(y), any_requires(t, {x, kernel, bias}),
                  [x, kernel, bias, stride, padding](Tape& tp, const Tensor& g) {
                    Tensor dx, dk, db;
                    nn::detail::conv2d_backward(tp.value(x), tp.value(kernel), stride, padding, g,
                                                tp.needs_grad(x) ? &dx : nullptr,
                                                tp.needs_grad(kernel) ? &dk : nullptr,
                                                tp.needs_grad(bias) ? &db : nullptr);
                    if (tp.needs_grad(x)) tp.accumulate_grad(x, std::move(dx));
                    if (tp.needs_grad(kernel)) tp.accumulate_grad(kernel, std::move(dk));
                    if (tp.needs_grad(bias)) tp.accumulate_grad(bias, std::move(db));
                  });
}

Var batchnorm(Tape& t, Var x, Var gamma, Var beta, nn::BatchNorm& bn, bool training) {
  auto saved = std::make_shared<nn::detail::BnSaved>();
  Tensor y = nn::detail::bn_forward(t.value(x), t.value(gamma), t.value(beta), bn, training,
                                    saved.get());
  return t.record(std::move(y), any_requires(t, {x, gamma, beta}),
                  [x, gamma, beta, saved, training](Tape& tp, const Tensor& g) {
                    Tensor dx, dgamma, dbeta;
                    nn::detail::bn_backward(*saved, tp.value(gamma), g, training,
                                            tp.needs_grad(x) ? &dx : nullptr,
                                            tp.needs_grad(gamma) ? &dgamma : nullptr,
                                            tp.needs_grad(beta) ? &dbeta : nullptr);
                    if (tp.needs_grad(x)) tp.accumulate_grad(x, std::move(dx));
                    if (tp.needs_grad(gamma)) tp.accumulate_grad(gamma, std::move(dgamma));
                    if (tp.needs_grad(beta)) tp.accumulate_grad(beta, std::move(dbeta));
                  });
}

Var conv_bn_act(Tape& t, Var x, const ConvBnReluVars& vars, nn::ConvBnRelu& layer,
                bool training) {
  Var y = conv2d(t, x, vars.kernel, vars.bias, layer.stride, layer.padding);
  if (layer.use_bn) y = batchnorm(t, y, vars.gamma, vars.beta, layer.bn, training);
  if (layer.act == nn::Activation::relu) y = relu(t, y);
  return y;
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  kernels::relu(xv.data(), y.data(), static_cast<size_t>(xv.numel()));
  for (int64_t i = 0; i < xv.numel(); ++i) t.note_relu_margin(std::fabs(xv[i]));
  return t.record(std::move(y), t.needs_grad(x), [x](Tape& tp, const Tensor& g) {
    const Tensor& xv2 = tp.value(x);
    Tensor dx(xv2.shape());
    kernels::relu_backward(xv2.data(), g.data(), dx.data(), static_cast<size_t>(xv2.numel()));
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = nn::sigmoid(t.value(x));
  // The derivative is written in terms of the output, so the closure gets the
  // node's own handle through a cell filled in right after recording.
  auto self = std::make_shared<Var>();
  Var v = t.record(std::move(y), t.needs_grad(x), [x, self](Tape& tp, const Tensor& g) {
    const Tensor& yv = tp.value(*self);
    Tensor dx(yv.shape());
    for (int64_t i = 0; i < yv.numel(); ++i) dx[i] = g[i] * yv[i] * (1.0 - yv[i]);
    tp.accumulate_grad(x, std::move(dx));
  });
  *self = v;
  return v;
}

Var softmax_lastdim(Tape& t, Var x) {
  Tensor y = nn::softmax_rows(t.value(x));
  auto self = std::make_shared<Var>();
  Var v = t.record(std::move(y), t.needs_grad(x), [x, self](Tape& tp, const Tensor& g) {
    const Tensor& yv = tp.value(*self);
    const Shape& s = yv.shape();
    Tensor dx(s);
    int64_t rows = s.n * s.c * s.h;
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = yv.data() + r * s.w;
      const double* gr = g.data() + r * s.w;
      double dot = 0.0;
      for (int64_t i = 0; i < s.w; ++i) dot += gr[i] * yr[i];
      double* dr = dx.data() + r * s.w;
      for (int64_t i = 0; i < s.w; ++i) dr[i] = yr[i] * (gr[i] - dot);
    }
    tp.accumulate_grad(x, std::move(dx));
  });
  *self = v;
  return v;
}

Var channel_mean(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const Shape& s = xv.shape();
  Tensor y({s.n, 1, s.h, s.w});
  int64_t plane = s.h * s.w;
  double invc = 1.0 / static_cast<double>(s.c);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int64_t c = 0; c < s.c; ++c) acc += xv.data()[(n * s.c + c) * plane + i];
      y.data()[n * plane + i] = acc * invc;
    }
  Shape xs = s;
  return t.record(std::move(y), t.needs_grad(x), [x, xs](Tape& tp, const Tensor& g) {
    Tensor dx(xs);
    int64_t plane2 = xs.h * xs.w;
    double invc2 = 1.0 / static_cast<double>(xs.c);
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c)
        for (int64_t i = 0; i < plane2; ++i)
          dx.data()[(n * xs.c + c) * plane2 + i] = g.data()[n * plane2 + i] * invc2;
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var channel_max(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const Shape& s = xv.shape();
  Tensor y({s.n, 1, s.h, s.w});
  int64_t plane = s.h * s.w;
  auto argmax = std::make_shared<std::vector<int32_t>>(s.n * plane);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t i = 0; i < plane; ++i) {
      int32_t best = 0;
      double mx = xv.data()[n * s.c * plane + i];
      for (int64_t c = 1; c < s.c; ++c) {
        double v = xv.data()[(n * s.c + c) * plane + i];
        if (v > mx) {
          mx = v;
          best = static_cast<int32_t>(c);
        }
      }
      if (s.c > 1) {
        double second = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < s.c; ++c) {
          if (c == best) continue;
          double v = xv.data()[(n * s.c + c) * plane + i];
          if (v > second) second = v;
        }
        t.note_channelmax_gap(mx - second);
      }
      y.data()[n * plane + i] = mx;
      (*argmax)[n * plane + i] = best;
    }
  Shape xs = s;
  return t.record(std::move(y), t.needs_grad(x), [x, xs, argmax](Tape& tp, const Tensor& g) {
    Tensor dx(xs);
    int64_t plane2 = xs.h * xs.w;
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t i = 0; i < plane2; ++i) {
        int32_t c = (*argmax)[n * plane2 + i];
        dx.data()[(n * xs.c + c) * plane2 + i] = g.data()[n * plane2 + i];
      }
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var global_avg_pool(Tape& t, Var x) {
  Tensor y = nn::global_avg_pool(t.value(x));
  Shape xs = t.value(x).shape();
  return t.record(std::move(y), t.needs_grad(x), [x, xs](Tape& tp, const Tensor& g) {
    Tensor dx(xs);
    int64_t plane = xs.h * xs.w;
    double inv = 1.0 / static_cast<double>(plane);
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        double gv = g.at(n, c, 0, 0) * inv;
        double* d = dx.data() + dx.index(n, c, 0, 0);
        for (int64_t i = 0; i < plane; ++i) d[i] = gv;
      }
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var upsample_bilinear(Tape& t, Var x, int64_t oh, int64_t ow) {
  const Shape s = t.value(x).shape();
  if (oh == s.h && ow == s.w) return x;
  Tensor y = nn::resize(t.value(x), oh, ow, nn::ResizeMode::bilinear_up);
  Shape xs = s;
  return t.record(std::move(y), t.needs_grad(x), [x, xs, oh, ow](Tape& tp, const Tensor& g) {
    Tensor dx(xs);
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        double* d = dx.data() + dx.index(n, c, 0, 0);
        const double* gp = g.data() + g.index(n, c, 0, 0);
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t y0, y1;
          double wy0, wy1;
          nn::detail::bilinear_coeffs(xs.h, oh, oy, &y0, &y1, &wy0, &wy1);
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t x0, x1;
            double wx0, wx1;
            nn::detail::bilinear_coeffs(xs.w, ow, ox, &x0, &x1, &wx0, &wx1);
            double gv = gp[oy * ow + ox];
            d[y0 * xs.w + x0] += wy0 * wx0 * gv;
            d[y0 * xs.w + x1] += wy0 * wx1 * gv;
            d[y1 * xs.w + x0] += wy1 * wx0 * gv;
            d[y1 * xs.w + x1] += wy1 * wx1 * gv;
          }
        }
      }
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var avgpool_down(Tape& t, Var x, int64_t oh, int64_t ow) {
  const Shape s = t.value(x).shape();
  if (oh == s.h && ow == s.w) return x;
  Tensor y = nn::resize(t.value(x), oh, ow, nn::ResizeMode::avgpool_down);
  Shape xs = s;
  return t.record(std::move(y), t.needs_grad(x), [x, xs, oh, ow](Tape& tp, const Tensor& g) {
    Tensor dx(xs);
    int64_t bh = xs.h / oh, bw = xs.w / ow;
    double inv = 1.0 / static_cast<double>(bh * bw);
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        double* d = dx.data() + dx.index(n, c, 0, 0);
        const double* gp = g.data() + g.index(n, c, 0, 0);
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            double gv = gp[oy * ow + ox] * inv;
            for (int64_t by = 0; by < bh; ++by) {
              double* row = d + (oy * bh + by) * xs.w + ox * bw;
              for (int64_t bx = 0; bx < bw; ++bx) row[bx] += gv;
            }
          }
      }
    tp.accumulate_grad(x, std::move(dx));
  });
}

Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double acc = 0.0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
  Shape xs = xv.shape();
  return t.record(Tensor({1, 1, 1, 1}, acc), t.needs_grad(x), [x, xs](Tape& tp, const Tensor& g) {
    tp.accumulate_grad(x, Tensor(xs, g[0]));
  });
}

namespace {
constexpr double kBceLo = 1e-7;
constexpr double kBceHi = 1.0 - 1e-7;
}  // namespace

Var bce_loss(Tape& t, Var s, const Tensor& target) {
  const Tensor& sv = t.value(s);
  if (!(sv.shape() == target.shape())) {
    throw std::invalid_argument("bce shapes differ: " + sv.shape().str() + " vs " +
                                target.shape().str());
  }
  int64_t m = sv.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double p = sv[i] < kBceLo ? kBceLo : (sv[i] > kBceHi ? kBceHi : sv[i]);
    acc += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
  }
  auto tgt = std::make_shared<Tensor>(target);
  return t.record(Tensor({1, 1, 1, 1}, acc / static_cast<double>(m)), t.needs_grad(s),
                  [s, tgt](Tape& tp, const Tensor& g) {
                    const Tensor& sv2 = tp.value(s);
                    int64_t m2 = sv2.numel();
                    Tensor dx(sv2.shape());
                    double scale = g[0] / static_cast<double>(m2);
                    for (int64_t i = 0; i < m2; ++i) {
                      double p = sv2[i];
                      if (p < kBceLo || p > kBceHi) {
                        dx[i] = 0.0;
                      } else {
                        dx[i] = scale * (p - (*tgt)[i]) / (p * (1.0 - p));
                      }
                    }
                    tp.accumulate_grad(s, std::move(dx));
                  });
}

GradCheckResult grad_check(const std::function<double(const Tensor&)>& value,
                           const std::function<Tensor(const Tensor&)>& gradient, const Tensor& x,
                           double step, double tol, const std::vector<uint8_t>* skip,
                           int64_t max_coords, uint64_t coord_seed) {
  if (!(step > 0.0) || step > 1e-3) {
    throw std::invalid_argument("grad_check step must lie in (0, 1e-3]");
  }
  if (skip && static_cast<int64_t>(skip->size()) != x.numel()) {
    throw std::invalid_argument("grad_check skip mask size mismatch");
  }
  Tensor analytic = gradient(x);
  if (!(analytic.shape() == x.shape())) {
    throw std::invalid_argument("analytic gradient shape mismatch");
  }
  if (!analytic.all_finite()) throw std::runtime_error("analytic gradient is not finite");

  std::vector<int64_t> coords;
  if (max_coords > 0 && max_coords < x.numel()) {
    // Deterministic subset: partial Fisher-Yates over the index range.
    std::vector<int64_t> all(x.numel());
    for (int64_t i = 0; i < x.numel(); ++i) all[i] = i;
    Rng rng(coord_seed);
    for (int64_t i = 0; i < max_coords; ++i) {
      int64_t j = i + static_cast<int64_t>(rng.below(all.size() - i));
      std::swap(all[i], all[j]);
      coords.push_back(all[i]);
    }
  } else {
    for (int64_t i = 0; i < x.numel(); ++i) coords.push_back(i);
  }

  GradCheckResult res;
  Tensor probe = x;
  for (int64_t i : coords) {
    if (skip && (*skip)[i]) continue;
    double orig = probe[i];
    probe[i] = orig + step;
    double fp = value(probe);
    probe[i] = orig - step;
    double fm = value(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("function not finite at finite-difference probe");
    }
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic[i];
    double rel = std::fabs(numeric - a) / std::max(1.0, std::fabs(a));
    if (rel > res.max_rel_err) res.max_rel_err = rel;
    ++res.checked;
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace cirnet::ad
