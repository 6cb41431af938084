#include "cirnet/fusion.hpp"

#include <stdexcept>

namespace cirnet::fus {

PaiUnit PaiUnit::make(const std::array<int64_t, 3>& channels) {
  PaiUnit u;
  for (int i = 0; i < 3; ++i) {
    u.mix[i] = nn::ConvBnRelu::make(2 * channels[i], channels[i], 3, nn::Activation::relu);
  }
  u.gate = att::SpatialAttention::make();
  return u;
}

void PaiUnit::init(Rng& rng) {
  for (auto& m : mix) m.init(rng);
  gate.init(rng);
}

PaiVars bind(ad::Binder& b, PaiUnit& u) {
  PaiVars v;
  for (int i = 0; i < 3; ++i) v.mix[i] = ad::bind_layer(b, u.mix[i]);
  v.gate = bind(b, u.gate);
  return v;
}

std::array<ad::Var, 3> pai_forward(ad::Tape& t, const std::array<ad::Var, 3>& f_r,
                                   const std::array<ad::Var, 3>& f_d, const PaiVars& v,
                                   PaiUnit& u, bool training) {
  std::array<ad::Var, 3> out;
  ad::Var guide;  // previous level's merge, downsampled to this level
  for (int i = 0; i < 3; ++i) {
    const Shape sr = t.value(f_r[i]).shape();
    const Shape sd = t.value(f_d[i]).shape();
    if (!(sr == sd)) {
      throw std::invalid_argument("pai level shapes differ: " + sr.str() + " vs " + sd.str());
    }
    ad::Var cat = ad::concat_channels(t, {f_r[i], f_d[i]});
    ad::Var m = ad::conv_bn_act(t, cat, v.mix[i], u.mix[i], training);
    if (i == 0) {
      out[i] = m;
    } else {
      ad::Var a = att::spatial_attention(t, guide, v.gate, u.gate, training);
      out[i] = ad::add(t, ad::mul(t, m, a), m);
    }
    if (i < 2) {
      const Shape next = t.value(f_r[i + 1]).shape();
      guide = ad::avgpool_down(t, out[i], next.h, next.w);
    }
  }
  return out;
}

std::array<Tensor, 3> pai_forward(const std::array<Tensor, 3>& f_r,
                                  const std::array<Tensor, 3>& f_d, PaiUnit& u, bool training) {
  ad::Tape t;
  ad::Binder b(t);
  PaiVars v = bind(b, u);
  std::array<ad::Var, 3> r{t.leaf(f_r[0], false), t.leaf(f_r[1], false), t.leaf(f_r[2], false)};
  std::array<ad::Var, 3> d{t.leaf(f_d[0], false), t.leaf(f_d[1], false), t.leaf(f_d[2], false)};
  std::array<ad::Var, 3> y = pai_forward(t, r, d, v, u, training);
  return {t.value(y[0]), t.value(y[1]), t.value(y[2])};
}

CmwrUnit CmwrUnit::make(int64_t c, CmwrMode mode) {
  if (mode == CmwrMode::off) {
    throw std::invalid_argument("cmwr unit must not be constructed when switched off");
  }
  if (c % 2 != 0) throw std::invalid_argument("cmwr channel count must be even");
  CmwrUnit u;
  u.mode = mode;
  u.embed_r1 = nn::Conv2d::make(c, c / 2, 1);
  u.embed_r2 = nn::Conv2d::make(c, c / 2, 1);
  u.embed_d1 = nn::Conv2d::make(c, c / 2, 1);
  u.embed_d2 = nn::Conv2d::make(c, c / 2, 1);
  return u;
}

void CmwrUnit::init(Rng& rng) {
  embed_r1.init(rng);
  embed_r2.init(rng);
  embed_d1.init(rng);
  embed_d2.init(rng);
}

CmwrVars bind(ad::Binder& b, CmwrUnit& u) {
  CmwrVars v;
  v.r1_kernel = b.bind(u.embed_r1.kernel);
  v.r1_bias = b.bind(u.embed_r1.bias);
  v.r2_kernel = b.bind(u.embed_r2.kernel);
  v.r2_bias = b.bind(u.embed_r2.bias);
  v.d1_kernel = b.bind(u.embed_d1.kernel);
  v.d1_bias = b.bind(u.embed_d1.bias);
  v.d2_kernel = b.bind(u.embed_d2.kernel);
  v.d2_bias = b.bind(u.embed_d2.bias);
  return v;
}

namespace {

// (N,C,H,W) -> (N,1,C,HW)
ad::Var flatten_rows(ad::Tape& t, ad::Var x) {
  const Shape s = t.value(x).shape();
  return ad::reshape(t, x, {s.n, 1, s.c, s.h * s.w});
}

}  // namespace

CmwrOut cmwr_refine(ad::Tape& t, ad::Var f_r, ad::Var f_d, ad::Var f_rgbd, const CmwrVars& v,
                    CmwrUnit& u) {
  // By value: the refresh lambda reads s after the tape has grown many times.
  const Shape s = t.value(f_r).shape();
  if (!(s == t.value(f_d).shape()) || !(s == t.value(f_rgbd).shape())) {
    throw std::invalid_argument("cmwr streams must share one shape");
  }

  ad::Var w;
  if (u.mode == CmwrMode::m2_only) {
    ad::Var phi = flatten_rows(t, ad::conv2d(t, f_r, v.r2_kernel, v.r2_bias, 1, 0));
    ad::Var psi = flatten_rows(t, ad::conv2d(t, f_d, v.d2_kernel, v.d2_bias, 1, 0));
    w = ad::softmax_lastdim(t, ad::matmul(t, phi, psi, true, false));
  } else if (u.mode == CmwrMode::m1_only) {
    ad::Var theta = flatten_rows(t, ad::conv2d(t, f_r, v.r1_kernel, v.r1_bias, 1, 0));
    ad::Var xi = flatten_rows(t, ad::conv2d(t, f_d, v.d1_kernel, v.d1_bias, 1, 0));
    w = ad::softmax_lastdim(t, ad::matmul(t, theta, xi, true, false));
  } else {
    ad::Var theta = flatten_rows(t, ad::conv2d(t, f_r, v.r1_kernel, v.r1_bias, 1, 0));
    ad::Var xi = flatten_rows(t, ad::conv2d(t, f_d, v.d1_kernel, v.d1_bias, 1, 0));
    ad::Var phi = flatten_rows(t, ad::conv2d(t, f_r, v.r2_kernel, v.r2_bias, 1, 0));
    ad::Var psi = flatten_rows(t, ad::conv2d(t, f_d, v.d2_kernel, v.d2_bias, 1, 0));
    ad::Var m1 = ad::softmax_lastdim(t, ad::matmul(t, theta, xi, true, false));
    ad::Var m2 = ad::softmax_lastdim(t, ad::matmul(t, phi, psi, true, false));
    w = ad::softmax_lastdim(t, ad::mul(t, m1, m2));
  }

  auto refresh = [&](ad::Var f) {
    ad::Var rows = flatten_rows(t, f);                    // (N,1,C,HW)
    ad::Var mixed = ad::matmul(t, rows, w, false, true);  // routed through W^T
    return ad::add(t, ad::reshape(t, mixed, s), f);
  };
  return CmwrOut{refresh(f_r), refresh(f_d), refresh(f_rgbd)};
}

std::array<Tensor, 3> cmwr_refine(const Tensor& f_r, const Tensor& f_d, const Tensor& f_rgbd,
                                  CmwrUnit& u) {
  ad::Tape t;
  ad::Binder b(t);
  CmwrVars v = bind(b, u);
  CmwrOut o = cmwr_refine(t, t.leaf(f_r, false), t.leaf(f_d, false), t.leaf(f_rgbd, false), v, u);
  return {t.value(o.f_r), t.value(o.f_d), t.value(o.f_rgbd)};
}

IgfUnit IgfUnit::make(int64_t dec_r, int64_t dec_d, int64_t skip_r, int64_t skip_d, int64_t c,
                      int64_t out, int64_t reduction, IgfMode mode) {
  if (mode == IgfMode::off) {
    throw std::invalid_argument("igf unit must not be constructed when switched off");
  }
  IgfUnit u;
  u.mode = mode;
  u.rgb_skip_conv = nn::ConvBnRelu::make(dec_r + skip_r, c, 3, nn::Activation::relu);
  u.depth_skip_conv = nn::ConvBnRelu::make(dec_d + skip_d, c, 3, nn::Activation::relu);
  u.h_proj = nn::ConvBnRelu::make(2 * c, c, 1, nn::Activation::relu);
  if (mode == IgfMode::gated || mode == IgfMode::cat) {
    u.merge_conv = nn::ConvBnRelu::make(3 * c, c, 1, nn::Activation::relu);
  }
  if (mode == IgfMode::gated) {
    u.ca = att::ChannelAttention::make(c, reduction);
  }
  u.out_conv = nn::ConvBnRelu::make(c, out, 3, nn::Activation::relu);
  return u;
}

void IgfUnit::init(Rng& rng) {
  rgb_skip_conv.init(rng);
  depth_skip_conv.init(rng);
  h_proj.init(rng);
  if (merge_conv) merge_conv->init(rng);
  if (ca) ca->init(rng);
  out_conv.init(rng);
}

IgfVars bind(ad::Binder& b, IgfUnit& u) {
  IgfVars v;
  v.rgb_skip_conv = ad::bind_layer(b, u.rgb_skip_conv);
  v.depth_skip_conv = ad::bind_layer(b, u.depth_skip_conv);
  v.h_proj = ad::bind_layer(b, u.h_proj);
  if (u.merge_conv) v.merge_conv = ad::bind_layer(b, *u.merge_conv);
  if (u.ca) v.ca = bind(b, *u.ca);
  v.out_conv = ad::bind_layer(b, u.out_conv);
  return v;
}

IgfBlend igf_blend(ad::Tape& t, ad::Var f_r_dec, ad::Var f_d_dec, ad::Var f_r_skip,
                   ad::Var f_d_skip, ad::Var f_prev, const IgfVars& v, IgfUnit& u,
                   bool training) {
  const Shape s = t.value(f_r_dec).shape();
  ad::Var prev_up = ad::upsample_bilinear(t, f_prev, s.h, s.w);

  ad::Var fu_r = ad::conv_bn_act(t, ad::concat_channels(t, {f_r_dec, f_r_skip}), v.rgb_skip_conv,
                                 u.rgb_skip_conv, training);
  ad::Var fu_d = ad::conv_bn_act(t, ad::concat_channels(t, {f_d_dec, f_d_skip}),
                                 v.depth_skip_conv, u.depth_skip_conv, training);
  ad::Var h = ad::concat_channels(t, {fu_r, fu_d});

  IgfBlend out;
  out.branch_prev = prev_up;
  switch (u.mode) {
    case IgfMode::gated: {
      ad::Var merged = ad::conv_bn_act(t, ad::concat_channels(t, {h, prev_up}), *v.merge_conv,
                                       *u.merge_conv, training);
      ad::Var p = att::channel_attention(t, merged, *v.ca, *u.ca);
      ad::Var hp = ad::conv_bn_act(t, h, v.h_proj, u.h_proj, training);
      const Shape ps = t.value(p).shape();
      ad::Var one = t.leaf(Tensor(ps, 1.0), false);
      ad::Var inv = ad::sub(t, one, p);
      out.branch_h = hp;
      out.blended = ad::add(t, ad::mul(t, hp, p), ad::mul(t, prev_up, inv));
      break;
    }
    case IgfMode::add: {
      ad::Var hp = ad::conv_bn_act(t, h, v.h_proj, u.h_proj, training);
      out.branch_h = hp;
      out.blended = ad::add(t, hp, prev_up);
      break;
    }
    case IgfMode::cat: {
      out.branch_h = h;
      out.blended = ad::conv_bn_act(t, ad::concat_channels(t, {h, prev_up}), *v.merge_conv,
                                    *u.merge_conv, training);
      break;
    }
    case IgfMode::off:
      throw std::invalid_argument("igf_step called with mode off");
  }
  return out;
}

ad::Var igf_step(ad::Tape& t, ad::Var f_r_dec, ad::Var f_d_dec, ad::Var f_r_skip,
                 ad::Var f_d_skip, ad::Var f_prev, const IgfVars& v, IgfUnit& u, bool training) {
  IgfBlend blend = igf_blend(t, f_r_dec, f_d_dec, f_r_skip, f_d_skip, f_prev, v, u, training);
  return ad::conv_bn_act(t, blend.blended, v.out_conv, u.out_conv, training);
}

Tensor igf_step(const Tensor& f_r_dec, const Tensor& f_d_dec, const Tensor& f_r_skip,
                const Tensor& f_d_skip, const Tensor& f_prev, IgfUnit& u, bool training) {
  ad::Tape t;
  ad::Binder b(t);
  IgfVars v = bind(b, u);
  ad::Var y = igf_step(t, t.leaf(f_r_dec, false), t.leaf(f_d_dec, false),
                       t.leaf(f_r_skip, false), t.leaf(f_d_skip, false), t.leaf(f_prev, false),
                       v, u, training);
  return t.value(y);
}

}  // namespace cirnet::fus
