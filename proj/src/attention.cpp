#include "cirnet/attention.hpp"

#include <stdexcept>

namespace cirnet::att {

SpatialAttention SpatialAttention::make(bool use_bn) {
  SpatialAttention u;
  u.conv = nn::ConvBnRelu::make(2, 1, 3, nn::Activation::none, use_bn);
  return u;
}

SpatialAttentionVars bind(ad::Binder& b, SpatialAttention& u) {
  return SpatialAttentionVars{ad::bind_layer(b, u.conv)};
}

ad::Var spatial_attention(ad::Tape& t, ad::Var x, const SpatialAttentionVars& v,
                          SpatialAttention& u, bool training) {
  ad::Var m = ad::channel_mean(t, x);
  ad::Var mx = ad::channel_max(t, x);
  ad::Var cat = ad::concat_channels(t, {m, mx});
  ad::Var pre = ad::conv_bn_act(t, cat, v.conv, u.conv, training);
  return ad::sigmoid(t, pre);
}

Tensor spatial_attention(const Tensor& x, SpatialAttention& u, bool training) {
  ad::Tape t;
  ad::Binder b(t);
  SpatialAttentionVars v = bind(b, u);
  return t.value(spatial_attention(t, t.leaf(x, false), v, u, training));
}

ChannelAttention ChannelAttention::make(int64_t c, int64_t reduction) {
  if (reduction <= 0 || c % reduction != 0) {
    throw std::invalid_argument("channel count " + std::to_string(c) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
  ChannelAttention u;
  u.fc1 = nn::Conv2d::make(c, c / reduction, 1);
  u.fc2 = nn::Conv2d::make(c / reduction, c, 1);
  u.reduction = reduction;
  return u;
}

void ChannelAttention::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

ChannelAttentionVars bind(ad::Binder& b, ChannelAttention& u) {
  ChannelAttentionVars v;
  v.fc1_kernel = b.bind(u.fc1.kernel);
  v.fc1_bias = b.bind(u.fc1.bias);
  v.fc2_kernel = b.bind(u.fc2.kernel);
  v.fc2_bias = b.bind(u.fc2.bias);
  return v;
}

ad::Var channel_attention(ad::Tape& t, ad::Var x, const ChannelAttentionVars& v,
                          ChannelAttention& u) {
  (void)u;
  ad::Var g = ad::global_avg_pool(t, x);
  ad::Var h = ad::conv2d(t, g, v.fc1_kernel, v.fc1_bias, 1, 0);
  h = ad::relu(t, h);
  ad::Var o = ad::conv2d(t, h, v.fc2_kernel, v.fc2_bias, 1, 0);
  return ad::sigmoid(t, o);
}

Tensor channel_attention(const Tensor& x, ChannelAttention& u) {
  ad::Tape t;
  ad::Binder b(t);
  ChannelAttentionVars v = bind(b, u);
  return t.value(channel_attention(t, t.leaf(x, false), v, u));
}

ad::Var attention_cube(ad::Tape& t, ad::Var ca, ad::Var sa) {
  // Copy the shapes: recording below grows the tape and can move its storage.
  const Shape cs = t.value(ca).shape();
  const Shape ss = t.value(sa).shape();
  if (cs.h != 1 || cs.w != 1 || ss.c != 1 || cs.n != ss.n) {
    throw std::invalid_argument("attention_3d wants (N,C,1,1) x (N,1,H,W), got " + cs.str() +
                                " x " + ss.str());
  }
  // Column vector times row vector per batch item.
  ad::Var col = ad::reshape(t, ca, {cs.n, 1, cs.c, 1});
  ad::Var row = ad::reshape(t, sa, {ss.n, 1, 1, ss.h * ss.w});
  ad::Var outer = ad::matmul(t, col, row);
  return ad::reshape(t, outer, {cs.n, cs.c, ss.h, ss.w});
}

Tensor attention_cube(const Tensor& ca, const Tensor& sa) {
  ad::Tape t;
  return t.value(attention_cube(t, t.leaf(ca, false), t.leaf(sa, false)));
}

SmarUnit SmarUnit::make(int64_t c, int64_t reduction, SmarMode mode) {
  if (mode == SmarMode::off) {
    throw std::invalid_argument("smar unit must not be constructed when switched off");
  }
  SmarUnit u;
  u.mode = mode;
  if (mode != SmarMode::ca_only) u.sa = SpatialAttention::make();
  if (mode != SmarMode::sa_only) u.ca = ChannelAttention::make(c, reduction);
  u.out_conv = nn::ConvBnRelu::make(c, c, 3, nn::Activation::relu);
  return u;
}

void SmarUnit::init(Rng& rng) {
  if (sa) sa->init(rng);
  if (ca) ca->init(rng);
  out_conv.init(rng);
}

SmarVars bind(ad::Binder& b, SmarUnit& u) {
  SmarVars v;
  if (u.sa) v.sa = bind(b, *u.sa);
  if (u.ca) v.ca = bind(b, *u.ca);
  v.out_conv = ad::bind_layer(b, u.out_conv);
  return v;
}

ad::Var smar_premix(ad::Tape& t, ad::Var x, const SmarVars& v, SmarUnit& u, bool training) {
  ad::Var gated;
  switch (u.mode) {
    case SmarMode::full3d: {
      ad::Var ca = channel_attention(t, x, *v.ca, *u.ca);
      ad::Var sa = spatial_attention(t, x, *v.sa, *u.sa, training);
      ad::Var cube = attention_cube(t, ca, sa);
      gated = ad::mul(t, cube, x);
      break;
    }
    case SmarMode::ca_only: {
      ad::Var ca = channel_attention(t, x, *v.ca, *u.ca);
      gated = ad::mul(t, x, ca);
      break;
    }
    case SmarMode::sa_only: {
      ad::Var sa = spatial_attention(t, x, *v.sa, *u.sa, training);
      gated = ad::mul(t, x, sa);
      break;
    }
    case SmarMode::serial_sa_ca: {
      ad::Var sa = spatial_attention(t, x, *v.sa, *u.sa, training);
      ad::Var y = ad::mul(t, x, sa);
      ad::Var ca = channel_attention(t, y, *v.ca, *u.ca);
      gated = ad::mul(t, y, ca);
      break;
    }
    case SmarMode::off:
      throw std::invalid_argument("smar_refine called with mode off");
  }
  return ad::add(t, gated, x);
}

Tensor smar_premix(const Tensor& x, SmarUnit& u, bool training) {
  ad::Tape t;
  ad::Binder b(t);
  SmarVars v = bind(b, u);
  return t.value(smar_premix(t, t.leaf(x, false), v, u, training));
}

ad::Var smar_refine(ad::Tape& t, ad::Var x, const SmarVars& v, SmarUnit& u, bool training) {
  ad::Var res = smar_premix(t, x, v, u, training);
  return ad::conv_bn_act(t, res, v.out_conv, u.out_conv, training);
}

Tensor smar_refine(const Tensor& x, SmarUnit& u, bool training) {
  ad::Tape t;
  ad::Binder b(t);
  SmarVars v = bind(b, u);
  return t.value(smar_refine(t, t.leaf(x, false), v, u, training));
}

}  // namespace cirnet::att
