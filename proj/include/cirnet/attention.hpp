#pragma once

#include <optional>

#include "cirnet/autodiff.hpp"
#include "cirnet/nn_ops.hpp"

namespace cirnet::att {

// Spatial gate: per-pixel mean and max over channels, concatenated, squeezed
// through a 3x3 conv to one channel, then sigmoid. Output (N,1,H,W) in (0,1).
struct SpatialAttention {
  nn::ConvBnRelu conv;

  static SpatialAttention make(bool use_bn = true);
  void init(Rng& rng) { conv.init(rng); }
};

struct SpatialAttentionVars {
  ad::ConvBnReluVars conv;
};

SpatialAttentionVars bind(ad::Binder& b, SpatialAttention& u);
ad::Var spatial_attention(ad::Tape& t, ad::Var x, const SpatialAttentionVars& v,
                          SpatialAttention& u, bool training);
Tensor spatial_attention(const Tensor& x, SpatialAttention& u, bool training);

// Channel gate: global average pool, 1x1 squeeze to C/r, relu, 1x1 back to C,
// sigmoid. Output (N,C,1,1) in (0,1).
struct ChannelAttention {
  nn::Conv2d fc1, fc2;
  int64_t reduction = 4;

  static ChannelAttention make(int64_t c, int64_t reduction);
  void init(Rng& rng);
};

struct ChannelAttentionVars {
  ad::Var fc1_kernel, fc1_bias, fc2_kernel, fc2_bias;
};

ChannelAttentionVars bind(ad::Binder& b, ChannelAttention& u);
ad::Var channel_attention(ad::Tape& t, ad::Var x, const ChannelAttentionVars& v,
                          ChannelAttention& u);
Tensor channel_attention(const Tensor& x, ChannelAttention& u);

// Rank-1 outer product of the channel gate and the spatial gate, one weight
// per (c, h, w) cell: cube[n,c,h,w] = ca[n,c] * sa[n,h,w].
ad::Var attention_cube(ad::Tape& t, ad::Var ca, ad::Var sa);
Tensor attention_cube(const Tensor& ca, const Tensor& sa);

enum class SmarMode { full3d, ca_only, sa_only, serial_sa_ca, off };

// Self-modality refinement: gate the input with an attention weight, add the
// input back, and mix with a 3x3 conv. The mode picks the gate: the rank-1
// cube, a single gate alone, or spatial followed by channel.
struct SmarUnit {
  SmarMode mode = SmarMode::full3d;
  std::optional<SpatialAttention> sa;
  std::optional<ChannelAttention> ca;
  nn::ConvBnRelu out_conv;

  static SmarUnit make(int64_t c, int64_t reduction, SmarMode mode);
  void init(Rng& rng);
};

struct SmarVars {
  std::optional<SpatialAttentionVars> sa;
  std::optional<ChannelAttentionVars> ca;
  ad::ConvBnReluVars out_conv;
};

SmarVars bind(ad::Binder& b, SmarUnit& u);
// The gated residual alone, gate(x) * x + x, before the mixing conv.
ad::Var smar_premix(ad::Tape& t, ad::Var x, const SmarVars& v, SmarUnit& u, bool training);
Tensor smar_premix(const Tensor& x, SmarUnit& u, bool training);
ad::Var smar_refine(ad::Tape& t, ad::Var x, const SmarVars& v, SmarUnit& u, bool training);
Tensor smar_refine(const Tensor& x, SmarUnit& u, bool training);

}  // namespace cirnet::att
