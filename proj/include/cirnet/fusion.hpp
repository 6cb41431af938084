#pragma once

#include <array>
#include <optional>

#include "cirnet/attention.hpp"
#include "cirnet/autodiff.hpp"
#include "cirnet/nn_ops.hpp"

namespace cirnet::fus {

// Progressive attention-guided merge of the two modality streams at the three
// deepest levels. Each level concatenates rgb and depth features and mixes
// them with a 3x3 conv; from level 4 on, a spatial gate computed on the
// previous (downsampled) merge scales the current one, with a residual add:
//   m3 = mix3([f_r3, f_d3])
//   a3 = gate(down(m3));  m4 = mix4([f_r4, f_d4]);  f4 = m4 * a3 + m4
//   a4 = gate(down(f4));  m5 = mix5([f_r5, f_d5]);  f5 = m5 * a4 + m5
// One gate is shared across levels.
struct PaiUnit {
  std::array<nn::ConvBnRelu, 3> mix;  // levels 3, 4, 5
  att::SpatialAttention gate;

  static PaiUnit make(const std::array<int64_t, 3>& channels);
  void init(Rng& rng);
};

struct PaiVars {
  std::array<ad::ConvBnReluVars, 3> mix;
  att::SpatialAttentionVars gate;
};

PaiVars bind(ad::Binder& b, PaiUnit& u);
std::array<ad::Var, 3> pai_forward(ad::Tape& t, const std::array<ad::Var, 3>& f_r,
                                   const std::array<ad::Var, 3>& f_d, const PaiVars& v,
                                   PaiUnit& u, bool training);
std::array<Tensor, 3> pai_forward(const std::array<Tensor, 3>& f_r,
                                  const std::array<Tensor, 3>& f_d, PaiUnit& u, bool training);

enum class CmwrMode { full, m1_only, m2_only, off };

// Cross-modality weighting across the three streams at the deepest level.
// Four 1x1 embeddings (two on rgb, two on depth) are flattened to (C/2, HW)
// matrices; their pairwise row-softmaxed similarity maps multiply into a
// single (HW, HW) weight, and each stream is refreshed by routing its own
// flattened features through that weight with a residual add.
struct CmwrUnit {
  CmwrMode mode = CmwrMode::full;
  nn::Conv2d embed_r1, embed_r2, embed_d1, embed_d2;  // C -> C/2

  static CmwrUnit make(int64_t c, CmwrMode mode);
  void init(Rng& rng);
};

struct CmwrVars {
  ad::Var r1_kernel, r1_bias, r2_kernel, r2_bias;
  ad::Var d1_kernel, d1_bias, d2_kernel, d2_bias;
};

CmwrVars bind(ad::Binder& b, CmwrUnit& u);

struct CmwrOut {
  ad::Var f_r, f_d, f_rgbd;
};

CmwrOut cmwr_refine(ad::Tape& t, ad::Var f_r, ad::Var f_d, ad::Var f_rgbd, const CmwrVars& v,
                    CmwrUnit& u);
std::array<Tensor, 3> cmwr_refine(const Tensor& f_r, const Tensor& f_d, const Tensor& f_rgbd,
                                  CmwrUnit& u);

enum class IgfMode { gated, add, cat, off };

// One decoder step of the importance-gated merge. The two single-modality
// decoder features are each fused with their encoder skip, concatenated into
// H, and blended with the upsampled previous merge f_prev through a learned
// per-channel gate P:
//   out = out_conv(P * proj(H) + (1 - P) * up(f_prev))
// 'add' sums proj(H) and up(f_prev) instead of gating; 'cat' mixes the
// concatenation of H and up(f_prev) directly.
struct IgfUnit {
  IgfMode mode = IgfMode::gated;
  nn::ConvBnRelu rgb_skip_conv, depth_skip_conv;  // (dec + skip) -> C
  nn::ConvBnRelu h_proj;                          // 2C -> C
  std::optional<nn::ConvBnRelu> merge_conv;       // 3C -> C (gated, cat)
  std::optional<att::ChannelAttention> ca;        // gate source (gated)
  nn::ConvBnRelu out_conv;                        // C -> out

  static IgfUnit make(int64_t dec_r, int64_t dec_d, int64_t skip_r, int64_t skip_d, int64_t c,
                      int64_t out, int64_t reduction, IgfMode mode);
  void init(Rng& rng);
};

struct IgfVars {
  ad::ConvBnReluVars rgb_skip_conv, depth_skip_conv, h_proj;
  std::optional<ad::ConvBnReluVars> merge_conv;
  std::optional<att::ChannelAttentionVars> ca;
  ad::ConvBnReluVars out_conv;
};

IgfVars bind(ad::Binder& b, IgfUnit& u);

// What feeds out_conv: the skip-merge branch, the upsampled previous fusion,
// and their combination under the active mode.
struct IgfBlend {
  ad::Var branch_h, branch_prev, blended;
};

IgfBlend igf_blend(ad::Tape& t, ad::Var f_r_dec, ad::Var f_d_dec, ad::Var f_r_skip,
                   ad::Var f_d_skip, ad::Var f_prev, const IgfVars& v, IgfUnit& u, bool training);

// f_prev may live at this level's size or at half of it; it is upsampled here.
ad::Var igf_step(ad::Tape& t, ad::Var f_r_dec, ad::Var f_d_dec, ad::Var f_r_skip,
                 ad::Var f_d_skip, ad::Var f_prev, const IgfVars& v, IgfUnit& u, bool training);
Tensor igf_step(const Tensor& f_r_dec, const Tensor& f_d_dec, const Tensor& f_r_skip,
                const Tensor& f_d_skip, const Tensor& f_prev, IgfUnit& u, bool training);

}  // namespace cirnet::fus
