#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cirnet/attention.hpp"
#include "cirnet/autodiff.hpp"
#include "cirnet/errors.hpp"
#include "cirnet/fusion.hpp"
#include "cirnet/nn_ops.hpp"

namespace cirnet::model {

struct CirNetConfig {
  int64_t image_size = 64;  // training crop size; forward accepts any /16 size
  std::array<int64_t, 5> channels{16, 24, 32, 48, 64};
  int64_t decoder_width = 32;
  int64_t reduction = 4;
  bool pai = true;
  att::SmarMode smar = att::SmarMode::full3d;
  fus::CmwrMode cmwr = fus::CmwrMode::full;
  fus::IgfMode igf = fus::IgfMode::gated;

  bool operator==(const CirNetConfig&) const = default;
};

// Fixed "key=value" block embedded in checkpoints; parse rejects unknown keys.
std::string config_text(const CirNetConfig& cfg);
CirNetConfig parse_config_text(const std::string& text);

const char* smar_mode_name(att::SmarMode m);
const char* cmwr_mode_name(fus::CmwrMode m);
const char* igf_mode_name(fus::IgfMode m);
att::SmarMode parse_smar_mode(const std::string& s);
fus::CmwrMode parse_cmwr_mode(const std::string& s);
fus::IgfMode parse_igf_mode(const std::string& s);

// Five two-conv stages; the first conv of stages 1..4 halves the resolution,
// stage 5 keeps it, giving level sizes /2, /4, /8, /16, /16.
struct Backbone {
  struct Stage {
    nn::ConvBnRelu a, b;
  };
  std::array<Stage, 5> stages;

  static Backbone make(int64_t in_c, const std::array<int64_t, 5>& ch);
  void init(Rng& rng);
};

struct BackboneVars {
  struct StageVars {
    ad::ConvBnReluVars a, b;
  };
  std::array<StageVars, 5> stages;
};

BackboneVars bind(ad::Binder& b, Backbone& bb);
std::array<ad::Var, 5> backbone_forward(ad::Tape& t, ad::Var x, const BackboneVars& v,
                                        Backbone& bb, bool training);

class CirNet {
 public:
  explicit CirNet(CirNetConfig cfg);

  // Deterministic init; heads start zeroed so all three maps open flat at 0.5.
  void init_params(uint64_t seed);

  const CirNetConfig& config() const { return cfg_; }

  struct Outputs {
    ad::Var s_r, s_d, s_rgbd;  // (N,1,H,W) probabilities at input size
  };
  Outputs forward(ad::Tape& t, ad::Binder& b, ad::Var rgb, ad::Var depth, bool training);

  struct Maps {
    Tensor s_r, s_d, s_rgbd;
  };
  Maps infer(const Tensor& rgb, const Tensor& depth);  // eval mode

  // Trainable tensors in declaration order.
  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
  // Trainable tensors plus batchnorm running statistics (checkpoint payload).
  void visit_state(const std::function<void(const std::string&, Tensor&)>& fn);
  int64_t param_count();
  static int64_t expected_param_count(const CirNetConfig& cfg);

 private:
  CirNetConfig cfg_;
  Backbone bb_r_, bb_d_;
  std::optional<fus::PaiUnit> pai_;
  std::optional<nn::ConvBnRelu> fuse5_;  // level-5 concat mix when pai is off
  std::optional<att::SmarUnit> smar_r_, smar_d_, smar_rgbd_;
  std::optional<fus::CmwrUnit> cmwr_;
  std::array<nn::ConvBnRelu, 5> dec_r_, dec_d_;
  std::vector<fus::IgfUnit> igf_;            // levels 1..5 when igf is on
  std::vector<nn::ConvBnRelu> rgbd_plain_;   // plain decoder when igf is off
  nn::ConvBnRelu head_r_, head_d_, head_rgbd_;
};

// Sum of the three per-stream mean BCE terms. Component values land in parts
// (r, d, rgbd) when given.
ad::Var loss(ad::Tape& t, const CirNet::Outputs& out, const Tensor& gt,
             std::array<double, 3>* parts = nullptr);

// Eval-mode BCE between a plain map batch and targets.
double bce(const Tensor& s, const Tensor& g);

struct Batch {
  Tensor rgb, depth, gt;
};

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;  // indexed by binder entry order
};

struct TrainStepResult {
  double loss_total = 0, loss_r = 0, loss_d = 0, loss_rgbd = 0;
};

// One optimizer step on one batch. Throws NonFiniteLossError when the loss or
// any gradient stops being finite.
TrainStepResult train_step(CirNet& net, const Batch& batch, AdamState& opt, double lr);

// "CIRK" binary checkpoint: magic, u32 version, length-prefixed config text,
// then every state tensor as u64 count + doubles, all little endian.
void save_checkpoint(const std::string& path, CirNet& net);
CirNet load_checkpoint(const std::string& path);

}  // namespace cirnet::model
