#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "cirnet/nn_ops.hpp"
#include "cirnet/tensor.hpp"

namespace cirnet::ad {

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append nodes whose closures pull gradients backward;
// node inputs always precede the node, so a reverse id sweep is a valid
// reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Var leaf(const Tensor& value, bool requires_grad);
  Var record(Tensor value, bool requires_grad, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  bool has_grad(Var v) const;
  const Tensor& grad(Var v) const;
  void accumulate_grad(Var v, Tensor g);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape. loss must be scalar shaped.
  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }

  // Distance of the closest activation to a relu kink or to an argmax tie,
  // tracked during forward. Finite-difference checks use these to reject
  // configurations whose derivative is about to jump.
  double min_relu_margin() const { return min_relu_margin_; }
  double min_channelmax_gap() const { return min_channelmax_gap_; }
  void note_relu_margin(double m);
  void note_channelmax_gap(double g);

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  double min_relu_margin_ = std::numeric_limits<double>::infinity();
  double min_channelmax_gap_ = std::numeric_limits<double>::infinity();
};

// Records leaves for parameter tensors so the optimizer can map gradients back
// onto storage. Binding order is the optimizer's state order.
struct Binder {
  Tape* tape = nullptr;
  std::vector<std::pair<Var, Tensor*>> entries;

  explicit Binder(Tape& t) : tape(&t) {}
  Var bind(Tensor& param);
};

struct ConvBnReluVars {
  Var kernel, bias, gamma, beta;
};

ConvBnReluVars bind_layer(Binder& b, nn::ConvBnRelu& layer);

// Elementwise; b broadcastable to a as in the tensor ops.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);

Var concat_channels(Tape& t, const std::vector<Var>& parts);
Var reshape(Tape& t, Var x, Shape s);
// (N,1,m,k) x (N,1,k,n) with optional materialized transposes.
Var matmul(Tape& t, Var a, Var b, bool trans_a = false, bool trans_b = false);

Var conv2d(Tape& t, Var x, Var kernel, Var bias, int stride, int padding);
// Uses and (in training) updates layer.bn running stats; gamma/beta may be
// invalid Vars when layer.use_bn is false.
Var batchnorm(Tape& t, Var x, Var gamma, Var beta, nn::BatchNorm& bn, bool training);
Var conv_bn_act(Tape& t, Var x, const ConvBnReluVars& vars, nn::ConvBnRelu& layer,
                bool training);

Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var softmax_lastdim(Tape& t, Var x);

Var channel_mean(Tape& t, Var x);  // (N,C,H,W) -> (N,1,H,W)
Var channel_max(Tape& t, Var x);   // (N,C,H,W) -> (N,1,H,W), first max wins
Var global_avg_pool(Tape& t, Var x);
Var upsample_bilinear(Tape& t, Var x, int64_t oh, int64_t ow);
Var avgpool_down(Tape& t, Var x, int64_t oh, int64_t ow);

Var sum(Tape& t, Var x);  // scalar

// Mean binary cross entropy of s against a constant target in [0,1], with s
// clamped to [1e-7, 1-1e-7] inside the logs.
Var bce_loss(Tape& t, Var s, const Tensor& target);

// Sums g down to `target` shape over axes where target has extent 1.
Tensor reduce_to(const Tensor& g, const Shape& target);

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool pass = true;
  int64_t checked = 0;
};

// Central-difference check of an analytic gradient. rel err uses
// max(1, |analytic|) as denominator. skip (optional, per coordinate) excludes
// elements; max_coords > 0 checks a deterministic random subset of that size.
// Throws std::invalid_argument for step outside (0, 1e-3] and
// std::runtime_error when the function goes non-finite at a probe point.
GradCheckResult grad_check(const std::function<double(const Tensor&)>& value,
                           const std::function<Tensor(const Tensor&)>& gradient, const Tensor& x,
                           double step = 1e-6, double tol = 1e-4,
                           const std::vector<uint8_t>* skip = nullptr, int64_t max_coords = 0,
                           uint64_t coord_seed = 0);

}  // namespace cirnet::ad
