#pragma once

#include <vector>

#include "cirnet/rng.hpp"
#include "cirnet/tensor.hpp"

namespace cirnet::nn {

enum class Activation { none, relu };

struct Conv2d {
  Tensor kernel;  // (Cout, Cin, k, k)
  Tensor bias;    // (1, Cout, 1, 1)

  static Conv2d make(int64_t cin, int64_t cout, int64_t k);
  void init(Rng& rng);  // kernel uniform +-sqrt(6/fan_in), bias zero
  int64_t ksize() const { return kernel.shape().w; }
};

struct BatchNorm {
  Tensor gamma, beta;               // (1, C, 1, 1)
  Tensor running_mean, running_var; // (1, C, 1, 1)
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm make(int64_t c);
  void init();  // gamma 1, beta 0, running mean 0, running var 1
};

// Conv -> (optional) batchnorm -> (optional) relu. With use_bn false the bn
// tensors stay empty and the block is a plain biased convolution.
struct ConvBnRelu {
  Conv2d conv;
  BatchNorm bn;
  bool use_bn = true;
  Activation act = Activation::relu;
  int stride = 1;
  int padding = 0;

  static ConvBnRelu make(int64_t cin, int64_t cout, int64_t k, Activation act, bool use_bn = true,
                         int stride = 1);
  void init(Rng& rng);
};

// Forward through a block. Training mode uses batch statistics and updates the
// running estimates in place; eval mode reads the running estimates.
Tensor conv_bn_act(const Tensor& x, ConvBnRelu& layer, bool training);

// Bare convolution, cross-correlation with zero padding.
Tensor conv2d_raw(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                  int padding);

// Softmax over the last axis; each (n,c,h,:) row sums to 1.
Tensor softmax_rows(const Tensor& x);

Tensor sigmoid(const Tensor& x);
double sigmoid1(double x);

// (N,C,H,W) -> (N,C,1,1), mean over the spatial plane.
Tensor global_avg_pool(const Tensor& x);

enum class ResizeMode { bilinear_up, avgpool_down };

// bilinear_up enlarges (half-pixel centers, edge clamped) and requires
// out >= in per axis; avgpool_down averages whole blocks and requires the
// input to be an exact multiple of the output.
Tensor resize(const Tensor& x, int64_t oh, int64_t ow, ResizeMode mode);

namespace detail {

// Zero-padded copy of one image's channels, with 8 doubles of slack at the end
// for the SIMD weight-gradient kernel's overread.
std::vector<double> pad_image(const Tensor& x, int64_t n, int64_t pad);

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                      int padding);
// Gradients for conv2d_forward; any of dx/dk/db may be null to skip.
void conv2d_backward(const Tensor& x, const Tensor& kernel, int stride, int padding,
                     const Tensor& gout, Tensor* dx, Tensor* dk, Tensor* db);

struct BnSaved {
  Tensor xhat;               // normalized activations
  std::vector<double> inv;   // per channel 1/sqrt(var + eps)
};

// gamma and beta are passed explicitly so callers that track them elsewhere
// (the tape) stay consistent between forward and backward. bn supplies eps,
// momentum, and the running estimates, which training mode updates in place.
Tensor bn_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNorm& bn,
                  bool training, BnSaved* saved);
void bn_backward(const BnSaved& saved, const Tensor& gamma, const Tensor& gy, bool training,
                 Tensor* dx, Tensor* dgamma, Tensor* dbeta);

// Source interpolation pair for one output coordinate of bilinear_up.
void bilinear_coeffs(int64_t in, int64_t out, int64_t o, int64_t* i0, int64_t* i1, double* w0,
                     double* w1);

}  // namespace detail

}  // namespace cirnet::nn
