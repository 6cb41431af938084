#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirnet/rng.hpp"

namespace cirnet {

// All feature maps are dense rank-4 (N, C, H, W) row-major doubles. Vectors
// and matrices ride along with size-1 axes, e.g. a (m x k) matrix is
// (1, 1, m, k) and a per-channel bias is (1, C, 1, 1).
struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t dim(int axis) const;
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, double fill);
  static Tensor from_values(Shape s, std::vector<double> values);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
  static Tensor uniform(Shape s, Rng& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[index(n, c, h, w)]; }
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[index(n, c, h, w)]; }
  double& operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise ops. b must either match a's shape or be broadcastable to it:
// every axis of b equals a's or is 1. The result always has a's shape, so
// broadcasting is one-directional by design (gates and biases are always the
// second operand).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Concatenation along C; all parts must agree on N, H, W.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Batched matrix product over N with C == 1: (N,1,m,k) x (N,1,k,n) -> (N,1,m,n).
// Plain 2D matrices pass N == 1. Accumulation over k runs in index order.
Tensor matmul(const Tensor& a, const Tensor& b);

// Same data, new shape; element counts must match.
Tensor reshape(const Tensor& t, Shape s);

// (N,1,r,c) -> (N,1,c,r), materialized.
Tensor transpose2d(const Tensor& t);

// True when b is usable as the second operand of the elementwise ops above.
bool broadcastable_to(const Shape& from, const Shape& to);

}  // namespace cirnet
