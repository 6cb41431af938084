#include "cirnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cirnet/kernels.hpp"

namespace cirnet {

namespace {

void check_shape_positive(const Shape& s) {
  if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
    throw std::invalid_argument("tensor shape must be positive, got " + s.str());
  }
}

}  // namespace

int64_t Shape::dim(int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return h;
    case 3: return w;
  }
  throw std::invalid_argument("shape axis out of range");
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape s) : shape_(s) {
  check_shape_positive(s);
  data_.assign(static_cast<size_t>(s.numel()), 0.0);
}

Tensor::Tensor(Shape s, double fill) : Tensor(s) { this->fill(fill); }

Tensor Tensor::from_values(Shape s, std::vector<double> values) {
  check_shape_positive(s);
  if (static_cast<int64_t>(values.size()) != s.numel()) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + s.str());
  }
  Tensor t;
  t.shape_ = s;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::uniform(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool broadcastable_to(const Shape& from, const Shape& to) {
  for (int a = 0; a < 4; ++a) {
    if (from.dim(a) != to.dim(a) && from.dim(a) != 1) return false;
  }
  return true;
}

namespace {

enum class EwOp { add, sub, mul };

double apply(EwOp op, double x, double y) {
  switch (op) {
    case EwOp::add: return x + y;
    case EwOp::sub: return x - y;
    case EwOp::mul: return x * y;
  }
  return 0.0;
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    size_t n = static_cast<size_t>(a.numel());
    switch (op) {
      case EwOp::add: kernels::add(a.data(), b.data(), out.data(), n); break;
      case EwOp::sub: kernels::sub(a.data(), b.data(), out.data(), n); break;
      case EwOp::mul: kernels::mul(a.data(), b.data(), out.data(), n); break;
    }
    return out;
  }
  if (!broadcastable_to(b.shape(), a.shape())) {
    throw std::invalid_argument("shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  const Shape& s = a.shape();
  const Shape& bs = b.shape();
  // Stride 0 on broadcast axes walks b in lockstep without materializing it.
  int64_t sn = (bs.n == 1) ? 0 : bs.c * bs.h * bs.w;
  int64_t sc = (bs.c == 1) ? 0 : bs.h * bs.w;
  int64_t sh = (bs.h == 1) ? 0 : bs.w;
  int64_t sw = (bs.w == 1) ? 0 : 1;
  Tensor out(s);
  int64_t i = 0;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w, ++i)
          out[i] = apply(op, a[i], b.data()[n * sn + c * sc + h * sh + w * sw]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels needs at least one part");
  const Shape& s0 = parts[0].shape();
  int64_t ctotal = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw std::invalid_argument("concat_channels parts disagree on N/H/W: " + s0.str() +
                                  " vs " + s.str());
    }
    ctotal += s.c;
  }
  Tensor out({s0.n, ctotal, s0.h, s0.w});
  int64_t plane = s0.h * s0.w;
  for (int64_t n = 0; n < s0.n; ++n) {
    int64_t cbase = 0;
    for (const Tensor& p : parts) {
      int64_t pc = p.shape().c;
      const double* src = p.data() + n * pc * plane;
      double* dst = out.data() + (n * ctotal + cbase) * plane;
      for (int64_t i = 0; i < pc * plane; ++i) dst[i] = src[i];
      cbase += pc;
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.c != 1 || sb.c != 1 || sa.n != sb.n) {
    throw std::invalid_argument("matmul expects (N,1,m,k) x (N,1,k,n), got " + sa.str() +
                                " x " + sb.str());
  }
  if (sa.w != sb.h) {
    throw std::invalid_argument("matmul inner dimensions differ: " + sa.str() + " x " + sb.str());
  }
  int64_t m = sa.h, k = sa.w, n = sb.w;
  Tensor out({sa.n, 1, m, n});
  for (int64_t batch = 0; batch < sa.n; ++batch) {
    kernels::matmul(a.data() + batch * m * k, b.data() + batch * k * n,
                    out.data() + batch * m * n, static_cast<size_t>(m), static_cast<size_t>(k),
                    static_cast<size_t>(n));
  }
  return out;
}

Tensor reshape(const Tensor& t, Shape s) {
  check_shape_positive(s);
  if (s.numel() != t.numel()) {
    throw std::invalid_argument("reshape count mismatch: " + t.shape().str() + " -> " + s.str());
  }
  Tensor out(s);
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = t[i];
  return out;
}

Tensor transpose2d(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.c != 1) throw std::invalid_argument("transpose2d expects (N,1,r,c), got " + s.str());
  Tensor out({s.n, 1, s.w, s.h});
  for (int64_t n = 0; n < s.n; ++n) {
    const double* src = t.data() + n * s.h * s.w;
    double* dst = out.data() + n * s.h * s.w;
    for (int64_t r = 0; r < s.h; ++r)
      for (int64_t c = 0; c < s.w; ++c) dst[c * s.h + r] = src[r * s.w + c];
  }
  return out;
}

}  // namespace cirnet
