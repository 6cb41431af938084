#include "cirnet/kernels.hpp"

// Reference backend. Plain loops, one output element at a time, reductions in
// index order. Every other backend must reproduce these results exactly.
namespace cirnet::kernels {

namespace {

void s_add(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale_add(const double* x, double s, double t, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = s * x[i] + t;
}

void s_relu(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_backward(const double* x, const double* g, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void s_accumulate(double* dst, const double* src, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void s_matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

void s_conv2d_s1(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
                 const double* bias, size_t cout, size_t ksize, double* out, size_t hout,
                 size_t wout) {
  (void)hp;
  for (size_t co = 0; co < cout; ++co) {
    for (size_t oy = 0; oy < hout; ++oy) {
      for (size_t ox = 0; ox < wout; ++ox) {
        double acc = bias[co];
        for (size_t ci = 0; ci < cin; ++ci) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* xrow = xpad + (ci * hp + oy + ky) * wp + ox;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) acc += wrow[kx] * xrow[kx];
          }
        }
        out[(co * hout + oy) * wout + ox] = acc;
      }
    }
  }
}

void s_conv2d_grad_input_s1(const double* gpad, size_t cout, size_t hgp, size_t wgp,
                            const double* w, size_t cin, size_t ksize, double* dxpad, size_t hp,
                            size_t wp) {
  (void)hgp;
  // dxpad[ci,iy,ix] = sum_{co,ky,kx} w[co,ci,ky,kx] * gpad[co, iy+K-1-ky, ix+K-1-kx]
  size_t kh = ksize - 1;
  for (size_t ci = 0; ci < cin; ++ci) {
    for (size_t iy = 0; iy < hp; ++iy) {
      for (size_t ix = 0; ix < wp; ++ix) {
        double acc = 0.0;
        for (size_t co = 0; co < cout; ++co) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* grow = gpad + (co * hgp + iy + kh - ky) * wgp + ix + kh;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) acc += wrow[kx] * grow[-static_cast<long>(kx)];
          }
        }
        dxpad[(ci * hp + iy) * wp + ix] = acc;
      }
    }
  }
}

void s_conv2d_grad_weights_s1(const double* xpad, size_t cin, size_t hp, size_t wp,
                              const double* g, size_t cout, size_t hout, size_t wout,
                              size_t ksize, double* dw) {
  (void)hp;
  for (size_t co = 0; co < cout; ++co) {
    for (size_t ci = 0; ci < cin; ++ci) {
      for (size_t ky = 0; ky < ksize; ++ky) {
        for (size_t kx = 0; kx < ksize; ++kx) {
          double acc = 0.0;
          for (size_t oy = 0; oy < hout; ++oy) {
            const double* grow = g + (co * hout + oy) * wout;
            const double* xrow = xpad + (ci * hp + oy + ky) * wp + kx;
            for (size_t ox = 0; ox < wout; ++ox) acc += grow[ox] * xrow[ox];
          }
          dw[((co * cin + ci) * ksize + ky) * ksize + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t = {
      s_add,    s_sub,           s_mul,
      s_scale_add, s_relu,       s_relu_backward,
      s_accumulate, s_matmul,    s_conv2d_s1,
      s_conv2d_grad_input_s1,    s_conv2d_grad_weights_s1,
  };
  return t;
}

}  // namespace cirnet::kernels
