#include "cirnet/kernels.hpp"

#ifdef CIRNET_BUILD_NEON

#include <arm_neon.h>

// NEON backend, 2 doubles per vector. Same lane-per-output scheme as the AVX2
// backend: identical per-output accumulation order, explicit mul+add, no fma.
namespace cirnet::kernels {

namespace {

void v_add(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale_add(const double* x, double s, double t, double* out, size_t n) {
  float64x2_t vs = vdupq_n_f64(s), vt = vdupq_n_f64(t);
  size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vaddq_f64(vmulq_f64(vs, vld1q_f64(x + i)), vt));
  for (; i < n; ++i) out[i] = s * x[i] + t;
}

void v_relu(const double* x, double* out, size_t n) {
  float64x2_t zero = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmaxq_f64(vld1q_f64(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_backward(const double* x, const double* g, double* out, size_t n) {
  float64x2_t zero = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
    uint64x2_t gv = vreinterpretq_u64_f64(vld1q_f64(g + i));
    vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(mask, gv)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void v_accumulate(double* dst, const double* src, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(dst + i, vaddq_f64(vld1q_f64(dst + i), vld1q_f64(src + i)));
  for (; i < n; ++i) dst[i] += src[i];
}

void v_matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    size_t j = 0;
    for (; j + 2 <= n; j += 2) {
      float64x2_t acc = vdupq_n_f64(0.0);
      for (size_t kk = 0; kk < k; ++kk) {
        float64x2_t av = vdupq_n_f64(a[i * k + kk]);
        acc = vaddq_f64(acc, vmulq_f64(av, vld1q_f64(b + kk * n + j)));
      }
      vst1q_f64(c + i * n + j, acc);
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

void v_conv2d_s1(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
                 const double* bias, size_t cout, size_t ksize, double* out, size_t hout,
                 size_t wout) {
  (void)hp;
  for (size_t co = 0; co < cout; ++co) {
    for (size_t oy = 0; oy < hout; ++oy) {
      double* orow = out + (co * hout + oy) * wout;
      size_t ox = 0;
      for (; ox + 2 <= wout; ox += 2) {
        float64x2_t acc = vdupq_n_f64(bias[co]);
        for (size_t ci = 0; ci < cin; ++ci) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* xrow = xpad + (ci * hp + oy + ky) * wp + ox;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) {
              float64x2_t wv = vdupq_n_f64(wrow[kx]);
              acc = vaddq_f64(acc, vmulq_f64(wv, vld1q_f64(xrow + kx)));
            }
          }
        }
        vst1q_f64(orow + ox, acc);
      }
      for (; ox < wout; ++ox) {
        double acc = bias[co];
        for (size_t ci = 0; ci < cin; ++ci) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* xrow = xpad + (ci * hp + oy + ky) * wp + ox;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) acc += wrow[kx] * xrow[kx];
          }
        }
        orow[ox] = acc;
      }
    }
  }
}

void v_conv2d_grad_input_s1(const double* gpad, size_t cout, size_t hgp, size_t wgp,
                            const double* w, size_t cin, size_t ksize, double* dxpad, size_t hp,
                            size_t wp) {
  size_t kh = ksize - 1;
  for (size_t ci = 0; ci < cin; ++ci) {
    for (size_t iy = 0; iy < hp; ++iy) {
      double* drow = dxpad + (ci * hp + iy) * wp;
      size_t ix = 0;
      for (; ix + 2 <= wp; ix += 2) {
        float64x2_t acc = vdupq_n_f64(0.0);
        for (size_t co = 0; co < cout; ++co) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* grow = gpad + (co * hgp + iy + kh - ky) * wgp + ix + kh;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) {
              float64x2_t wv = vdupq_n_f64(wrow[kx]);
              acc = vaddq_f64(acc, vmulq_f64(wv, vld1q_f64(grow - static_cast<long>(kx))));
            }
          }
        }
        vst1q_f64(drow + ix, acc);
      }
      for (; ix < wp; ++ix) {
        double acc = 0.0;
        for (size_t co = 0; co < cout; ++co) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* grow = gpad + (co * hgp + iy + kh - ky) * wgp + ix + kh;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) acc += wrow[kx] * grow[-static_cast<long>(kx)];
          }
        }
        drow[ix] = acc;
      }
    }
  }
}

void v_conv2d_grad_weights_s1(const double* xpad, size_t cin, size_t hp, size_t wp,
                              const double* g, size_t cout, size_t hout, size_t wout,
                              size_t ksize, double* dw) {
  (void)hp;
  for (size_t co = 0; co < cout; ++co) {
    for (size_t ci = 0; ci < cin; ++ci) {
      for (size_t ky = 0; ky < ksize; ++ky) {
        size_t kx = 0;
        for (; kx + 2 <= ksize; kx += 2) {
          float64x2_t acc = vdupq_n_f64(0.0);
          for (size_t oy = 0; oy < hout; ++oy) {
            const double* grow = g + (co * hout + oy) * wout;
            const double* xrow = xpad + (ci * hp + oy + ky) * wp + kx;
            for (size_t ox = 0; ox < wout; ++ox) {
              float64x2_t gv = vdupq_n_f64(grow[ox]);
              acc = vaddq_f64(acc, vmulq_f64(gv, vld1q_f64(xrow + ox)));
            }
          }
          double lanes[2];
          vst1q_f64(lanes, acc);
          dw[((co * cin + ci) * ksize + ky) * ksize + kx] += lanes[0];
          dw[((co * cin + ci) * ksize + ky) * ksize + kx + 1] += lanes[1];
        }
        for (; kx < ksize; ++kx) {
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

const KernelTable& neon_table() {
  static const KernelTable t = {
      v_add,    v_sub,           v_mul,
      v_scale_add, v_relu,       v_relu_backward,
      v_accumulate, v_matmul,    v_conv2d_s1,
      v_conv2d_grad_input_s1,    v_conv2d_grad_weights_s1,
  };
  return t;
}

}  // namespace cirnet::kernels

#endif  // CIRNET_BUILD_NEON
