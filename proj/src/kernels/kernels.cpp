#include "cirnet/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace cirnet::kernels {

namespace {

const KernelTable* g_table = nullptr;
Backend g_backend = Backend::scalar;

Backend detect_default() {
#ifdef CIRNET_BUILD_AVX2
  if (cpu_has_avx2()) return Backend::avx2;
#endif
#ifdef CIRNET_BUILD_NEON
  return Backend::neon;
#endif
  return Backend::scalar;
}

const KernelTable& table_for(Backend b) {
  switch (b) {
    case Backend::scalar: return scalar_table();
    case Backend::avx2:
#ifdef CIRNET_BUILD_AVX2
      if (cpu_has_avx2()) return avx2_table();
#endif
      throw std::invalid_argument("avx2 backend not available on this build/CPU");
    case Backend::neon:
#ifdef CIRNET_BUILD_NEON
      return neon_table();
#else
      throw std::invalid_argument("neon backend not available on this build/CPU");
#endif
  }
  throw std::invalid_argument("unknown backend");
}

const KernelTable& table() {
  if (!g_table) select_backend_from_env();
  return *g_table;
}

// Strided convolutions run here on plain scalar code for every backend; the
// network only uses stride 2 in the first backbone convolution of each stage.
void strided_conv2d(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
                    const double* bias, size_t cout, size_t ksize, size_t stride, double* out,
                    size_t hout, size_t wout) {
  for (size_t co = 0; co < cout; ++co) {
    for (size_t oy = 0; oy < hout; ++oy) {
      for (size_t ox = 0; ox < wout; ++ox) {
        double acc = bias[co];
        for (size_t ci = 0; ci < cin; ++ci) {
          for (size_t ky = 0; ky < ksize; ++ky) {
            const double* xrow = xpad + (ci * hp + oy * stride + ky) * wp + ox * stride;
            const double* wrow = w + ((co * cin + ci) * ksize + ky) * ksize;
            for (size_t kx = 0; kx < ksize; ++kx) acc += wrow[kx] * xrow[kx];
          }
        }
        out[(co * hout + oy) * wout + ox] = acc;
      }
    }
  }
}

void strided_grad_input(const double* g, size_t cout, size_t hout, size_t wout, const double* w,
                        size_t cin, size_t ksize, size_t stride, double* dxpad, size_t hp,
                        size_t wp) {
  for (size_t i = 0; i < cin * hp * wp; ++i) dxpad[i] = 0.0;
  for (size_t ci = 0; ci < cin; ++ci) {
    for (size_t iy = 0; iy < hp; ++iy) {
      for (size_t ix = 0; ix < wp; ++ix) {
        double acc = 0.0;
        for (size_t co = 0; co < cout; ++co) {
          for (size_t ky = 0; ky <= iy && ky < ksize; ++ky) {
            size_t dy = iy - ky;
            if (dy % stride != 0) continue;
            size_t oy = dy / stride;
            if (oy >= hout) continue;
            for (size_t kx = 0; kx <= ix && kx < ksize; ++kx) {
              size_t dx = ix - kx;
              if (dx % stride != 0) continue;
              size_t ox = dx / stride;
              if (ox >= wout) continue;
              acc += w[((co * cin + ci) * ksize + ky) * ksize + kx] *
                     g[(co * hout + oy) * wout + ox];
            }
          }
        }
        dxpad[(ci * hp + iy) * wp + ix] = acc;
      }
    }
  }
}

void strided_grad_weights(const double* xpad, size_t cin, size_t hp, size_t wp, const double* g,
                          size_t cout, size_t hout, size_t wout, size_t ksize, size_t stride,
                          double* dw) {
  for (size_t co = 0; co < cout; ++co) {
    for (size_t ci = 0; ci < cin; ++ci) {
      for (size_t ky = 0; ky < ksize; ++ky) {
        for (size_t kx = 0; kx < ksize; ++kx) {
          double acc = 0.0;
          for (size_t oy = 0; oy < hout; ++oy) {
            const double* grow = g + (co * hout + oy) * wout;
            const double* xrow = xpad + (ci * hp + oy * stride + ky) * wp + kx;
            for (size_t ox = 0; ox < wout; ++ox) acc += grow[ox] * xrow[ox * stride];
          }
          dw[((co * cin + ci) * ksize + ky) * ksize + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "?";
}

std::vector<Backend> available_backends() {
  std::vector<Backend> out{Backend::scalar};
#ifdef CIRNET_BUILD_AVX2
  if (cpu_has_avx2()) out.push_back(Backend::avx2);
#endif
#ifdef CIRNET_BUILD_NEON
  out.push_back(Backend::neon);
#endif
  return out;
}

Backend active_backend() {
  if (!g_table) select_backend_from_env();
  return g_backend;
}

void select_backend(Backend b) {
  g_table = &table_for(b);
  g_backend = b;
}

void select_backend_from_env() {
  const char* env = std::getenv("CIRNET_KERNELS");
  if (!env || !*env) {
    select_backend(detect_default());
    return;
  }
  std::string v(env);
  if (v == "scalar") select_backend(Backend::scalar);
  else if (v == "avx2") select_backend(Backend::avx2);
  else if (v == "neon") select_backend(Backend::neon);
  else throw std::invalid_argument("CIRNET_KERNELS must be scalar|avx2|neon, got '" + v + "'");
}

void add(const double* a, const double* b, double* out, size_t n) { table().add(a, b, out, n); }
void sub(const double* a, const double* b, double* out, size_t n) { table().sub(a, b, out, n); }
void mul(const double* a, const double* b, double* out, size_t n) { table().mul(a, b, out, n); }
void scale_add(const double* x, double s, double t, double* out, size_t n) {
  table().scale_add(x, s, t, out, n);
}
void relu(const double* x, double* out, size_t n) { table().relu(x, out, n); }
void relu_backward(const double* x, const double* g, double* out, size_t n) {
  table().relu_backward(x, g, out, n);
}
void accumulate(double* dst, const double* src, size_t n) { table().accumulate(dst, src, n); }
void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  table().matmul(a, b, c, m, k, n);
}

void conv2d(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
            const double* bias, size_t cout, size_t ksize, size_t stride, double* out,
            size_t hout, size_t wout) {
  if (stride == 1) {
    table().conv2d_s1(xpad, cin, hp, wp, w, bias, cout, ksize, out, hout, wout);
  } else {
    strided_conv2d(xpad, cin, hp, wp, w, bias, cout, ksize, stride, out, hout, wout);
  }
}

void conv2d_grad_input(const double* g, size_t cout, size_t hout, size_t wout, const double* w,
                       size_t cin, size_t ksize, size_t stride, double* dxpad, size_t hp,
                       size_t wp) {
  if (stride != 1) {
    strided_grad_input(g, cout, hout, wout, w, cin, ksize, stride, dxpad, hp, wp);
    return;
  }
  size_t kh = ksize - 1;
  size_t hgp = hout + 2 * kh, wgp = wout + 2 * kh;
  std::vector<double> gpad(cout * hgp * wgp, 0.0);
  for (size_t co = 0; co < cout; ++co)
    for (size_t oy = 0; oy < hout; ++oy)
      for (size_t ox = 0; ox < wout; ++ox)
        gpad[(co * hgp + oy + kh) * wgp + ox + kh] = g[(co * hout + oy) * wout + ox];
  table().conv2d_grad_input_s1(gpad.data(), cout, hgp, wgp, w, cin, ksize, dxpad, hp, wp);
}

void conv2d_grad_weights(const double* xpad, size_t cin, size_t hp, size_t wp, const double* g,
                         size_t cout, size_t hout, size_t wout, size_t ksize, size_t stride,
                         double* dw) {
  if (stride == 1) {
    table().conv2d_grad_weights_s1(xpad, cin, hp, wp, g, cout, hout, wout, ksize, dw);
  } else {
    strided_grad_weights(xpad, cin, hp, wp, g, cout, hout, wout, ksize, stride, dw);
  }
}

}  // namespace cirnet::kernels
