#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Low-level compute kernels with interchangeable backends. The scalar backend
// is the reference; SIMD backends vectorize across independent output elements
// while keeping the per-output accumulation order identical, so every backend
// produces bit-identical results (enforced by tests, and by -ffp-contract=off
// plus explicit mul/add intrinsics instead of fma).
namespace cirnet::kernels {

enum class Backend { scalar, avx2, neon };

const char* backend_name(Backend b);
std::vector<Backend> available_backends();
Backend active_backend();

// Switch backends at runtime. Throws std::invalid_argument if this build or
// CPU does not support the requested one.
void select_backend(Backend b);

// Honor CIRNET_KERNELS=scalar|avx2|neon if set; unknown values throw.
void select_backend_from_env();

struct KernelTable {
  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  // out[i] = s * x[i] + t
  void (*scale_add)(const double* x, double s, double t, double* out, size_t n);
  void (*relu)(const double* x, double* out, size_t n);
  // out[i] = x[i] > 0 ? g[i] : 0
  void (*relu_backward)(const double* x, const double* g, double* out, size_t n);
  // dst[i] += src[i]
  void (*accumulate)(double* dst, const double* src, size_t n);
  // c[m,n] = a[m,k] * b[k,n], k innermost
  void (*matmul)(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
  // One image over a zero-padded input (cin, hp, wp), stride 1 only:
  // out[co,oy,ox] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * xpad[ci,oy+ky,ox+kx]
  void (*conv2d_s1)(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
                    const double* bias, size_t cout, size_t ksize, double* out, size_t hout,
                    size_t wout);
  // Gradient w.r.t. the padded input, stride 1. gpad is grad_out with a
  // (ksize-1)-wide zero halo on all sides.
  void (*conv2d_grad_input_s1)(const double* gpad, size_t cout, size_t hgp, size_t wgp,
                               const double* w, size_t cin, size_t ksize, double* dxpad,
                               size_t hp, size_t wp);
  // Gradient w.r.t. weights for one image, accumulated into dw, stride 1.
  // xpad must have at least 8 doubles of allocation slack past the end; the
  // AVX2 variant reads (but never uses) up to 3 elements beyond a row.
  void (*conv2d_grad_weights_s1)(const double* xpad, size_t cin, size_t hp, size_t wp,
                                 const double* g, size_t cout, size_t hout, size_t wout,
                                 size_t ksize, double* dw);
};

// Dispatched entry points. Strided convolutions always run on the scalar
// reference path regardless of backend; the stride-1 case is the hot one.
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale_add(const double* x, double s, double t, double* out, size_t n);
void relu(const double* x, double* out, size_t n);
void relu_backward(const double* x, const double* g, double* out, size_t n);
void accumulate(double* dst, const double* src, size_t n);
void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void conv2d(const double* xpad, size_t cin, size_t hp, size_t wp, const double* w,
            const double* bias, size_t cout, size_t ksize, size_t stride, double* out,
            size_t hout, size_t wout);
// Takes the raw grad_out; the stride-1 path pads it with a halo internally.
void conv2d_grad_input(const double* g, size_t cout, size_t hout, size_t wout, const double* w,
                       size_t cin, size_t ksize, size_t stride, double* dxpad, size_t hp,
                       size_t wp);
void conv2d_grad_weights(const double* xpad, size_t cin, size_t hp, size_t wp, const double* g,
                         size_t cout, size_t hout, size_t wout, size_t ksize, size_t stride,
                         double* dw);

// Backend tables, exposed so the equivalence tests can drive each one directly.
const KernelTable& scalar_table();
#ifdef CIRNET_BUILD_AVX2
const KernelTable& avx2_table();
bool cpu_has_avx2();
#endif
#ifdef CIRNET_BUILD_NEON
const KernelTable& neon_table();
#endif

}  // namespace cirnet::kernels
