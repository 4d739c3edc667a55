#pragma once

#include <cstdint>

namespace turbdet::kernels {

// Every kernel below has a scalar reference implementation and an AVX2
// variant. The active variant is picked once at startup from CPUID (override
// with TURBDET_KERNELS=scalar|avx2 or set_impl). Scalar and SIMD variants are
// equivalence-tested against each other.
enum class Impl { kAuto, kScalar, kAvx2 };

struct CpuCaps {
  bool avx2 = false;
  bool fma = false;
};

CpuCaps cpu_caps();
Impl active_impl();
void set_impl(Impl impl);  // throws ModelError if unsupported on this CPU
const char* impl_name(Impl impl);

// C = alpha * op(A) @ op(B) + beta * C, row-major, ld = leading dimension of
// the stored matrix. op(X) = X^T when the transpose flag is set.
void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc);

void vadd(const float* a, const float* b, float* y, int64_t n);   // y = a + b
void vsub(const float* a, const float* b, float* y, int64_t n);   // y = a - b
void vmul(const float* a, const float* b, float* y, int64_t n);   // y = a * b
void vscale(const float* x, float s, float* y, int64_t n);        // y = s * x
void vaxpy(float a, const float* x, float* y, int64_t n);         // y += a * x

double vsum(const float* x, int64_t n);
double vdot(const float* x, const float* y, int64_t n);
double vsumsq(const float* x, int64_t n);

void vexp(const float* x, float* y, int64_t n);
void vexp_pd(const double* x, double* y, int64_t n);
void vrelu(const float* x, float* y, int64_t n);
// gx += gy where x > 0
void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n);

// sum_i sqrt((x_i - y_i)^2 + eps^2)
double charbonnier_sum(const float* x, const float* y, int64_t n, float eps);

// dst(y,x) = src sampled bilinearly at (x + fx(y,x), y + fy(y,x)), coordinates
// clamped to the image (edge replicate). One H*W plane.
void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst);

}  // namespace turbdet::kernels
