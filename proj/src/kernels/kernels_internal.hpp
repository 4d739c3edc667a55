#pragma once

#include <cstdint>

// Variant entry points. The dispatch table in kernels_dispatch.cpp points at
// one of these namespaces.

namespace turbdet::kernels::scalar {
void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc);
void vadd(const float* a, const float* b, float* y, int64_t n);
void vsub(const float* a, const float* b, float* y, int64_t n);
void vmul(const float* a, const float* b, float* y, int64_t n);
void vscale(const float* x, float s, float* y, int64_t n);
void vaxpy(float a, const float* x, float* y, int64_t n);
double vsum(const float* x, int64_t n);
double vdot(const float* x, const float* y, int64_t n);
double vsumsq(const float* x, int64_t n);
void vexp(const float* x, float* y, int64_t n);
void vexp_pd(const double* x, double* y, int64_t n);
void vrelu(const float* x, float* y, int64_t n);
void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n);
double charbonnier_sum(const float* x, const float* y, int64_t n, float eps);
void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst);
}  // namespace turbdet::kernels::scalar

namespace turbdet::kernels::avx2 {
void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc);
void vadd(const float* a, const float* b, float* y, int64_t n);
void vsub(const float* a, const float* b, float* y, int64_t n);
void vmul(const float* a, const float* b, float* y, int64_t n);
void vscale(const float* x, float s, float* y, int64_t n);
void vaxpy(float a, const float* x, float* y, int64_t n);
double vsum(const float* x, int64_t n);
double vdot(const float* x, const float* y, int64_t n);
double vsumsq(const float* x, int64_t n);
void vexp(const float* x, float* y, int64_t n);
void vexp_pd(const double* x, double* y, int64_t n);
void vrelu(const float* x, float* y, int64_t n);
void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n);
double charbonnier_sum(const float* x, const float* y, int64_t n, float eps);
void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst);
}  // namespace turbdet::kernels::avx2
