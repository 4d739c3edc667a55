#include <algorithm>
#include <cmath>

#include "kernels_internal.hpp"

namespace turbdet::kernels::scalar {

namespace {

// Accessor handling the transpose flag: logical (rows x cols), ld is the
// stride of the stored matrix.
inline float mat_at(const float* p, int64_t ld, bool trans, int64_t r, int64_t c) {
  return trans ? p[c * ld + r] : p[r * ld + c];
}

}  // namespace

void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (beta == 0.0f) {
      std::fill(crow, crow + n, 0.0f);
    } else if (beta != 1.0f) {
      for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int64_t p = 0; p < k; ++p) {
      const float av = alpha * mat_at(a, lda, ta, i, p);
      if (av == 0.0f) continue;
      if (!tb) {
        const float* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      }
    }
  }
}

void vadd(const float* a, const float* b, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void vsub(const float* a, const float* b, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void vmul(const float* a, const float* b, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void vscale(const float* x, float s, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = s * x[i];
}

void vaxpy(float a, const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double vsum(const float* x, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double vdot(const float* x, const float* y, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * y[i];
  return s;
}

double vsumsq(const float* x, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
  return s;
}

void vexp(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void vexp_pd(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void vrelu(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (x[i] > 0.0f) gx[i] += gy[i];
}

double charbonnier_sum(const float* x, const float* y, int64_t n, float eps) {
  const double e2 = static_cast<double>(eps) * eps;
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    s += std::sqrt(d * d + e2);
  }
  return s;
}

void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst) {
  const float xmax = static_cast<float>(w - 1);
  const float ymax = static_cast<float>(h - 1);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      float sx = static_cast<float>(x) + fx[i];
      float sy = static_cast<float>(y) + fy[i];
      sx = std::min(std::max(sx, 0.0f), xmax);
      sy = std::min(std::max(sy, 0.0f), ymax);
      const int64_t x0 = static_cast<int64_t>(sx);
      const int64_t y0 = static_cast<int64_t>(sy);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
      const float ax = sx - static_cast<float>(x0);
      const float ay = sy - static_cast<float>(y0);
      const float v00 = src[y0 * w + x0];
      const float v01 = src[y0 * w + x1];
      const float v10 = src[y1 * w + x0];
      const float v11 = src[y1 * w + x1];
      const float top = v00 + ax * (v01 - v00);
      const float bot = v10 + ax * (v11 - v10);
      dst[i] = top + ay * (bot - top);
    }
  }
}

}  // namespace turbdet::kernels::scalar
