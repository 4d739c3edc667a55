// AVX2 variants. This translation unit is compiled with -mavx2 -mfma; the
// dispatcher never calls into it unless CPUID reports support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kernels_internal.hpp"

namespace turbdet::kernels::avx2 {

namespace {

constexpr int64_t kMR = 6;
constexpr int64_t kNR = 16;
constexpr int64_t kMC = 96;
constexpr int64_t kKC = 256;
constexpr int64_t kNC = 2048;

inline float mat_at(const float* p, int64_t ld, bool trans, int64_t r, int64_t c) {
  return trans ? p[c * ld + r] : p[r * ld + c];
}

// Pack an (mc x kc) panel of A, alpha folded in. Layout: row micro-tiles of
// kMR, k-major inside a tile, zero-padded rows.
void pack_a(const float* a, int64_t lda, bool ta, int64_t i0, int64_t p0, int64_t mc,
            int64_t kc, float alpha, float* out) {
  for (int64_t it = 0; it < mc; it += kMR) {
    const int64_t mr = std::min(kMR, mc - it);
    for (int64_t p = 0; p < kc; ++p) {
      for (int64_t r = 0; r < kMR; ++r) {
        *out++ = (r < mr) ? alpha * mat_at(a, lda, ta, i0 + it + r, p0 + p) : 0.0f;
      }
    }
  }
}

// Pack a (kc x nc) panel of B. Layout: column micro-tiles of kNR, k-major
// inside a tile, zero-padded columns.
void pack_b(const float* b, int64_t ldb, bool tb, int64_t p0, int64_t j0, int64_t kc,
            int64_t nc, float* out) {
  for (int64_t jt = 0; jt < nc; jt += kNR) {
    const int64_t nr = std::min(kNR, nc - jt);
    for (int64_t p = 0; p < kc; ++p) {
      for (int64_t c = 0; c < kNR; ++c) {
        *out++ = (c < nr) ? mat_at(b, ldb, tb, p0 + p, j0 + jt + c) : 0.0f;
      }
    }
  }
}

// acc (6x16) = Apanel tile (kc x 6) * Bpanel tile (kc x 16)
void micro_6x16(int64_t kc, const float* ap, const float* bp, float* acc) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int64_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a;
    a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMR;
    bp += kNR;
  }
  _mm256_storeu_ps(acc + 0 * 16, c00);
  _mm256_storeu_ps(acc + 0 * 16 + 8, c01);
  _mm256_storeu_ps(acc + 1 * 16, c10);
  _mm256_storeu_ps(acc + 1 * 16 + 8, c11);
  _mm256_storeu_ps(acc + 2 * 16, c20);
  _mm256_storeu_ps(acc + 2 * 16 + 8, c21);
  _mm256_storeu_ps(acc + 3 * 16, c30);
  _mm256_storeu_ps(acc + 3 * 16 + 8, c31);
  _mm256_storeu_ps(acc + 4 * 16, c40);
  _mm256_storeu_ps(acc + 4 * 16 + 8, c41);
  _mm256_storeu_ps(acc + 5 * 16, c50);
  _mm256_storeu_ps(acc + 5 * 16 + 8, c51);
}

}  // namespace

void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc) {
  // Fold beta up front so the block loops can always accumulate.
  if (beta == 0.0f) {
    for (int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0f);
  } else if (beta != 1.0f) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  thread_local std::vector<float> apack, bpack;
  apack.resize(static_cast<size_t>(kMC + kMR) * kKC);
  bpack.resize(static_cast<size_t>(kKC) * (kNC + kNR));
  alignas(32) float acc[kMR * kNR];

  for (int64_t j0 = 0; j0 < n; j0 += kNC) {
    const int64_t nc = std::min(kNC, n - j0);
    for (int64_t p0 = 0; p0 < k; p0 += kKC) {
      const int64_t kc = std::min(kKC, k - p0);
      pack_b(b, ldb, tb, p0, j0, kc, nc, bpack.data());
      for (int64_t i0 = 0; i0 < m; i0 += kMC) {
        const int64_t mc = std::min(kMC, m - i0);
        pack_a(a, lda, ta, i0, p0, mc, kc, alpha, apack.data());
        for (int64_t jt = 0; jt < nc; jt += kNR) {
          const int64_t nr = std::min(kNR, nc - jt);
          const float* bp = bpack.data() + (jt / kNR) * kc * kNR;
          for (int64_t it = 0; it < mc; it += kMR) {
            const int64_t mr = std::min(kMR, mc - it);
            const float* ap = apack.data() + (it / kMR) * kc * kMR;
            micro_6x16(kc, ap, bp, acc);
            float* cblk = c + (i0 + it) * ldc + j0 + jt;
            if (mr == kMR && nr == kNR) {
              for (int64_t r = 0; r < kMR; ++r) {
                float* crow = cblk + r * ldc;
                const __m256 lo = _mm256_add_ps(_mm256_loadu_ps(crow),
                                                _mm256_loadu_ps(acc + r * 16));
                const __m256 hi = _mm256_add_ps(_mm256_loadu_ps(crow + 8),
                                                _mm256_loadu_ps(acc + r * 16 + 8));
                _mm256_storeu_ps(crow, lo);
                _mm256_storeu_ps(crow + 8, hi);
              }
            } else {
              for (int64_t r = 0; r < mr; ++r)
                for (int64_t cc = 0; cc < nr; ++cc)
                  cblk[r * ldc + cc] += acc[r * 16 + cc];
            }
          }
        }
      }
    }
  }
}

void vadd(const float* a, const float* b, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void vsub(const float* a, const float* b, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void vmul(const float* a, const float* b, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void vscale(const float* x, float s, float* y, int64_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(vs, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = s * x[i];
}

void vaxpy(float a, const float* x, float* y, int64_t n) {
  const __m256 va = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i,
                     _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

namespace {

// Reductions accumulate in double lanes so results track the scalar
// (double-accumulating) reference closely even for multi-million element
// tensors.
inline __m256d widen_lo(__m256 v) { return _mm256_cvtps_pd(_mm256_castps256_ps128(v)); }
inline __m256d widen_hi(__m256 v) { return _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)); }

inline double hsum_pd(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_pd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

}  // namespace

double vsum(const float* x, int64_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    s0 = _mm256_add_pd(s0, widen_lo(v));
    s1 = _mm256_add_pd(s1, widen_hi(v));
  }
  double total = hsum_pd(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) total += x[i];
  return total;
}

double vdot(const float* x, const float* y, int64_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 vy = _mm256_loadu_ps(y + i);
    s0 = _mm256_fmadd_pd(widen_lo(vx), widen_lo(vy), s0);
    s1 = _mm256_fmadd_pd(widen_hi(vx), widen_hi(vy), s1);
  }
  double total = hsum_pd(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) total += static_cast<double>(x[i]) * y[i];
  return total;
}

double vsumsq(const float* x, int64_t n) { return vdot(x, x, n); }

namespace {

// Polynomial expf (cephes coefficients), valid within float range; inputs are
// clamped so the 2^n scaling stays inside exponent bounds.
inline __m256 exp256(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647950f);
  const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
  __m256 fx = _mm256_fmadd_ps(x, log2e, half);
  fx = _mm256_floor_ps(fx);
  __m256 r = _mm256_fnmadd_ps(fx, c1, x);
  r = _mm256_fnmadd_ps(fx, c2, r);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, r, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, r, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, r, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, r, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, r, half);
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(r, r), _mm256_add_ps(r, one));

  const __m256i n = _mm256_cvtps_epi32(fx);
  const __m256i pow2 =
      _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2));
}

}  // namespace

void vexp(const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp256(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

namespace {

// 4-wide double exp: Cody-Waite reduction plus a degree-10 Taylor polynomial
// on |r| <= ln2/2 (poly truncation ~2e-13, ample for the scan's oracle
// tolerance).
inline __m256d exp256_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(708.0);
  const __m256d lo = _mm256_set1_pd(-708.0);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  __m256d fx = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                               _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(fx, ln2_hi, x);
  r = _mm256_fnmadd_pd(fx, ln2_lo, r);

  const double c[] = {1.0 / 3628800, 1.0 / 362880, 1.0 / 40320, 1.0 / 5040,
                      1.0 / 720,     1.0 / 120,    1.0 / 24,    1.0 / 6,
                      0.5,           1.0,          1.0};
  __m256d p = _mm256_set1_pd(c[0]);
  for (int i = 1; i < 11; ++i)
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c[i]));

  // 2^n via exponent bits.
  const __m128i n32 = _mm256_cvtpd_epi32(fx);
  const __m256i n64 = _mm256_cvtepi32_epi64(n32);
  const __m256i bits =
      _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

}  // namespace

void vexp_pd(const double* x, double* y, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp256_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

void vrelu(const float* x, float* y, int64_t n) {
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n) {
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(gy + i));
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) gx[i] += gy[i];
}

double charbonnier_sum(const float* x, const float* y, int64_t n, float eps) {
  const __m256d e2 = _mm256_set1_pd(static_cast<double>(eps) * eps);
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
    const __m256d dlo = widen_lo(d), dhi = widen_hi(d);
    s0 = _mm256_add_pd(s0, _mm256_sqrt_pd(_mm256_fmadd_pd(dlo, dlo, e2)));
    s1 = _mm256_add_pd(s1, _mm256_sqrt_pd(_mm256_fmadd_pd(dhi, dhi, e2)));
  }
  double total = hsum_pd(_mm256_add_pd(s0, s1));
  const double e2d = static_cast<double>(eps) * eps;
  for (; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    total += std::sqrt(d * d + e2d);
  }
  return total;
}

void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 xmax = _mm256_set1_ps(static_cast<float>(w - 1));
  const __m256 ymax = _mm256_set1_ps(static_cast<float>(h - 1));
  const __m256i ximax = _mm256_set1_epi32(static_cast<int>(w - 1));
  const __m256i yimax = _mm256_set1_epi32(static_cast<int>(h - 1));
  const __m256i vw = _mm256_set1_epi32(static_cast<int>(w));
  const __m256i one = _mm256_set1_epi32(1);
  const __m256 iota = _mm256_setr_ps(0, 1, 2, 3, 4, 5, 6, 7);

  for (int64_t y = 0; y < h; ++y) {
    const int64_t row = y * w;
    const __m256 vy = _mm256_set1_ps(static_cast<float>(y));
    int64_t x = 0;
    for (; x + 8 <= w; x += 8) {
      const int64_t i = row + x;
      const __m256 vx = _mm256_add_ps(_mm256_set1_ps(static_cast<float>(x)), iota);
      __m256 sx = _mm256_add_ps(vx, _mm256_loadu_ps(fx + i));
      __m256 sy = _mm256_add_ps(vy, _mm256_loadu_ps(fy + i));
      sx = _mm256_min_ps(_mm256_max_ps(sx, zero), xmax);
      sy = _mm256_min_ps(_mm256_max_ps(sy, zero), ymax);
      const __m256i x0 = _mm256_cvttps_epi32(sx);
      const __m256i y0 = _mm256_cvttps_epi32(sy);
      const __m256i x1 = _mm256_min_epi32(_mm256_add_epi32(x0, one), ximax);
      const __m256i y1 = _mm256_min_epi32(_mm256_add_epi32(y0, one), yimax);
      const __m256 ax = _mm256_sub_ps(sx, _mm256_cvtepi32_ps(x0));
      const __m256 ay = _mm256_sub_ps(sy, _mm256_cvtepi32_ps(y0));
      const __m256i r0 = _mm256_mullo_epi32(y0, vw);
      const __m256i r1 = _mm256_mullo_epi32(y1, vw);
      const __m256 v00 = _mm256_i32gather_ps(src, _mm256_add_epi32(r0, x0), 4);
      const __m256 v01 = _mm256_i32gather_ps(src, _mm256_add_epi32(r0, x1), 4);
      const __m256 v10 = _mm256_i32gather_ps(src, _mm256_add_epi32(r1, x0), 4);
      const __m256 v11 = _mm256_i32gather_ps(src, _mm256_add_epi32(r1, x1), 4);
      const __m256 top = _mm256_fmadd_ps(ax, _mm256_sub_ps(v01, v00), v00);
      const __m256 bot = _mm256_fmadd_ps(ax, _mm256_sub_ps(v11, v10), v10);
      _mm256_storeu_ps(dst + i, _mm256_fmadd_ps(ay, _mm256_sub_ps(bot, top), top));
    }
    for (; x < w; ++x) {
      const int64_t i = row + x;
      float sx = static_cast<float>(x) + fx[i];
      float sy = static_cast<float>(y) + fy[i];
      sx = std::min(std::max(sx, 0.0f), static_cast<float>(w - 1));
      sy = std::min(std::max(sy, 0.0f), static_cast<float>(h - 1));
      const int64_t x0 = static_cast<int64_t>(sx);
      const int64_t y0 = static_cast<int64_t>(sy);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
      const float axp = sx - static_cast<float>(x0);
      const float ayp = sy - static_cast<float>(y0);
      const float v00 = src[y0 * w + x0], v01 = src[y0 * w + x1];
      const float v10 = src[y1 * w + x0], v11 = src[y1 * w + x1];
      const float top = v00 + axp * (v01 - v00);
      const float bot = v10 + axp * (v11 - v10);
      dst[i] = top + ayp * (bot - top);
    }
  }
}

}  // namespace turbdet::kernels::avx2
