#include <algorithm>
#include <cmath>
#include <vector>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

struct DeformDims {
  int64_t C, T, H, W, OC, kt, kh, kw, taps;  // taps = kt*kh*kw
  int64_t pt, ph, pw;
  int64_t P;  // T*H*W
};

// Trilinear sample stencil: 8 corner linear indices (-1 = outside, zero pad)
// and combined weights, plus the factors needed for coordinate derivatives.
struct TriStencil {
  int64_t idx[8];
  float w[8];
  float wt0, wt1, wy0, wy1, wx0, wx1;
};

inline void make_stencil(const DeformDims& d, float ts, float ys, float xs,
                         TriStencil& s) {
  const int64_t t0 = static_cast<int64_t>(std::floor(ts));
  const int64_t y0 = static_cast<int64_t>(std::floor(ys));
  const int64_t x0 = static_cast<int64_t>(std::floor(xs));
  const float at = ts - static_cast<float>(t0);
  const float ay = ys - static_cast<float>(y0);
  const float ax = xs - static_cast<float>(x0);
  s.wt0 = 1.0f - at;
  s.wt1 = at;
  s.wy0 = 1.0f - ay;
  s.wy1 = ay;
  s.wx0 = 1.0f - ax;
  s.wx1 = ax;
  const int64_t tt[2] = {t0, t0 + 1}, yy[2] = {y0, y0 + 1}, xx[2] = {x0, x0 + 1};
  const float wt[2] = {s.wt0, s.wt1}, wy[2] = {s.wy0, s.wy1}, wx[2] = {s.wx0, s.wx1};
  int q = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c, ++q) {
        const bool ok = tt[a] >= 0 && tt[a] < d.T && yy[b] >= 0 && yy[b] < d.H &&
                        xx[c] >= 0 && xx[c] < d.W;
        s.idx[q] = ok ? (tt[a] * d.H + yy[b]) * d.W + xx[c] : -1;
        s.w[q] = wt[a] * wy[b] * wx[c];
      }
}

inline float sample8(const float* plane, const TriStencil& s) {
  float acc = 0.0f;
  for (int q = 0; q < 8; ++q)
    if (s.idx[q] >= 0) acc += s.w[q] * plane[s.idx[q]];
  return acc;
}

int64_t deform_block_rows(const DeformDims& d) {
  const int64_t budget = (24ll << 20) / static_cast<int64_t>(sizeof(float));
  const int64_t per_row = d.C * d.taps * d.W;
  return std::max<int64_t>(1, std::min<int64_t>(d.T * d.H, budget / std::max<int64_t>(per_row, 1)));
}

// Offsets clamped to the axis extents before sampling.
inline float clamp_off(float v, float ext) { return std::min(std::max(v, -ext), ext); }

void build_col(const float* x, const float* off, const DeformDims& d, int64_t row0,
               int64_t rows, float* col) {
  const int64_t B = rows * d.W;
  const float ext_t = static_cast<float>(d.T - 1);
  const float ext_y = static_cast<float>(d.H - 1);
  const float ext_x = static_cast<float>(d.W - 1);
  int64_t tap = 0;
  for (int64_t a = 0; a < d.kt; ++a)
    for (int64_t u = 0; u < d.kh; ++u)
      for (int64_t v = 0; v < d.kw; ++v, ++tap) {
        const float* ot = off + (tap * 3 + 0) * d.P + row0 * d.W;
        const float* oy = off + (tap * 3 + 1) * d.P + row0 * d.W;
        const float* ox = off + (tap * 3 + 2) * d.P + row0 * d.W;
        for (int64_t p = 0; p < B; ++p) {
          const int64_t orow = row0 + p / d.W;
          const int64_t t = orow / d.H, y = orow % d.H, xout = p % d.W;
          TriStencil s;
          make_stencil(d, static_cast<float>(t + a - d.pt) + clamp_off(ot[p], ext_t),
                       static_cast<float>(y + u - d.ph) + clamp_off(oy[p], ext_y),
                       static_cast<float>(xout + v - d.pw) + clamp_off(ox[p], ext_x), s);
          for (int64_t c = 0; c < d.C; ++c)
            col[(c * d.taps + tap) * B + p] = sample8(x + c * d.P, s);
        }
      }
}

}  // namespace

Var deform_conv3d(const Var& x, const Var& offsets, const Var& w, const Var& b) {
  if (x.value().ndim() != 4 || w.value().ndim() != 5 || offsets.value().ndim() != 4)
    throw ShapeError("deform_conv3d: expects x (C,T,H,W), offsets (3*taps,T,H,W), w (OC,C,kt,kh,kw)");
  DeformDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
               w.dim(2), w.dim(3), w.dim(4), 0, 0, 0, 0, 0};
  d.taps = d.kt * d.kh * d.kw;
  d.pt = d.kt / 2;
  d.ph = d.kh / 2;
  d.pw = d.kw / 2;
  d.P = d.T * d.H * d.W;
  if (offsets.dim(0) != 3 * d.taps || offsets.dim(1) != d.T || offsets.dim(2) != d.H ||
      offsets.dim(3) != d.W)
    throw ShapeError("deform_conv3d: offsets shape mismatch");
  if (x.dim(0) != w.dim(1)) throw ShapeError("deform_conv3d: channel mismatch");
  for (int64_t i = 0; i < offsets.numel(); ++i)
    if (!std::isfinite(offsets.value()[i]))
      throw ModelError("deform_conv3d: non-finite offsets");

  Tensor y({d.OC, d.T, d.H, d.W});
  const int64_t block = deform_block_rows(d);
  std::vector<float> col(static_cast<size_t>(d.C * d.taps * block * d.W));
  for (int64_t row0 = 0; row0 < d.T * d.H; row0 += block) {
    const int64_t rows = std::min<int64_t>(block, d.T * d.H - row0);
    const int64_t B = rows * d.W;
    build_col(x.value().data(), offsets.value().data(), d, row0, rows, col.data());
    K::sgemm(false, false, d.OC, B, d.C * d.taps, 1.0f, w.value().data(), d.C * d.taps,
             col.data(), B, 0.0f, y.data() + row0 * d.W, d.P);
  }
  if (b.defined() && b.numel() > 0) {
    for (int64_t oc = 0; oc < d.OC; ++oc) {
      float* yc = y.data() + oc * d.P;
      const float bv = b.value()[oc];
      for (int64_t i = 0; i < d.P; ++i) yc[i] += bv;
    }
  }

  Tensor xv = x.value(), ov = offsets.value(), wv = w.value();
  const bool has_bias = b.defined() && b.numel() > 0;
  std::vector<Var> parents =
      has_bias ? std::vector<Var>{x, offsets, w, b} : std::vector<Var>{x, offsets, w};
  return make_op(
      std::move(y), parents,
      [xv, ov, wv, d, has_bias](Node& n) {
        const Tensor& gy = n.grad;
        const bool need_gx = preq(n, 0);
        const bool need_goff = preq(n, 1);
        const bool need_gw = preq(n, 2);
        const int64_t block = deform_block_rows(d);
        std::vector<float> col(static_cast<size_t>(d.C * d.taps * block * d.W));
        std::vector<float> gcol(static_cast<size_t>(d.C * d.taps * block * d.W));
        const float ext_t = static_cast<float>(d.T - 1);
        const float ext_y = static_cast<float>(d.H - 1);
        const float ext_x = static_cast<float>(d.W - 1);

        for (int64_t row0 = 0; row0 < d.T * d.H; row0 += block) {
          const int64_t rows = std::min<int64_t>(block, d.T * d.H - row0);
          const int64_t B = rows * d.W;
          if (need_gw) {
            build_col(xv.data(), ov.data(), d, row0, rows, col.data());
            K::sgemm(false, true, d.OC, d.C * d.taps, B, 1.0f, gy.data() + row0 * d.W,
                     d.P, col.data(), B, 1.0f, pgrad(n, 2).data(), d.C * d.taps);
          }
          if (!need_gx && !need_goff) continue;
          K::sgemm(true, false, d.C * d.taps, B, d.OC, 1.0f, wv.data(), d.C * d.taps,
                   gy.data() + row0 * d.W, d.P, 0.0f, gcol.data(), B);

          float* gx = need_gx ? pgrad(n, 0).data() : nullptr;
          float* goff = need_goff ? pgrad(n, 1).data() : nullptr;
          int64_t tap = 0;
          for (int64_t a = 0; a < d.kt; ++a)
            for (int64_t u = 0; u < d.kh; ++u)
              for (int64_t v = 0; v < d.kw; ++v, ++tap) {
                const float* ot = ov.data() + (tap * 3 + 0) * d.P + row0 * d.W;
                const float* oy = ov.data() + (tap * 3 + 1) * d.P + row0 * d.W;
                const float* ox = ov.data() + (tap * 3 + 2) * d.P + row0 * d.W;
                for (int64_t p = 0; p < B; ++p) {
                  const int64_t orow = row0 + p / d.W;
                  const int64_t t = orow / d.H, yy = orow % d.H, xout = p % d.W;
                  TriStencil s;
                  make_stencil(d,
                               static_cast<float>(t + a - d.pt) + clamp_off(ot[p], ext_t),
                               static_cast<float>(yy + u - d.ph) + clamp_off(oy[p], ext_y),
                               static_cast<float>(xout + v - d.pw) + clamp_off(ox[p], ext_x),
                               s);
                  float g_ts = 0.0f, g_ys = 0.0f, g_xs = 0.0f;
                  for (int64_t c = 0; c < d.C; ++c) {
                    const float g = gcol[(c * d.taps + tap) * B + p];
                    if (g == 0.0f) continue;
                    const float* plane = xv.data() + c * d.P;
                    float vals[8];
                    for (int q = 0; q < 8; ++q)
                      vals[q] = s.idx[q] >= 0 ? plane[s.idx[q]] : 0.0f;
                    if (need_gx) {
                      float* gplane = gx + c * d.P;
                      for (int q = 0; q < 8; ++q)
                        if (s.idx[q] >= 0) gplane[s.idx[q]] += g * s.w[q];
                    }
                    if (need_goff) {
                      g_ts += g * ((vals[4] - vals[0]) * s.wy0 * s.wx0 +
                                   (vals[5] - vals[1]) * s.wy0 * s.wx1 +
                                   (vals[6] - vals[2]) * s.wy1 * s.wx0 +
                                   (vals[7] - vals[3]) * s.wy1 * s.wx1);
                      g_ys += g * ((vals[2] - vals[0]) * s.wt0 * s.wx0 +
                                   (vals[3] - vals[1]) * s.wt0 * s.wx1 +
                                   (vals[6] - vals[4]) * s.wt1 * s.wx0 +
                                   (vals[7] - vals[5]) * s.wt1 * s.wx1);
                      g_xs += g * ((vals[1] - vals[0]) * s.wt0 * s.wy0 +
                                   (vals[3] - vals[2]) * s.wt0 * s.wy1 +
                                   (vals[5] - vals[4]) * s.wt1 * s.wy0 +
                                   (vals[7] - vals[6]) * s.wt1 * s.wy1);
                    }
                  }
                  if (need_goff) {
                    // Clamped offsets stop gradient.
                    const int64_t pp = row0 * d.W + p;
                    if (std::abs(ot[p]) <= ext_t) goff[(tap * 3 + 0) * d.P + pp] += g_ts;
                    if (std::abs(oy[p]) <= ext_y) goff[(tap * 3 + 1) * d.P + pp] += g_ys;
                    if (std::abs(ox[p]) <= ext_x) goff[(tap * 3 + 2) * d.P + pp] += g_xs;
                  }
                }
              }
        }
        if (has_bias && preq(n, 3)) {
          float* gb = pgrad(n, 3).data();
          for (int64_t oc = 0; oc < d.OC; ++oc)
            gb[oc] += static_cast<float>(K::vsum(gy.data() + oc * d.P, d.P));
        }
      },
      "deform_conv3d");
}

}  // namespace turbdet::nn
