#include <algorithm>
#include <cmath>
#include <cstring>

#include "turbdet/core/error.hpp"
#include "turbdet/kernels/kernels.hpp"
#include "turbdet/nn/autograd.hpp"

namespace turbdet::nn {

namespace K = turbdet::kernels;

namespace {

bool preq(Node& n, size_t i) { return n.parents[i]->requires_grad; }
Tensor& pgrad(Node& n, size_t i) { return n.parents[i]->ensure_grad(); }

}  // namespace

Var warp_frames(const Var& frames, const Var& field, int64_t center) {
  if (frames.value().ndim() != 4 || field.value().ndim() != 4)
    throw ShapeError("warp_frames: expects frames (C,T,H,W), field (2,T,H,W)");
  const int64_t C = frames.dim(0), T = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  if (field.dim(0) != 2 || field.dim(1) != T || field.dim(2) != H || field.dim(3) != W)
    throw ShapeError("warp_frames: field shape mismatch");
  for (int64_t i = 0; i < field.numel(); ++i)
    if (!std::isfinite(field.value()[i])) throw ModelError("warp_frames: non-finite field");

  Tensor y({C, T, H, W});
  const int64_t plane = H * W;
  for (int64_t t = 0; t < T; ++t) {
    const float* fx = field.value().data() + (0 * T + t) * plane;
    const float* fy = field.value().data() + (1 * T + t) * plane;
    for (int64_t c = 0; c < C; ++c) {
      const float* src = frames.value().data() + (c * T + t) * plane;
      float* dst = y.data() + (c * T + t) * plane;
      if (t == center) {
        std::memcpy(dst, src, static_cast<size_t>(plane) * sizeof(float));
      } else {
        K::bilinear_warp_plane(src, H, W, fx, fy, dst);
      }
    }
  }

  Tensor fr = frames.value(), fv = field.value();
  return make_op(
      std::move(y), {frames, field},
      [fr, fv, C, T, H, W, center](Node& n) {
        const int64_t plane = H * W;
        const bool need_gframes = preq(n, 0);
        const bool need_gfield = preq(n, 1);
        float* gframes = need_gframes ? pgrad(n, 0).data() : nullptr;
        float* gfield = need_gfield ? pgrad(n, 1).data() : nullptr;
        for (int64_t t = 0; t < T; ++t) {
          const float* fx = fv.data() + (0 * T + t) * plane;
          const float* fy = fv.data() + (1 * T + t) * plane;
          if (t == center) {
            if (need_gframes)
              for (int64_t c = 0; c < C; ++c)
                K::vaxpy(1.0f, n.grad.data() + (c * T + t) * plane,
                         gframes + (c * T + t) * plane, plane);
            continue;  // center bypass: no field gradient
          }
          for (int64_t yy = 0; yy < H; ++yy)
            for (int64_t xx = 0; xx < W; ++xx) {
              const int64_t i = yy * W + xx;
              float sx = static_cast<float>(xx) + fx[i];
              float sy = static_cast<float>(yy) + fy[i];
              const bool in_x = sx > 0.0f && sx < static_cast<float>(W - 1);
              const bool in_y = sy > 0.0f && sy < static_cast<float>(H - 1);
              sx = std::min(std::max(sx, 0.0f), static_cast<float>(W - 1));
              sy = std::min(std::max(sy, 0.0f), static_cast<float>(H - 1));
              const int64_t x0 = static_cast<int64_t>(sx);
              const int64_t y0 = static_cast<int64_t>(sy);
              const int64_t x1 = std::min(x0 + 1, W - 1);
              const int64_t y1 = std::min(y0 + 1, H - 1);
              const float ax = sx - static_cast<float>(x0);
              const float ay = sy - static_cast<float>(y0);
              float gx_acc = 0.0f, gy_acc = 0.0f;
              for (int64_t c = 0; c < C; ++c) {
                const float g = n.grad[(c * T + t) * plane + i];
                if (g == 0.0f) continue;
                const float* src = fr.data() + (c * T + t) * plane;
                const float v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
                const float v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
                if (need_gframes) {
                  float* gsrc = gframes + (c * T + t) * plane;
                  gsrc[y0 * W + x0] += g * (1 - ay) * (1 - ax);
                  gsrc[y0 * W + x1] += g * (1 - ay) * ax;
                  gsrc[y1 * W + x0] += g * ay * (1 - ax);
                  gsrc[y1 * W + x1] += g * ay * ax;
                }
                if (need_gfield) {
                  gx_acc += g * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
                  gy_acc += g * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
                }
              }
              if (need_gfield) {
                // Clamped samples have zero coordinate gradient.
                if (in_x) gfield[(0 * T + t) * plane + i] += gx_acc;
                if (in_y) gfield[(1 * T + t) * plane + i] += gy_acc;
              }
            }
        }
      },
      "warp_frames");
}

}  // namespace turbdet::nn
