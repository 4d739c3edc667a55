#include "turbdet/kernels/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>

#include "kernels_internal.hpp"
#include "turbdet/core/error.hpp"

namespace turbdet::kernels {

namespace {

struct Table {
  decltype(&scalar::sgemm) sgemm;
  decltype(&scalar::vadd) vadd;
  decltype(&scalar::vsub) vsub;
  decltype(&scalar::vmul) vmul;
  decltype(&scalar::vscale) vscale;
  decltype(&scalar::vaxpy) vaxpy;
  decltype(&scalar::vsum) vsum;
  decltype(&scalar::vdot) vdot;
  decltype(&scalar::vsumsq) vsumsq;
  decltype(&scalar::vexp) vexp;
  decltype(&scalar::vexp_pd) vexp_pd;
  decltype(&scalar::vrelu) vrelu;
  decltype(&scalar::vrelu_bwd) vrelu_bwd;
  decltype(&scalar::charbonnier_sum) charbonnier_sum;
  decltype(&scalar::bilinear_warp_plane) bilinear_warp_plane;
};

constexpr Table kScalarTable = {
    &scalar::sgemm,   &scalar::vadd,      &scalar::vsub,
    &scalar::vmul,    &scalar::vscale,    &scalar::vaxpy,
    &scalar::vsum,    &scalar::vdot,      &scalar::vsumsq,
    &scalar::vexp,    &scalar::vexp_pd,   &scalar::vrelu,     &scalar::vrelu_bwd,
    &scalar::charbonnier_sum, &scalar::bilinear_warp_plane,
};

constexpr Table kAvx2Table = {
    &avx2::sgemm,   &avx2::vadd,      &avx2::vsub,
    &avx2::vmul,    &avx2::vscale,    &avx2::vaxpy,
    &avx2::vsum,    &avx2::vdot,      &avx2::vsumsq,
    &avx2::vexp,    &avx2::vexp_pd,   &avx2::vrelu,     &avx2::vrelu_bwd,
    &avx2::charbonnier_sum, &avx2::bilinear_warp_plane,
};

Table g_table = kScalarTable;
Impl g_impl = Impl::kScalar;
std::once_flag g_init;

void apply(Impl impl) {
  const CpuCaps caps = cpu_caps();
  if (impl == Impl::kAuto) impl = (caps.avx2 && caps.fma) ? Impl::kAvx2 : Impl::kScalar;
  if (impl == Impl::kAvx2 && !(caps.avx2 && caps.fma))
    throw ModelError("kernels: AVX2 requested but not supported by this CPU");
  g_table = (impl == Impl::kAvx2) ? kAvx2Table : kScalarTable;
  g_impl = impl;
}

void init_once() {
  std::call_once(g_init, [] {
    Impl impl = Impl::kAuto;
    if (const char* env = std::getenv("TURBDET_KERNELS")) {
      if (std::strcmp(env, "scalar") == 0) impl = Impl::kScalar;
      else if (std::strcmp(env, "avx2") == 0) impl = Impl::kAvx2;
    }
    apply(impl);
  });
}

}  // namespace

CpuCaps cpu_caps() {
  CpuCaps caps;
#if defined(__x86_64__) || defined(__i386__)
  caps.avx2 = __builtin_cpu_supports("avx2");
  caps.fma = __builtin_cpu_supports("fma");
#endif
  return caps;
}

Impl active_impl() {
  init_once();
  return g_impl;
}

void set_impl(Impl impl) {
  init_once();
  apply(impl);
}

const char* impl_name(Impl impl) {
  switch (impl) {
    case Impl::kAuto: return "auto";
    case Impl::kScalar: return "scalar";
    case Impl::kAvx2: return "avx2";
  }
  return "?";
}

void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
           float* c, int64_t ldc) {
  init_once();
  g_table.sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void vadd(const float* a, const float* b, float* y, int64_t n) {
  init_once();
  g_table.vadd(a, b, y, n);
}
void vsub(const float* a, const float* b, float* y, int64_t n) {
  init_once();
  g_table.vsub(a, b, y, n);
}
void vmul(const float* a, const float* b, float* y, int64_t n) {
  init_once();
  g_table.vmul(a, b, y, n);
}
void vscale(const float* x, float s, float* y, int64_t n) {
  init_once();
  g_table.vscale(x, s, y, n);
}
void vaxpy(float a, const float* x, float* y, int64_t n) {
  init_once();
  g_table.vaxpy(a, x, y, n);
}
double vsum(const float* x, int64_t n) {
  init_once();
  return g_table.vsum(x, n);
}
double vdot(const float* x, const float* y, int64_t n) {
  init_once();
  return g_table.vdot(x, y, n);
}
double vsumsq(const float* x, int64_t n) {
  init_once();
  return g_table.vsumsq(x, n);
}
void vexp(const float* x, float* y, int64_t n) {
  init_once();
  g_table.vexp(x, y, n);
}
void vexp_pd(const double* x, double* y, int64_t n) {
  init_once();
  g_table.vexp_pd(x, y, n);
}
void vrelu(const float* x, float* y, int64_t n) {
  init_once();
  g_table.vrelu(x, y, n);
}
void vrelu_bwd(const float* x, const float* gy, float* gx, int64_t n) {
  init_once();
  g_table.vrelu_bwd(x, gy, gx, n);
}
double charbonnier_sum(const float* x, const float* y, int64_t n, float eps) {
  init_once();
  return g_table.charbonnier_sum(x, y, n, eps);
}
void bilinear_warp_plane(const float* src, int64_t h, int64_t w, const float* fx,
                         const float* fy, float* dst) {
  init_once();
  g_table.bilinear_warp_plane(src, h, w, fx, fy, dst);
}

}  // namespace turbdet::kernels
