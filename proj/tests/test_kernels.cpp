#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "turbdet/core/rng.hpp"
#include "turbdet/core/tensor.hpp"
#include "turbdet/kernels/kernels.hpp"

using namespace turbdet;
namespace K = turbdet::kernels;

namespace {

bool have_avx2() {
  const auto caps = K::cpu_caps();
  return caps.avx2 && caps.fma;
}

// Runs fn under both implementations, returning (scalar, avx2) results.
template <typename Fn>
auto both(Fn&& fn) {
  const K::Impl prev = K::active_impl();
  K::set_impl(K::Impl::kScalar);
  auto a = fn();
  K::set_impl(K::Impl::kAvx2);
  auto b = fn();
  K::set_impl(prev);
  return std::pair{a, b};
}

}  // namespace

TEST_CASE("dispatch reports a valid implementation") {
  const K::Impl impl = K::active_impl();
  CHECK((impl == K::Impl::kScalar || impl == K::Impl::kAvx2));
  if (have_avx2()) {
    K::set_impl(K::Impl::kAvx2);
    CHECK(K::active_impl() == K::Impl::kAvx2);
    K::set_impl(K::Impl::kAuto);
  }
}

TEST_CASE("sgemm scalar/avx2 equivalence across shapes and transposes") {
  if (!have_avx2()) return;
  Rng rng(7);
  const int64_t shapes[][3] = {{1, 1, 1},   {3, 5, 2},    {6, 16, 8},  {7, 17, 9},
                               {13, 31, 57}, {64, 48, 96}, {97, 130, 61}, {128, 256, 64}};
  for (const auto& s : shapes) {
    const int64_t m = s[0], n = s[1], k = s[2];
    for (int ta = 0; ta <= 1; ++ta)
      for (int tb = 0; tb <= 1; ++tb) {
        Tensor a = Tensor::randn({ta ? k : m, ta ? m : k}, rng);
        Tensor b = Tensor::randn({tb ? n : k, tb ? k : n}, rng);
        Tensor c0 = Tensor::randn({m, n}, rng);
        Tensor c1 = c0.clone();
        const float alpha = 1.25f, beta = 0.5f;
        K::set_impl(K::Impl::kScalar);
        K::sgemm(ta, tb, m, n, k, alpha, a.data(), a.dim(1), b.data(), b.dim(1), beta,
                 c0.data(), n);
        K::set_impl(K::Impl::kAvx2);
        K::sgemm(ta, tb, m, n, k, alpha, a.data(), a.dim(1), b.data(), b.dim(1), beta,
                 c1.data(), n);
        K::set_impl(K::Impl::kAuto);
        double max_abs = 0.0, max_mag = 0.0;
        for (int64_t i = 0; i < c0.numel(); ++i) {
          max_abs = std::max(max_abs, std::abs(double(c0[i]) - c1[i]));
          max_mag = std::max(max_mag, std::abs(double(c0[i])));
        }
        CHECK(max_abs <= 1e-4 * (1.0 + max_mag));
      }
  }
}

TEST_CASE("elementwise kernels equivalence") {
  if (!have_avx2()) return;
  Rng rng(11);
  for (int64_t n : {1, 7, 8, 9, 63, 64, 1000, 4096 + 3}) {
    Tensor a = Tensor::randn({n}, rng);
    Tensor b = Tensor::randn({n}, rng);
    auto [ys, yv] = both([&] {
      Tensor y({n});
      K::vadd(a.data(), b.data(), y.data(), n);
      K::vmul(y.data(), b.data(), y.data(), n);
      K::vaxpy(0.5f, a.data(), y.data(), n);
      K::vscale(y.data(), -1.5f, y.data(), n);
      K::vsub(y.data(), b.data(), y.data(), n);
      std::vector<float> out(y.data(), y.data() + n);
      return out;
    });
    for (int64_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yv[i]).epsilon(1e-6));
  }
}

TEST_CASE("reduction kernels equivalence") {
  if (!have_avx2()) return;
  Rng rng(13);
  for (int64_t n : {1, 16, 100, 4097, 1 << 17}) {
    Tensor a = Tensor::randn({n}, rng);
    Tensor b = Tensor::randn({n}, rng);
    auto [rs, rv] = both([&] {
      return std::vector<double>{K::vsum(a.data(), n), K::vdot(a.data(), b.data(), n),
                                 K::vsumsq(a.data(), n)};
    });
    for (size_t i = 0; i < rs.size(); ++i)
      CHECK(rs[i] == doctest::Approx(rv[i]).epsilon(1e-5));
  }
}

TEST_CASE("vexp matches std::exp within float tolerance") {
  if (!have_avx2()) return;
  Rng rng(17);
  const int64_t n = 10000;
  Tensor x({n});
  rng.fill_uniform(x.data(), n, -80.0f, 20.0f);
  Tensor y({n});
  K::set_impl(K::Impl::kAvx2);
  K::vexp(x.data(), y.data(), n);
  K::set_impl(K::Impl::kAuto);
  for (int64_t i = 0; i < n; ++i) {
    const double ref = std::exp(static_cast<double>(x[i]));
    CHECK(std::abs(y[i] - ref) <= 3e-7 * ref + 1e-30);
  }
}

TEST_CASE("vexp_pd matches std::exp to double precision") {
  if (!have_avx2()) return;
  Rng rng(18);
  const int64_t n = 4003;
  std::vector<double> x(n), y(n);
  for (auto& v : x) v = rng.uniform(-30.0, 10.0);
  K::set_impl(K::Impl::kAvx2);
  K::vexp_pd(x.data(), y.data(), n);
  K::set_impl(K::Impl::kAuto);
  for (int64_t i = 0; i < n; ++i) {
    const double ref = std::exp(x[i]);
    CHECK(std::abs(y[i] - ref) <= 1e-12 * ref);
  }
}

TEST_CASE("relu and relu_bwd equivalence") {
  if (!have_avx2()) return;
  Rng rng(19);
  const int64_t n = 777;
  Tensor x = Tensor::randn({n}, rng);
  Tensor gy = Tensor::randn({n}, rng);
  auto [s, v] = both([&] {
    Tensor y({n}), gx({n});
    K::vrelu(x.data(), y.data(), n);
    K::vrelu_bwd(x.data(), gy.data(), gx.data(), n);
    std::vector<float> out(y.data(), y.data() + n);
    out.insert(out.end(), gx.data(), gx.data() + n);
    return out;
  });
  for (size_t i = 0; i < s.size(); ++i) CHECK(s[i] == v[i]);
}

TEST_CASE("charbonnier_sum equivalence and exact zero-diff value") {
  if (!have_avx2()) return;
  Rng rng(23);
  const int64_t n = 5000;
  Tensor x = Tensor::randn({n}, rng);
  Tensor y = Tensor::randn({n}, rng);
  auto [s, v] = both([&] { return K::charbonnier_sum(x.data(), y.data(), n, 1e-3f); });
  CHECK(s == doctest::Approx(v).epsilon(1e-6));
  // x == y collapses every term to eps.
  auto [s2, v2] = both([&] { return K::charbonnier_sum(x.data(), x.data(), n, 1e-3f); });
  CHECK(s2 == doctest::Approx(n * 1e-3).epsilon(1e-6));
  CHECK(v2 == doctest::Approx(n * 1e-3).epsilon(1e-6));
}

TEST_CASE("bilinear_warp_plane equivalence and integer-shift behaviour") {
  if (!have_avx2()) return;
  Rng rng(29);
  const int64_t h = 33, w = 47;
  Tensor src = Tensor::rand({h, w}, rng, 0.0f, 255.0f);
  Tensor fx = Tensor::rand({h, w}, rng, -3.0f, 3.0f);
  Tensor fy = Tensor::rand({h, w}, rng, -3.0f, 3.0f);
  auto [s, v] = both([&] {
    Tensor dst({h, w});
    K::bilinear_warp_plane(src.data(), h, w, fx.data(), fy.data(), dst.data());
    return std::vector<float>(dst.data(), dst.data() + h * w);
  });
  for (size_t i = 0; i < s.size(); ++i)
    CHECK(s[i] == doctest::Approx(v[i]).epsilon(1e-5));

  // Constant integer offset: exact index shift with edge replication.
  fx.fill(3.0f);
  fy.fill(0.0f);
  Tensor dst({h, w});
  K::bilinear_warp_plane(src.data(), h, w, fx.data(), fy.data(), dst.data());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t sxp = std::min(x + 3, w - 1);
      CHECK(dst[y * w + x] == src[y * w + sxp]);
    }
}
