#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "turbdet/core/error.hpp"
#include "turbdet/core/rng.hpp"
#include "turbdet/nn/autograd.hpp"

using namespace turbdet;
using namespace turbdet::nn;

namespace {

// Builds loss = mean(out * probe_const) over fn's output, runs backward once,
// then gradchecks input index `wrt` of the op by central differences.
double gradcheck_op(const std::function<Var(const std::vector<Var>&)>& fn,
                    std::vector<Tensor> inputs, size_t wrt, int n_probe = 24,
                    double step = 1e-2, uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<Var> vars;
  for (size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(Var(inputs[i].clone(), i == wrt));
  Var out = fn(vars);
  Tensor probe = Tensor::randn(out.shape(), rng);
  auto weighted = [&](const Var& o) {
    Var p = Var::constant(probe);
    return mean_all(mul(o, p));
  };
  Var loss = weighted(out);
  backward(loss);
  Tensor analytic = vars[wrt].grad().clone();

  auto f = [&](const Tensor& x) -> double {
    std::vector<Var> vs;
    for (size_t i = 0; i < inputs.size(); ++i)
      vs.push_back(Var(i == wrt ? x.clone() : inputs[i].clone(), false));
    Var o = fn(vs);
    return weighted(o).value()[0];
  };
  return oracle::gradcheck(f, inputs[wrt], analytic, n_probe, step, seed + 1);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("backward accumulates through shared subexpressions") {
  Var x = Var::param(Tensor::from({2}, {3.0f, -1.0f}), "x");
  Var y = mul(x, x);              // x^2
  Var z = add(y, scale(x, 2.0f)); // x^2 + 2x
  Var loss = sum_all(z);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 2));
  CHECK(x.grad()[1] == doctest::Approx(2 * -1.0 + 2));
}

TEST_CASE("elementwise op gradients") {
  Rng rng(5);
  Tensor x = Tensor::rand({40}, rng, 0.5f, 2.0f);
  // Keep |x - b| away from the min/max subgradient kink so central
  // differences probe smooth regions.
  Tensor b({40});
  for (int64_t i = 0; i < 40; ++i)
    b[i] = x[i] + (i % 2 ? 0.3f : -0.3f) * (1.0f + 0.2f * static_cast<float>(i % 5));
  auto unary = [&](auto opfn) {
    return gradcheck_op([&](const std::vector<Var>& v) { return opfn(v[0]); }, {x}, 0, 24,
                        1e-2);
  };
  CHECK(unary([](const Var& v) { return relu(v); }) < 1e-3);
  CHECK(unary([](const Var& v) { return sigmoid(v); }) < 1e-3);
  CHECK(unary([](const Var& v) { return softplus(v); }) < 1e-3);
  CHECK(unary([](const Var& v) { return exp_op(v); }) < 1e-3);
  CHECK(unary([](const Var& v) { return log_op(v); }) < 1e-3);
  CHECK(unary([](const Var& v) { return pow_const(v, 2.0f); }) < 1e-3);
  CHECK(unary([](const Var& v) { return pow_const(v, 0.25f); }) < 1e-3);
  CHECK(unary([](const Var& v) { return abs_op(v); }) < 1e-3);

  Tensor bdiv = Tensor::rand({40}, rng, 0.6f, 1.6f);
  for (size_t wrt : {0, 1}) {
    CHECK(gradcheck_op([](const std::vector<Var>& v) { return mul(v[0], v[1]); }, {x, b},
                       wrt) < 1e-3);
    CHECK(gradcheck_op([](const std::vector<Var>& v) { return div_ew(v[0], v[1]); },
                       {x, bdiv}, wrt, 24, 1e-2) < 1e-3);
    CHECK(gradcheck_op([](const std::vector<Var>& v) { return max_ew(v[0], v[1]); },
                       {x, b}, wrt) < 1e-3);
    CHECK(gradcheck_op([](const std::vector<Var>& v) { return min_ew(v[0], v[1]); },
                       {x, b}, wrt) < 1e-3);
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(7);
  Tensor x = Tensor::randn({3, 4, 5}, rng);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return permute(v[0], {2, 0, 1}); },
                     {x}, 0) < 1e-3);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return narrow(v[0], 1, 1, 2); }, {x},
                     0) < 1e-3);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return flip(v[0], {0, 2}); }, {x},
                     0) < 1e-3);
  CHECK(gradcheck_op(
            [](const std::vector<Var>& v) {
              return concat({narrow(v[0], 0, 0, 1), v[0]}, 0);
            },
            {x}, 0) < 1e-3);
  CHECK(gradcheck_op(
            [](const std::vector<Var>& v) {
              return select_rows(reshape(v[0], {12, 5}), {0, 3, 3, 7});
            },
            {x}, 0) < 1e-3);
}

TEST_CASE("matmul gradients all transpose combinations") {
  Rng rng(11);
  for (int ta = 0; ta <= 1; ++ta)
    for (int tb = 0; tb <= 1; ++tb) {
      Tensor a = Tensor::randn({ta ? 4 : 3, ta ? 3 : 4}, rng);
      Tensor b = Tensor::randn({tb ? 5 : 4, tb ? 4 : 5}, rng);
      for (size_t wrt : {0, 1}) {
        CHECK(gradcheck_op(
                  [ta, tb](const std::vector<Var>& v) {
                    return matmul(v[0], v[1], ta, tb);
                  },
                  {a, b}, wrt, 24, 1e-2, 17 * (ta + 1) + tb) < 1e-3);
      }
    }
}

TEST_CASE("softmax, rowmax, bias gradients") {
  Rng rng(13);
  Tensor x = Tensor::randn({6, 9}, rng);
  Tensor b = Tensor::randn({9}, rng);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return softmax_lastdim(v[0]); }, {x},
                     0) < 1e-3);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return rowmax_lastdim(v[0]); }, {x},
                     0) < 1e-3);
  for (size_t wrt : {0, 1})
    CHECK(gradcheck_op(
              [](const std::vector<Var>& v) { return add_channel_bias(v[0], v[1], 1); },
              {x, b}, wrt) < 1e-3);
}

TEST_CASE("conv3d matches naive oracle") {
  Rng rng(17);
  for (auto [kt, kh, kw] : std::vector<std::array<int, 3>>{{1, 1, 1}, {3, 3, 3}, {3, 5, 5}, {3, 7, 7}}) {
    Tensor x = Tensor::randn({3, 4, 8, 9}, rng);
    Tensor w = Tensor::randn({5, 3, kt, kh, kw}, rng, 0.0f, 0.3f);
    Tensor b = Tensor::randn({5}, rng);
    Var out = conv3d(Var::constant(x), Var::constant(w), Var::constant(b), kt / 2, kh / 2,
                     kw / 2);
    Tensor ref = oracle::conv3d_naive(x, w, b, kt / 2, kh / 2, kw / 2);
    CHECK(max_abs_diff(out.value(), ref) < 1e-4);
  }
}

TEST_CASE("conv3d gradients") {
  Rng rng(19);
  Tensor x = Tensor::randn({2, 3, 6, 7}, rng);
  Tensor w = Tensor::randn({4, 2, 3, 3, 3}, rng, 0.0f, 0.4f);
  Tensor b = Tensor::randn({4}, rng);
  auto fn = [](const std::vector<Var>& v) { return conv3d(v[0], v[1], v[2], 1, 1, 1); };
  CHECK(gradcheck_op(fn, {x, w, b}, 0) < 1e-3);
  CHECK(gradcheck_op(fn, {x, w, b}, 1) < 1e-3);
  CHECK(gradcheck_op(fn, {x, w, b}, 2) < 1e-3);
}

TEST_CASE("pooling and upsampling gradients") {
  Rng rng(23);
  Tensor x = Tensor::randn({2, 3, 8, 10}, rng);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return maxpool3d_spatial2(v[0]); },
                     {x}, 0) < 1e-3);
  CHECK(gradcheck_op(
            [](const std::vector<Var>& v) { return upsample_trilinear_spatial2(v[0]); },
            {x}, 0) < 1e-3);
  Tensor x2 = Tensor::randn({3, 8, 12}, rng);
  CHECK(gradcheck_op([](const std::vector<Var>& v) { return avgpool2d(v[0], 4); }, {x2},
                     0) < 1e-3);
}

TEST_CASE("deform_conv3d with zero offsets equals standard conv3d") {
  Rng rng(29);
  // All kernel sizes from the default registration ladder.
  for (auto [kt, kh, kw] : std::vector<std::array<int, 3>>{{3, 7, 7}, {3, 5, 5}, {3, 3, 3}}) {
    Tensor x = Tensor::randn({3, 4, 10, 11}, rng);
    Tensor w = Tensor::randn({4, 3, kt, kh, kw}, rng, 0.0f, 0.2f);
    Tensor b = Tensor::randn({4}, rng);
    Tensor off = Tensor::zeros({3 * kt * kh * kw, 4, 10, 11});
    Var got = deform_conv3d(Var::constant(x), Var::constant(off), Var::constant(w),
                            Var::constant(b));
    Tensor ref = oracle::conv3d_naive(x, w, b, kt / 2, kh / 2, kw / 2);
    CHECK(max_abs_diff(got.value(), ref) < 1e-5);
  }
}

TEST_CASE("deform_conv3d identity kernel behaviors") {
  Rng rng(31);
  const int64_t C = 2, T = 3, H = 8, W = 9;
  Tensor x = Tensor::randn({C, T, H, W}, rng);
  // Single-tap kernel (1,1,1): center tap, weight 1 per channel (diagonal).
  Tensor w = Tensor::zeros({C, C, 1, 1, 1});
  for (int64_t c = 0; c < C; ++c) w.at({c, c, 0, 0, 0}) = 1.0f;
  Tensor off = Tensor::zeros({3, T, H, W});

  SUBCASE("zero offsets: output equals input") {
    Var got = deform_conv3d(Var::constant(x), Var::constant(off), Var::constant(w), Var());
    CHECK(max_abs_diff(got.value(), x) == 0.0);
  }
  SUBCASE("constant +2 x-offset: output equals input shifted horizontally") {
    for (int64_t i = 0; i < T * H * W; ++i) off[2 * T * H * W + i] = 2.0f;
    Var got = deform_conv3d(Var::constant(x), Var::constant(off), Var::constant(w), Var());
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W - 2; ++xx)
            CHECK(got.value().at({c, t, y, xx}) ==
                  doctest::Approx(x.at({c, t, y, xx + 2})).epsilon(1e-6));
  }
}

TEST_CASE("deform_conv3d gradients (input, offsets, weights, bias)") {
  Rng rng(37);
  Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
  Tensor w = Tensor::randn({3, 2, 3, 3, 3}, rng, 0.0f, 0.3f);
  Tensor b = Tensor::randn({3}, rng);
  // Fractional parts kept in (0.2, 0.8): trilinear interpolation has
  // derivative kinks at integer coordinates, which central differences must
  // not straddle.
  Tensor off({81, 3, 6, 6});
  for (int64_t i = 0; i < off.numel(); ++i) {
    const float sign = rng.uniform() < 0.5 ? -1.0f : 1.0f;
    const float whole = static_cast<float>(rng.uniform_int(0, 1));
    off[i] = sign * (whole + static_cast<float>(rng.uniform(0.2, 0.8)));
  }
  auto fn = [](const std::vector<Var>& v) { return deform_conv3d(v[0], v[1], v[2], v[3]); };
  CHECK(gradcheck_op(fn, {x, off, w, b}, 0, 24, 1e-2) < 1e-3);
  CHECK(gradcheck_op(fn, {x, off, w, b}, 1, 24, 8e-3) < 1e-3);
  CHECK(gradcheck_op(fn, {x, off, w, b}, 2, 24, 1e-2) < 1e-3);
  CHECK(gradcheck_op(fn, {x, off, w, b}, 3, 4, 1e-2) < 1e-3);
}

TEST_CASE("deform_conv3d rejects non-finite offsets") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w = Tensor::zeros({1, 1, 1, 1, 1});
  Tensor off = Tensor::zeros({3, 2, 4, 4});
  off[5] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(
      deform_conv3d(Var::constant(x), Var::constant(off), Var::constant(w), Var()),
      ModelError);
}

TEST_CASE("warp_frames identities and inversion") {
  Rng rng(41);
  const int64_t C = 3, T = 4, H = 12, W = 12;
  // Smooth content on the 0-255 scale; bilinear resampling of white noise
  // would not be invertible.
  Tensor frames({C, T, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          frames.at({c, t, y, x}) =
              127.5f + 60.0f * std::sin(0.12f * y + 0.2f * c) * std::cos(0.1f * x + 0.1f * t);
  Tensor zero = Tensor::zeros({2, T, H, W});

  SUBCASE("zero field leaves frames unchanged") {
    Var got = warp_frames(Var::constant(frames), Var::constant(zero), 1);
    CHECK(max_abs_diff(got.value(), frames) == 0.0);
  }
  SUBCASE("warp then inverse warp recovers interior for smooth small fields") {
    // Slowly varying field: the inverse-composition error scales with
    // |grad f| * |f|.
    Tensor f({2, T, H, W});
    for (int64_t t = 0; t < T; ++t)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          f.at({0, t, y, x}) = 1.8f * std::sin(0.05f * y);
          f.at({1, t, y, x}) = -1.5f * std::cos(0.06f * x);
        }
    Tensor fneg({2, T, H, W});
    for (int64_t i = 0; i < f.numel(); ++i) fneg[i] = -f[i];
    Var once = warp_frames(Var::constant(frames), Var::constant(f), -1);
    Var back = warp_frames(Var::constant(once.value()), Var::constant(fneg), -1);
    double mse = 0.0;
    int64_t cnt = 0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 3; y < H - 3; ++y)
          for (int64_t x = 3; x < W - 3; ++x) {
            const double d = back.value().at({c, t, y, x}) - frames.at({c, t, y, x});
            mse += d * d;
            ++cnt;
          }
    CHECK(mse / cnt < 2.0);
  }
  SUBCASE("constant half-pixel field averages neighbors") {
    Tensor f = Tensor::zeros({2, T, H, W});
    for (int64_t i = 0; i < T * H * W; ++i) f[i] = 0.5f;  // fx = 0.5
    Var got = warp_frames(Var::constant(frames), Var::constant(f), -1);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W - 1; ++x) {
            const float expect =
                0.5f * (frames.at({c, t, y, x}) + frames.at({c, t, y, x + 1}));
            CHECK(got.value().at({c, t, y, x}) == doctest::Approx(expect).epsilon(1e-5));
          }
  }
  SUBCASE("gradients wrt field and frames") {
    // Unit-scale frames and integer-avoiding field keep the probes in the
    // float-precision and smoothness budget.
    Tensor fr01 = Tensor::rand({C, T, H, W}, rng, 0.0f, 1.0f);
    Tensor f({2, T, H, W});
    for (int64_t i = 0; i < f.numel(); ++i)
      f[i] = (rng.uniform() < 0.5 ? -1.0f : 1.0f) * static_cast<float>(rng.uniform(0.2, 0.8));
    auto fn = [](const std::vector<Var>& v) { return warp_frames(v[0], v[1], 0); };
    CHECK(gradcheck_op(fn, {fr01, f}, 1, 24, 1e-3) < 2e-3);
    CHECK(gradcheck_op(fn, {fr01, f}, 0, 24, 1e-2) < 1e-3);
  }
}

TEST_CASE("ssm_scan matches sequential oracle and zero/length-1 cases") {
  Rng rng(43);
  const int64_t L = 200, C = 6, N = 4;
  Tensor u = Tensor::randn({L, C}, rng);
  Tensor delta = Tensor::rand({L, C}, rng, 0.05f, 0.9f);
  Tensor bs = Tensor::randn({L, N}, rng);
  Tensor cs = Tensor::randn({L, N}, rng);
  Tensor a = Tensor::rand({C, N}, rng, -1.5f, -0.05f);

  Var y = ssm_scan(Var::constant(u), Var::constant(delta), Var::constant(bs),
                   Var::constant(cs), Var::constant(a));
  Tensor ref = oracle::ssm_scan_naive(u, delta, bs, cs, a);
  double max_rel = 0.0;
  for (int64_t i = 0; i < ref.numel(); ++i) {
    const double denom = std::max(1e-3, std::abs(static_cast<double>(ref[i])));
    max_rel = std::max(max_rel, std::abs(static_cast<double>(y.value()[i]) - ref[i]) / denom);
  }
  CHECK(max_rel < 1e-5);

  SUBCASE("zero input gives zero output") {
    Tensor u0 = Tensor::zeros({L, C});
    Var y0 = ssm_scan(Var::constant(u0), Var::constant(delta), Var::constant(bs),
                      Var::constant(cs), Var::constant(a));
    for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0.value()[i] == 0.0f);
  }
  SUBCASE("length-1 closed form y1 = <c1, delta1*b1*u1> per channel") {
    Tensor u1 = Tensor::randn({1, C}, rng);
    Tensor d1 = Tensor::rand({1, C}, rng, 0.1f, 0.8f);
    Tensor b1 = Tensor::randn({1, N}, rng);
    Tensor c1 = Tensor::randn({1, N}, rng);
    Var y1 = ssm_scan(Var::constant(u1), Var::constant(d1), Var::constant(b1),
                      Var::constant(c1), Var::constant(a));
    for (int64_t c = 0; c < C; ++c) {
      double expect = 0.0;
      for (int64_t n = 0; n < N; ++n)
        expect += c1.at({0, n}) * (d1.at({0, c}) * b1.at({0, n}) * u1.at({0, c}));
      CHECK(y1.value().at({0, c}) == doctest::Approx(expect).epsilon(1e-4));
    }
  }
}

TEST_CASE("ssm_scan gradients wrt every input") {
  // Numeric side runs through the double-precision sequential oracle: the
  // recurrence has large high-order derivatives (long-lag powers of the
  // transition), so float32 forward differences cannot resolve 1e-3.
  Rng rng(47);
  const int64_t L = 70, C = 3, N = 4;  // spans a block boundary
  Tensor u = Tensor::randn({L, C}, rng);
  Tensor delta = Tensor::rand({L, C}, rng, 0.05f, 0.9f);
  Tensor bs = Tensor::randn({L, N}, rng);
  Tensor cs = Tensor::randn({L, N}, rng);
  Tensor a = Tensor::rand({C, N}, rng, -1.5f, -0.05f);
  std::vector<Tensor> in = {u, delta, bs, cs, a};

  Rng prng(1234);
  Tensor probe = Tensor::randn({L, C}, prng);
  for (size_t wrt = 0; wrt < in.size(); ++wrt) {
    std::vector<Var> vars;
    for (size_t i = 0; i < in.size(); ++i) vars.push_back(Var(in[i].clone(), i == wrt));
    Var out = ssm_scan(vars[0], vars[1], vars[2], vars[3], vars[4]);
    Var loss = mean_all(mul(out, Var::constant(probe)));
    backward(loss);
    Tensor analytic = vars[wrt].grad().clone();
    auto f = [&](const Tensor& x) -> double {
      std::vector<const Tensor*> ptr = {&in[0], &in[1], &in[2], &in[3], &in[4]};
      ptr[wrt] = &x;
      return oracle::ssm_probe_loss_naive(*ptr[0], *ptr[1], *ptr[2], *ptr[3], *ptr[4],
                                          probe);
    };
    CHECK(oracle::gradcheck(f, in[wrt], analytic, 20, 1e-4, 100 + wrt) < 1e-3);
  }
}

TEST_CASE("batchnorm gradcheck (train and eval, both axes)") {
  Rng rng(53);
  Tensor x = Tensor::randn({4, 3, 5}, rng);
  Tensor gamma = Tensor::rand({3}, rng, 0.5f, 1.5f);
  Tensor beta = Tensor::randn({3}, rng);
  for (bool training : {true, false}) {
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    rng.fill_normal(rm.data(), 3, 0.0f, 0.2f);
    rng.fill_uniform(rv.data(), 3, 0.5f, 1.5f);
    auto fn = [&rm, &rv, training](const std::vector<Var>& v) {
      Tensor rm2 = rm.clone(), rv2 = rv.clone();
      return batchnorm(v[0], v[1], v[2], rm2, rv2, 1, training, false, 0.1f, 1e-5f);
    };
    for (size_t wrt : {0, 1, 2})
      CHECK(gradcheck_op(fn, {x, gamma, beta}, wrt, 24, 1e-2, 200 + wrt) < 2e-3);
  }
}

TEST_CASE("charbonnier loss values and gradient") {
  Rng rng(59);
  Tensor x = Tensor::randn({100}, rng);
  // x == target collapses to eps exactly.
  Var same = charbonnier_loss(Var::constant(x), x, 1e-3f);
  CHECK(same.value()[0] == doctest::Approx(1e-3).epsilon(1e-7));

  // Differences kept away from 0 where curvature is ~1/eps.
  Tensor t({100});
  for (int64_t i = 0; i < 100; ++i)
    t[i] = x[i] + (i % 2 ? 1.0f : -1.0f) * (0.1f + 0.01f * static_cast<float>(i % 7));
  auto fn = [&](const std::vector<Var>& v) { return charbonnier_loss(v[0], t, 1e-3f); };
  CHECK(gradcheck_op(fn, {x}, 0, 24, 1e-3) < 1e-3);
}
