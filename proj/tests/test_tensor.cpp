#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "flowlite/kernels.hpp"
#include "flowlite/tensor.hpp"
#include "oracles.hpp"

using namespace flowlite;

namespace {

ConvSpec spec(int in, int out, int k, int stride, int pad, int groups = 1,
              bool bias = false) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kh = s.kw = k;
  s.stride = stride;
  s.padding = pad;
  s.groups = groups;
  s.has_bias = bias;
  return s;
}

}  // namespace

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor4<float>(0, 1, 1, 1), std::invalid_argument);
  Tensor4<float> t(2, 3, 4, 5);
  CHECK(t.size() == 2 * 3 * 4 * 5);
  CHECK(t.flat().abs().maxCoeff() == 0.0f);  // zero-initialized
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t.data()[t.size() - 1] == 7.0f);  // NCHW: last linear index
}

TEST_CASE("conv2d all-ones 3x3 center value") {
  Tensor4<float> in(1, 1, 3, 3), w(1, 1, 3, 3);
  in.flat().setConstant(1.0f);
  w.flat().setConstant(1.0f);
  auto out = conv2d(in, w, Vec<float>(), spec(1, 1, 3, 1, 1));
  CHECK(out.shape() == Shape4{1, 1, 3, 3});
  CHECK(out(0, 0, 1, 1) == 9.0f);
  CHECK(out(0, 0, 0, 0) == 4.0f);  // corner sees a 2x2 window
}

TEST_CASE("conv2d zero weights pass bias through per group") {
  std::mt19937 rng(1);
  auto in = oracle::random_tensor<float>(1, 2, 4, 4, rng);
  Tensor4<float> w(2, 1, 3, 3);
  Vec<float> bias(2);
  bias << 1.0f, -1.0f;
  auto out = conv2d(in, w, bias, spec(2, 2, 3, 1, 1, 2, true));
  CHECK((out.flat().segment(0, 16) == 1.0f).all());
  CHECK((out.flat().segment(16, 16) == -1.0f).all());
}

TEST_CASE("conv2d stride-2 matches seven-loop reference") {
  std::mt19937 rng(7);
  auto in = oracle::random_tensor<float>(1, 3, 8, 8, rng);
  auto w = oracle::random_tensor<float>(16, 3, 3, 3, rng);
  auto s = spec(3, 16, 3, 2, 1);
  auto got = conv2d(in, w, Vec<float>(), s);
  CHECK(got.shape() == Shape4{1, 16, 4, 4});
  auto want = oracle::conv2d_ref(in, w, Vec<float>(), s);
  CHECK(max_abs_diff(got, want) < 1e-5f);
}

TEST_CASE("conv2d grouped matches reference and per-group decomposition") {
  std::mt19937 rng(11);
  auto in = oracle::random_tensor<float>(2, 6, 5, 7, rng);
  auto w = oracle::random_tensor<float>(9, 2, 3, 3, rng);
  Vec<float> b = Vec<float>::Random(9);
  auto s = spec(6, 9, 3, 1, 1, 3, true);
  auto got = conv2d(in, w, b, s);
  CHECK(max_abs_diff(got, oracle::conv2d_ref(in, w, b, s)) < 1e-5f);

  // grouped == concatenation of the per-group convolutions, exactly
  for (int g = 0; g < 3; ++g) {
    Tensor4<float> in_g(2, 2, 5, 7), w_g(3, 2, 3, 3);
    for (Index n = 0; n < 2; ++n)
      for (Index c = 0; c < 2; ++c)
        std::memcpy(in_g.plane(n, c), in.plane(n, g * 2 + c), sizeof(float) * 5 * 7);
    std::memcpy(w_g.data(), w.data() + g * 3 * 2 * 9, sizeof(float) * 3 * 2 * 9);
    Vec<float> b_g = b.segment(g * 3, 3);
    auto out_g = conv2d(in_g, w_g, b_g, spec(2, 3, 3, 1, 1, 1, true));
    for (Index n = 0; n < 2; ++n)
      for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < 5 * 7; ++i)
          CHECK(out_g.plane(n, c)[i] == got.plane(n, g * 3 + c)[i]);
  }
}

TEST_CASE("conv2d identity via 1x1 depthwise kernel") {
  std::mt19937 rng(3);
  auto in = oracle::random_tensor<float>(1, 4, 6, 6, rng);
  Tensor4<float> w(4, 1, 1, 1);
  w.flat().setConstant(1.0f);
  auto out = conv2d(in, w, Vec<float>(), spec(4, 4, 1, 1, 0, 4));
  CHECK(bitwise_equal(out, in));
}

TEST_CASE("conv2d rejects shape mismatches with diagnostics") {
  Tensor4<float> in(1, 3, 4, 4), w(8, 3, 3, 3);
  CHECK_THROWS_WITH_AS(conv2d(in, w, Vec<float>(), spec(4, 8, 3, 1, 1)),
                       doctest::Contains("in_channels"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(conv2d(in, w, Vec<float>(), spec(3, 6, 3, 1, 1)),
                       doctest::Contains("weight shape"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(conv2d(in, w, Vec<float>(), spec(3, 8, 3, 1, 1, 2)),
                       doctest::Contains("groups"), std::invalid_argument);
}

TEST_CASE("deconv2d doubles spatial size and matches gather oracle") {
  std::mt19937 rng(5);
  auto in = oracle::random_tensor<float>(1, 2, 4, 4, rng);
  auto w = oracle::random_tensor<float>(2, 2, 4, 4, rng);
  auto s = spec(2, 2, 4, 2, 1, 1, true);
  Vec<float> b = Vec<float>::Random(2);
  auto out = deconv2d(in, w, b, s);
  CHECK(out.shape() == Shape4{1, 2, 8, 8});

  auto in2 = oracle::random_tensor<float>(1, 2, 3, 3, rng);
  auto got = deconv2d(in2, w, b, s);
  auto want = oracle::deconv2d_ref(in2, w, b);
  CHECK(max_abs_diff(got, want) < 1e-5f);

  Tensor4<float> zeros(1, 2, 4, 4);
  auto z = deconv2d(zeros, w, Vec<float>(), spec(2, 2, 4, 2, 1));
  CHECK(z.flat().abs().maxCoeff() == 0.0f);
}

TEST_CASE("deconv2d rejects non-doubling parameterizations") {
  Tensor4<float> in(1, 2, 4, 4), w(2, 2, 3, 3);
  CHECK_THROWS_AS(deconv2d(in, w, Vec<float>(), spec(2, 2, 3, 2, 1)),
                  std::invalid_argument);
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
  // <deconv(x, w), y> == <x, conv(y, w)> for the shared 4x4/2/1 geometry
  std::mt19937 rng(13);
  auto x = oracle::random_tensor<double>(1, 2, 5, 6, rng);
  auto w = oracle::random_tensor<double>(2, 3, 4, 4, rng);
  auto y = oracle::random_tensor<double>(1, 3, 10, 12, rng);
  auto dx = deconv2d(x, w, Vec<double>(), spec(2, 3, 4, 2, 1));
  auto cy = conv2d(y, w, Vec<double>(), spec(3, 2, 4, 2, 1));
  // conv weight layout (out,in,kh,kw) == deconv layout (in,out,kh,kw) here
  const double lhs = (dx.flat() * y.flat()).sum();
  const double rhs = (x.flat() * cy.flat()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("avgpool2 basics and loop oracle") {
  Tensor4<float> t(1, 1, 2, 2);
  t(0, 0, 0, 0) = 1;
  t(0, 0, 0, 1) = 2;
  t(0, 0, 1, 0) = 3;
  t(0, 0, 1, 1) = 4;
  CHECK(avgpool2(t)(0, 0, 0, 0) == 2.5f);

  Tensor4<float> c(2, 3, 4, 6);
  c.flat().setConstant(0.7f);
  CHECK((avgpool2(c).flat() == 0.7f).all());

  std::mt19937 rng(2);
  auto r = oracle::random_tensor<float>(1, 64, 8, 8, rng);
  CHECK(bitwise_equal(avgpool2(r), oracle::avgpool2_ref(r)));

  Tensor4<float> odd(1, 1, 3, 4);
  CHECK_THROWS_AS(avgpool2(odd), std::invalid_argument);
}

TEST_CASE("leaky_relu values") {
  Tensor4<float> t(1, 1, 1, 2);
  t(0, 0, 0, 0) = 2.0f;
  t(0, 0, 0, 1) = -2.0f;
  auto out = leaky_relu(t, 0.1f);
  CHECK(out(0, 0, 0, 0) == 2.0f);
  CHECK(out(0, 0, 0, 1) == doctest::Approx(-0.2f));

  std::mt19937 rng(4);
  auto r = oracle::random_tensor<float>(1, 3, 5, 5, rng);
  CHECK(bitwise_equal(leaky_relu(r, 1.0f), r));  // slope 1 is the identity
}

TEST_CASE("concat_channels layout") {
  std::mt19937 rng(6);
  auto a = oracle::random_tensor<float>(1, 32, 4, 5, rng);
  auto b = oracle::random_tensor<float>(1, 53, 4, 5, rng);
  auto c = oracle::random_tensor<float>(1, 2, 4, 5, rng);
  auto out = concat_channels<float>({&a, &b, &c});
  CHECK(out.shape() == Shape4{1, 87, 4, 5});
  for (Index i = 0; i < 4 * 5; ++i) {
    CHECK(out.plane(0, 0)[i] == a.plane(0, 0)[i]);
    CHECK(out.plane(0, 33)[i] == b.plane(0, 1)[i]);
    CHECK(out.plane(0, 85)[i] == c.plane(0, 0)[i]);
  }
  auto single = concat_channels<float>({&a});
  CHECK(bitwise_equal(single, a));

  Tensor4<float> bad(1, 2, 3, 5);
  CHECK_THROWS_AS(concat_channels<float>({&a, &bad}), std::invalid_argument);
}

TEST_CASE("bilinear_resize identity, constants, and formula oracle") {
  std::mt19937 rng(8);
  auto r = oracle::random_tensor<float>(2, 3, 6, 9, rng);
  CHECK(bitwise_equal(bilinear_resize(r, 6, 9), r));

  Tensor4<float> c(1, 2, 4, 4);
  c.flat().setConstant(3.25f);
  CHECK((bilinear_resize(c, 7, 13).flat() == 3.25f).all());

  Tensor4<float> t(1, 1, 2, 2);
  t(0, 0, 0, 0) = 0;
  t(0, 0, 0, 1) = 1;
  t(0, 0, 1, 0) = 2;
  t(0, 0, 1, 1) = 3;
  auto up = bilinear_resize(t, 4, 4);
  auto want = oracle::bilinear_resize_ref(t, 4, 4);
  CHECK(max_abs_diff(up, want) < 1e-6f);
  // hand-evaluated: dst (1,1) samples src (0.25, 0.25) ->
  // 0.75*(0.75*0 + 0.25*1) + 0.25*(0.75*2 + 0.25*3) = 0.75
  CHECK(up(0, 0, 1, 1) == doctest::Approx(0.75).epsilon(1e-6));

  auto down = bilinear_resize(oracle::random_tensor<float>(1, 2, 8, 8, rng), 4, 4);
  CHECK(down.shape() == Shape4{1, 2, 4, 4});
}

TEST_CASE("bilinear upsample then avgpool preserves constants") {
  Tensor4<float> c(1, 5, 6, 6);
  c.flat().setConstant(-1.5f);
  auto out = avgpool2(bilinear_resize(c, 12, 12));
  CHECK((out.flat() == -1.5f).all());
}

TEST_CASE("leaky_relu backward passes positive gradients through") {
  Tensor4<double> x(1, 1, 1, 3);
  x(0, 0, 0, 0) = 2.0;
  x(0, 0, 0, 1) = -3.0;
  x(0, 0, 0, 2) = 0.5;
  Tensor4<double> g(1, 1, 1, 3);
  g.flat().setConstant(1.0);
  auto gin = leaky_relu_backward(g, x, 0.1);
  CHECK(gin(0, 0, 0, 0) == 1.0);
  CHECK(gin(0, 0, 0, 1) == 0.1);
  CHECK(gin(0, 0, 0, 2) == 1.0);
}

TEST_CASE("avgpool2 backward spreads g/4") {
  Tensor4<double> g(1, 1, 1, 1);
  g(0, 0, 0, 0) = 8.0;
  auto gin = avgpool2_backward(g, Shape4{1, 1, 2, 2});
  CHECK((gin.flat() == 2.0).all());
}

TEST_CASE("conv2d weight gradient matches finite differences") {
  std::mt19937 rng(21);
  auto in = oracle::random_tensor<double>(1, 3, 5, 5, rng);
  auto w = oracle::random_tensor<double>(4, 3, 3, 3, rng);
  auto s = spec(3, 4, 3, 1, 1, 1, true);
  Vec<double> b = Vec<double>::Random(4);
  auto gout = oracle::random_tensor<double>(1, 4, 5, 5, rng);

  auto grads = conv2d_backward(gout, in, w, s);
  auto loss = [&]() { return (conv2d(in, w, b, s).flat() * gout.flat()).sum(); };

  double max_rel = 0;
  for (Index i = 0; i < w.size(); i += 7) {
    const double fd = oracle::central_diff(loss, w.data() + i);
    max_rel = std::max(max_rel, oracle::rel_err(fd, grads.weights.data()[i]));
  }
  for (Index i = 0; i < b.size(); ++i) {
    const double fd = oracle::central_diff(loss, b.data() + i);
    max_rel = std::max(max_rel, oracle::rel_err(fd, grads.bias[i]));
  }
  for (Index i = 0; i < in.size(); i += 11) {
    const double fd = oracle::central_diff(loss, in.data() + i);
    max_rel = std::max(max_rel, oracle::rel_err(fd, grads.input.data()[i]));
  }
  CHECK(max_rel < 1e-3);
}

// Dot-product (adjoint) test: <g, J dx> == <J^T g, dx> for every kernel.
TEST_CASE("forward/backward dot-product consistency") {
  std::mt19937 rng(31);

  auto dot_check = [&](auto&& fwd, auto&& bwd, Tensor4<double>& x) {
    auto y = fwd(x);
    auto g = oracle::random_tensor<double>(y.batch(), y.channels(), y.height(), y.width(),
                                           rng);
    auto gx = bwd(g, x);
    auto dx = oracle::random_tensor<double>(x.batch(), x.channels(), x.height(), x.width(),
                                            rng, -1e-3, 1e-3);
    Tensor4<double> xp = x;
    xp.flat() += dx.flat();
    Tensor4<double> xm = x;
    xm.flat() -= dx.flat();
    const double numeric = ((fwd(xp).flat() - fwd(xm).flat()) * g.flat()).sum() / 2.0;
    const double analytic = (gx.flat() * dx.flat()).sum();
    CHECK(oracle::rel_err(numeric, analytic) < 1e-4);
  };

  SUBCASE("conv2d") {
    auto x = oracle::random_tensor<double>(1, 4, 6, 6, rng);
    auto w = oracle::random_tensor<double>(6, 2, 3, 3, rng);
    auto s = spec(4, 6, 3, 2, 1, 2);
    dot_check([&](const auto& t) { return conv2d(t, w, Vec<double>(), s); },
              [&](const auto& g, const auto& t) {
                return conv2d_backward(g, t, w, s).input;
              },
              x);
  }
  SUBCASE("deconv2d") {
    auto x = oracle::random_tensor<double>(1, 2, 5, 5, rng);
    auto w = oracle::random_tensor<double>(2, 2, 4, 4, rng);
    auto s = spec(2, 2, 4, 2, 1);
    dot_check([&](const auto& t) { return deconv2d(t, w, Vec<double>(), s); },
              [&](const auto& g, const auto& t) {
                return deconv2d_backward(g, t, w, s).input;
              },
              x);
  }
  SUBCASE("avgpool2") {
    auto x = oracle::random_tensor<double>(1, 3, 6, 6, rng);
    dot_check([&](const auto& t) { return avgpool2(t); },
              [&](const auto& g, const auto& t) {
                return avgpool2_backward(g, t.shape());
              },
              x);
  }
  SUBCASE("leaky_relu") {
    auto x = oracle::random_tensor<double>(1, 3, 6, 6, rng);
    dot_check([&](const auto& t) { return leaky_relu(t, 0.1); },
              [&](const auto& g, const auto& t) {
                return leaky_relu_backward(g, t, 0.1);
              },
              x);
  }
  SUBCASE("bilinear_resize") {
    auto x = oracle::random_tensor<double>(1, 3, 6, 6, rng);
    dot_check([&](const auto& t) { return bilinear_resize(t, 9, 14); },
              [&](const auto& g, const auto& t) {
                return bilinear_resize_backward(g, t.shape());
              },
              x);
  }
}

TEST_CASE("concat backward splits gradients") {
  std::mt19937 rng(41);
  auto g = oracle::random_tensor<double>(2, 7, 3, 3, rng);
  auto parts = concat_channels_backward(g, {3, 4});
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].shape() == Shape4{2, 3, 3, 3});
  CHECK(parts[1].shape() == Shape4{2, 4, 3, 3});
  CHECK(parts[1](1, 0, 2, 2) == g(1, 3, 2, 2));
}
