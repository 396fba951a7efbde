#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tcprune/ops.hpp"
#include "tcprune/params.hpp"
#include "tcprune/autograd.hpp"
#include "tcprune/tensor.hpp"
#include "tcprune/threads.hpp"

using namespace tcprune;

namespace {

TensorD randn(std::vector<std::int64_t> shape, std::uint64_t seed, double scale = 1.0) {
  TensorD t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values) v = d(rng);
  return t;
}

// Reference convolution written as the literal definition: for every output
// element, sum x[n,ci,h0+kh,w0+kw] * w[co,ci,kh,kw] over the window, plus bias.
// No shared loop structure with the production kernel.
TensorD conv_ref(const TensorD& x, const TensorD& w, const TensorD& b, int stride, int padding) {
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), K = w.dim(2);
  const std::int64_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - K) / stride + 1;
  TensorD y({N, Cout, Ho, Wo});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          double acc = b.values[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t kh = 0; kh < K; ++kh)
              for (std::int64_t kw = 0; kw < K; ++kw) {
                const std::int64_t h = oh * stride - padding + kh;
                const std::int64_t ww = ow * stride - padding + kw;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                acc += x.at4(n, ci, h, ww) * w.at4(co, ci, kh, kw);
              }
          y.at4(n, co, oh, ow) = acc;
        }
  return y;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST_CASE("conv output dimension formula") {
  CHECK(conv_out_dim(8, 3, 1, 1) == 8);
  CHECK(conv_out_dim(8, 3, 1, 0) == 6);
  CHECK(conv_out_dim(8, 2, 2, 0) == 4);
  CHECK(conv_out_dim(7, 3, 2, 1) == 4);
  CHECK(conv_out_dim(1, 1, 1, 0) == 1);
}

TEST_CASE("conv forward hand case: all-ones 3x3 input, all-ones kernel, padding 1") {
  TensorD x = TensorD::full({1, 1, 3, 3}, 1.0);
  TensorD w = TensorD::full({1, 1, 3, 3}, 1.0);
  TensorD b = TensorD::zeros({1});
  TensorD y = conv2d_forward(x, w, b, 1, 1);
  REQUIRE(y.shape == std::vector<std::int64_t>{1, 1, 3, 3});
  CHECK(y.at4(0, 0, 1, 1) == doctest::Approx(9.0));   // full window
  CHECK(y.at4(0, 0, 0, 0) == doctest::Approx(4.0));   // corner sees 2x2
  CHECK(y.at4(0, 0, 0, 1) == doctest::Approx(6.0));   // edge sees 2x3
}

TEST_CASE("conv forward with zero weights gives zero output") {
  TensorD x = randn({2, 3, 5, 5}, 7);
  TensorD w = TensorD::zeros({4, 3, 3, 3});
  TensorD b = TensorD::zeros({4});
  TensorD y = conv2d_forward(x, w, b, 1, 1);
  for (double v : y.values) CHECK(v == 0.0);
}

TEST_CASE("conv forward matches reference over assorted geometries") {
  struct Cfg { std::int64_t n, cin, h, w, cout; int k, stride, pad; };
  const Cfg cfgs[] = {
      {2, 3, 8, 8, 5, 3, 1, 1},
      {1, 4, 7, 9, 2, 3, 2, 1},
      {3, 1, 5, 5, 4, 1, 1, 0},
      {2, 2, 6, 6, 3, 3, 1, 0},
      {1, 5, 9, 7, 6, 3, 2, 2},
      {2, 3, 4, 4, 2, 2, 2, 0},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cfgs) {
    CAPTURE(c.k); CAPTURE(c.stride); CAPTURE(c.pad);
    TensorD x = randn({c.n, c.cin, c.h, c.w}, seed++);
    TensorD w = randn({c.cout, c.cin, c.k, c.k}, seed++);
    TensorD b = randn({c.cout}, seed++);
    CHECK(max_abs_diff(conv2d_forward(x, w, b, c.stride, c.pad),
                       conv_ref(x, w, b, c.stride, c.pad)) < 1e-12);
  }
}

TEST_CASE("conv backward matches central finite differences") {
  TensorD x = randn({2, 3, 6, 6}, 41, 0.5);
  TensorD w = randn({4, 3, 3, 3}, 42, 0.5);
  TensorD b = randn({4}, 43, 0.5);
  const int stride = 2, pad = 1;
  // Scalar loss: weighted sum of outputs with fixed random weights.
  TensorD r = randn(conv2d_forward(x, w, b, stride, pad).shape, 44);
  auto loss = [&](const TensorD& xx, const TensorD& ww, const TensorD& bb) {
    TensorD y = conv2d_forward(xx, ww, bb, stride, pad);
    double s = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) s += y.values[i] * r.values[i];
    return s;
  };
  Conv2dGrads<double> g = conv2d_backward(x, w, r, stride, pad);

  const double eps = 1e-6;
  auto fd = [&](TensorD& t, std::size_t i) {
    const double keep = t.values[i];
    t.values[i] = keep + eps;
    const double hi = loss(x, w, b);
    t.values[i] = keep - eps;
    const double lo = loss(x, w, b);
    t.values[i] = keep;
    return (hi - lo) / (2 * eps);
  };
  std::mt19937_64 pick(45);
  for (int trial = 0; trial < 24; ++trial) {
    std::size_t ix = pick() % x.values.size();
    std::size_t iw = pick() % w.values.size();
    CHECK(g.dx.values[ix] == doctest::Approx(fd(x, ix)).epsilon(1e-5));
    CHECK(g.dw.values[iw] == doctest::Approx(fd(w, iw)).epsilon(1e-5));
  }
  for (std::size_t ib = 0; ib < b.values.size(); ++ib)
    CHECK(g.db.values[ib] == doctest::Approx(fd(b, ib)).epsilon(1e-5));
}

TEST_CASE("fully connected forward and backward") {
  // y = x.w^T + b with x [2,3], w [2,3]
  TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD w({2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  TensorD b({2}, {10, -10});
  TensorD y = fc_forward(x, w, b);
  REQUIRE(y.shape == std::vector<std::int64_t>{2, 2});
  CHECK(y.at2(0, 0) == doctest::Approx(1 * 1 + 2 * 0 + 3 * -1 + 10));
  CHECK(y.at2(0, 1) == doctest::Approx(0.5 * (1 + 2 + 3) - 10));
  CHECK(y.at2(1, 0) == doctest::Approx(4 - 6 + 10));
  CHECK(y.at2(1, 1) == doctest::Approx(0.5 * 15 - 10));

  // Single-neuron analytic case: y = w*a, w=2, a=3, upstream grad 1.
  TensorD a1({1, 1}, {3});
  TensorD w1({1, 1}, {2});
  TensorD b1({1}, {0});
  TensorD dy1({1, 1}, {1});
  FcGrads<double> g1 = fc_backward(a1, w1, dy1);
  CHECK(g1.dx.at2(0, 0) == doctest::Approx(2.0));
  CHECK(g1.dw.at2(0, 0) == doctest::Approx(3.0));
  CHECK(g1.db.values[0] == doctest::Approx(1.0));

  // Random case vs finite differences.
  TensorD xr = randn({3, 4}, 50);
  TensorD wr = randn({2, 4}, 51);
  TensorD br = randn({2}, 52);
  TensorD rr = randn({3, 2}, 53);
  auto loss = [&]() {
    TensorD yy = fc_forward(xr, wr, br);
    double s = 0;
    for (std::size_t i = 0; i < yy.values.size(); ++i) s += yy.values[i] * rr.values[i];
    return s;
  };
  FcGrads<double> gr = fc_backward(xr, wr, rr);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < wr.values.size(); ++i) {
    const double keep = wr.values[i];
    wr.values[i] = keep + eps; const double hi = loss();
    wr.values[i] = keep - eps; const double lo = loss();
    wr.values[i] = keep;
    CHECK(gr.dw.values[i] == doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("relu forward and dead-zone backward") {
  TensorD x({1, 1, 1, 4}, {-2, -0.5, 0, 3});
  TensorD y = relu_forward(x);
  CHECK(y.values == std::vector<double>{0, 0, 0, 3});
  TensorD dy = TensorD::full({1, 1, 1, 4}, 1.0);
  TensorD dx = relu_backward(x, dy);
  CHECK(dx.values[0] == 0.0);   // negative pre-activation blocks the gradient
  CHECK(dx.values[1] == 0.0);
  CHECK(dx.values[3] == 1.0);
}

TEST_CASE("max pooling forward picks window maxima and routes gradients back") {
  TensorD x({1, 1, 4, 4}, {1, 2, 5, 4,
                           3, 8, 6, 7,
                           0, 1, 2, 1,
                           9, 1, 0, 3});
  TensorD y = maxpool_forward(x, 2, 2);
  REQUIRE(y.shape == std::vector<std::int64_t>{1, 1, 2, 2});
  CHECK(y.at4(0, 0, 0, 0) == 8.0);
  CHECK(y.at4(0, 0, 0, 1) == 7.0);
  CHECK(y.at4(0, 0, 1, 0) == 9.0);
  CHECK(y.at4(0, 0, 1, 1) == 3.0);

  TensorD dy({1, 1, 2, 2}, {10, 20, 30, 40});
  TensorD dx = maxpool_backward(x, dy, 2, 2);
  CHECK(dx.at4(0, 0, 1, 1) == 10.0);  // the 8
  CHECK(dx.at4(0, 0, 1, 3) == 20.0);  // the 7
  CHECK(dx.at4(0, 0, 3, 0) == 30.0);  // the 9
  CHECK(dx.at4(0, 0, 3, 3) == 40.0);  // the 3
  CHECK(dx.at4(0, 0, 0, 0) == 0.0);   // losers get nothing
  double sum = 0;
  for (double v : dx.values) sum += v;
  CHECK(sum == doctest::Approx(100.0));
}

TEST_CASE("average pooling, windowed and global") {
  TensorD x({1, 1, 4, 4}, {1, 2, 5, 4,
                           3, 8, 6, 7,
                           0, 1, 2, 1,
                           9, 1, 0, 3});
  TensorD y = avgpool_forward(x, 2, 2);
  CHECK(y.at4(0, 0, 0, 0) == doctest::Approx((1 + 2 + 3 + 8) / 4.0));
  CHECK(y.at4(0, 0, 1, 1) == doctest::Approx((2 + 1 + 0 + 3) / 4.0));

  // kernel 0 pools everything to 1x1
  TensorD g = avgpool_forward(x, 0, 1);
  REQUIRE(g.shape == std::vector<std::int64_t>{1, 1, 1, 1});
  double mean = 0;
  for (double v : x.values) mean += v;
  mean /= 16.0;
  CHECK(g.at4(0, 0, 0, 0) == doctest::Approx(mean));

  // Global-average backward spreads the gradient uniformly.
  TensorD dyg({1, 1, 1, 1}, {16.0});
  TensorD dxg = avgpool_backward(x, dyg, 0, 1);
  for (double v : dxg.values) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("flatten keeps values in row-major order and inverts cleanly") {
  TensorD x = randn({2, 3, 2, 2}, 60);
  TensorD y = flatten_forward(x);
  REQUIRE(y.shape == std::vector<std::int64_t>{2, 12});
  CHECK(y.values == x.values);
  TensorD dx = flatten_backward(x, y);
  CHECK(dx.shape == x.shape);
  CHECK(dx.values == x.values);
}

TEST_CASE("batch norm train mode standardizes, eval mode uses running stats") {
  TensorD x = randn({4, 3, 5, 5}, 70, 2.0);
  for (auto& v : x.values) v += 1.5;  // nonzero mean so the test is not vacuous
  TensorD gamma = TensorD::full({3}, 1.0);
  TensorD beta = TensorD::zeros({3});
  TensorD rm = TensorD::zeros({3});
  TensorD rv = TensorD::full({3}, 1.0);

  BnForwardResult<double> r = bn_forward(x, gamma, beta, rm, rv, true, true);
  const std::int64_t per_channel = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t h = 0; h < 5; ++h)
        for (std::int64_t w = 0; w < 5; ++w) mean += r.y.at4(n, c, h, w);
    mean /= per_channel;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t h = 0; h < 5; ++h)
        for (std::int64_t w = 0; w < 5; ++w) {
          const double d = r.y.at4(n, c, h, w) - mean;
          var += d * d;
        }
    var /= per_channel;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator shifts it slightly

    // Running stats folded with momentum 0.1 and unbiased batch variance.
    const double unbiased = r.batch_var.values[c] * per_channel / double(per_channel - 1);
    CHECK(rm.values[c] == doctest::Approx(0.1 * r.batch_mean.values[c]));
    CHECK(rv.values[c] == doctest::Approx(0.9 * 1.0 + 0.1 * unbiased));
  }

  // Eval mode is an exact affine map through the provided running stats.
  TensorD gamma2({3}, {2.0, 1.0, 0.5});
  TensorD beta2({3}, {0.0, -1.0, 3.0});
  BnForwardResult<double> e = bn_forward(x, gamma2, beta2, rm, rv, false, false);
  std::mt19937_64 pick(71);
  for (int t = 0; t < 20; ++t) {
    const std::int64_t n = pick() % 4, c = pick() % 3, h = pick() % 5, w = pick() % 5;
    const double want = gamma2.values[c] * (x.at4(n, c, h, w) - rm.values[c]) /
                            std::sqrt(rv.values[c] + kBnEps) +
                        beta2.values[c];
    CHECK(e.y.at4(n, c, h, w) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("batch norm backward agrees with finite differences in both modes") {
  TensorD x = randn({3, 2, 4, 4}, 80);
  TensorD gamma({2}, {1.3, 0.7});
  TensorD beta({2}, {0.2, -0.4});
  TensorD rm({2}, {0.3, -0.1});
  TensorD rv({2}, {1.5, 0.8});
  TensorD r = randn({3, 2, 4, 4}, 81);

  for (bool train : {true, false}) {
    CAPTURE(train);
    auto loss = [&]() {
      TensorD m = rm, v = rv;  // keep the originals pristine
      BnForwardResult<double> out = bn_forward(x, gamma, beta, m, v, train, false);
      double s = 0;
      for (std::size_t i = 0; i < out.y.values.size(); ++i) s += out.y.values[i] * r.values[i];
      return s;
    };
    TensorD m = rm, v = rv;
    BnForwardResult<double> out = bn_forward(x, gamma, beta, m, v, train, false);
    BnGrads<double> g = bn_backward(x, gamma, out.batch_mean, out.batch_var, rm, rv, r, train);

    const double eps = 1e-6;
    std::mt19937_64 pick(82);
    for (int t = 0; t < 16; ++t) {
      std::size_t i = pick() % x.values.size();
      const double keep = x.values[i];
      x.values[i] = keep + eps; const double hi = loss();
      x.values[i] = keep - eps; const double lo = loss();
      x.values[i] = keep;
      CHECK(g.dx.values[i] == doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-4));
    }
    for (std::size_t i = 0; i < 2; ++i) {
      double keep = gamma.values[i];
      gamma.values[i] = keep + eps; const double hi = loss();
      gamma.values[i] = keep - eps; const double lo = loss();
      gamma.values[i] = keep;
      CHECK(g.dgamma.values[i] == doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-5));
      keep = beta.values[i];
      beta.values[i] = keep + eps; const double bhi = loss();
      beta.values[i] = keep - eps; const double blo = loss();
      beta.values[i] = keep;
      CHECK(g.dbeta.values[i] == doctest::Approx((bhi - blo) / (2 * eps)).epsilon(1e-5));
    }
  }
}

TEST_CASE("residual add is elementwise") {
  TensorD a({1, 2, 1, 1}, {1, 2});
  TensorD b({1, 2, 1, 1}, {10, 20});
  TensorD y = add_forward(a, b);
  CHECK(y.values == std::vector<double>{11, 22});
}

TEST_CASE("sgd step arithmetic") {
  SUBCASE("zero gradient leaves the weight alone") {
    ParameterStoreD p;
    p.put("w", TensorD({1}, {1.0}));
    GradientSetD g;
    g.param_grads["w"] = TensorD({1}, {0.0});
    SgdOptimizerD opt(0.5, 0.9);
    opt.step(p, g);
    CHECK(p.at("w").values[0] == 1.0);
  }
  SUBCASE("single plain step: w=1, grad=0.5, lr=0.1 gives 0.95") {
    ParameterStoreD p;
    p.put("w", TensorD({1}, {1.0}));
    GradientSetD g;
    g.param_grads["w"] = TensorD({1}, {0.5});
    SgdOptimizerD opt(0.1, 0.0);
    opt.step(p, g);
    CHECK(p.at("w").values[0] == doctest::Approx(0.95));
  }
  SUBCASE("momentum builds up: deltas -0.1 then -0.19") {
    ParameterStoreD p;
    p.put("w", TensorD({1}, {1.0}));
    GradientSetD g;
    g.param_grads["w"] = TensorD({1}, {1.0});
    SgdOptimizerD opt(0.1, 0.9);
    opt.step(p, g);
    CHECK(p.at("w").values[0] == doctest::Approx(0.9));
    opt.step(p, g);
    CHECK(p.at("w").values[0] == doctest::Approx(0.9 - 0.19));
  }
  SUBCASE("non-trainable entries are never touched") {
    ParameterStoreD p;
    p.put("stat", TensorD({1}, {5.0}), false);
    GradientSetD g;
    g.param_grads["stat"] = TensorD({1}, {100.0});
    SgdOptimizerD opt(0.1, 0.0);
    opt.step(p, g);
    CHECK(p.at("stat").values[0] == 5.0);
  }
}

TEST_CASE("tensor shape guards") {
  CHECK_THROWS_AS(checked_numel({0}), format_error);
  CHECK_THROWS_AS(checked_numel({-3, 2}), format_error);
  CHECK_THROWS_AS(checked_numel({std::int64_t(1) << 31, std::int64_t(1) << 31}), format_error);
  CHECK_THROWS_AS(checked_numel({std::int64_t(1) << 62}), format_error);
  CHECK(checked_numel({4, 3, 2}) == 24);
  CHECK_THROWS_AS(TensorD({2, 2}, {1.0, 2.0, 3.0}), structural_error);
}

TEST_CASE("seed mixing separates streams and indices") {
  const auto a = mix_seed(1, "alpha");
  CHECK(a == mix_seed(1, "alpha"));            // stable
  CHECK(a != mix_seed(2, "alpha"));            // base matters
  CHECK(a != mix_seed(1, "beta"));             // stream matters
  CHECK(a != mix_seed(1, "alpha", 1));         // index matters
  CHECK(mix_seed(3, "x", 7) == mix_seed(3, "x", 7));
}

TEST_CASE("parallel_for covers every index exactly once") {
  const std::int64_t n = 1013;  // deliberately not a multiple of anything
  std::vector<int> hits(n, 0);
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) hits[static_cast<std::size_t>(i)]++;
  });
  for (int h : hits) CHECK(h == 1);
  // Zero-length range is a no-op, not a crash.
  parallel_for(0, [&](std::int64_t, std::int64_t) { CHECK(false); });
}
