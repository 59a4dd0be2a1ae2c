#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "transclaw/gradcheck.hpp"
#include "transclaw/nn.hpp"

using namespace transclaw;
using tctest::leaf;
using tctest::random_tensor;

namespace {

std::vector<double> vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

// Direct 6-loop cross-correlation over (co, oy, ox, ci, ky, kx).
std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                const Tensor<double>& bias, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), k = w.dim(2);
  const std::size_t OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(B * O * OH * OW);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                s += x.values()[((b * C + c) * H + iy) * W + ix] *
                     w.values()[((o * C + c) * k + ky) * k + kx];
              }
          out[((b * O + o) * OH + oy) * OW + ox] = s + bias.values()[o];
        }
  return out;
}

// Multiples of 1/16 in [-4, 4]: products and short sums stay exact in doubles.
Tensor<double> dyadic_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(-64, 64);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng) / 16.0;
  return Tensor<double>(std::move(shape), std::move(v));
}

Conv2dParams<double> conv_params(Tensor<double> w, Tensor<double> b, std::size_t stride,
                                 std::size_t pad) {
  Conv2dParams<double> p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

}  // namespace

TEST(Conv2d, OneByOneIdentity) {
  const auto x = random_tensor<double>({2, 1, 4, 5}, 1);
  const auto y = conv2d(x, conv_params(Tensor<double>({1, 1, 1, 1}, {1}),
                                       Tensor<double>::zeros({1}), 1, 0));
  EXPECT_EQ(vec(y), vec(x));
}

TEST(Conv2d, AllOnesKernelOnOnes) {
  const auto y = conv2d(Tensor<double>::full({1, 1, 3, 3}, 1),
                        conv_params(Tensor<double>::full({1, 1, 3, 3}, 1),
                                    Tensor<double>::zeros({1}), 1, 1));
  EXPECT_EQ(vec(y), (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, ZeroWeightGivesBias) {
  const auto x = random_tensor<double>({1, 2, 5, 5}, 2);
  const auto y = conv2d(x, conv_params(Tensor<double>::zeros({3, 2, 3, 3}),
                                       Tensor<double>({3}, {0.5, -1, 2}), 1, 1));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 25; ++i)
      EXPECT_EQ(y.values()[c * 25 + i], (std::vector<double>{0.5, -1, 2})[c]);
}

TEST(Conv2d, MatchesSixLoopOracleExactly) {
  const std::size_t cases[][5] = {
      // B, C_in, C_out, k, H
      {2, 3, 4, 3, 8}, {1, 3, 2, 1, 8}, {2, 2, 3, 3, 5}, {1, 1, 1, 3, 3}, {2, 3, 5, 2, 6},
  };
  std::uint64_t seed = 0;
  for (const auto& c : cases) {
    for (std::size_t stride : {1, 2}) {
      for (std::size_t pad : {0, 1}) {
        if (c[4] + 2 * pad < c[3]) continue;
        const auto x = dyadic_tensor({c[0], c[1], c[4], c[4]}, ++seed);
        const auto w = dyadic_tensor({c[2], c[1], c[3], c[3]}, ++seed);
        const auto b = dyadic_tensor({c[2]}, ++seed);
        const auto y = conv2d(x, conv_params(w, b, stride, pad));
        EXPECT_EQ(vec(y), conv_oracle(x, w, b, stride, pad))
            << "k=" << c[3] << " stride=" << stride << " pad=" << pad;
      }
    }
  }
}

TEST(Conv2d, MatchesOracleOnRealInputs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = random_tensor<double>({2, 3, 8, 8}, seed);
    const auto w = random_tensor<double>({4, 3, 3, 3}, seed + 50);
    const auto b = random_tensor<double>({4}, seed + 99);
    const auto got = vec(conv2d(x, conv_params(w, b, 1, 1)));
    const auto want = conv_oracle(x, w, b, 1, 1);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(Conv2d, Errors) {
  const auto x = Tensor<double>::zeros({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, conv_params(Tensor<double>::zeros({1, 3, 3, 3}),
                                     Tensor<double>::zeros({1}), 1, 1)),
               DimensionError);
  EXPECT_THROW(conv2d(x, conv_params(Tensor<double>::zeros({1, 2, 7, 7}),
                                     Tensor<double>::zeros({1}), 1, 1)),
               DimensionError);
}

TEST(Conv2d, GradientsPassFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = random_tensor<double>({2, 2, 5, 5}, seed).set_requires_grad(true);
    auto p = conv_params(random_tensor<double>({3, 2, 3, 3}, seed + 1000),
                         random_tensor<double>({3}, seed + 2000), 1 + seed % 2, seed % 3 == 0 ? 0 : 1);
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    const auto y0 = conv2d(x, p);
    Tape<double>::current().reset();
    const auto r = random_tensor<double>(y0.shape(), seed + 3000);
    const double err =
        finite_diff_check([&] { return sum(mul(conv2d(x, p), r)); }, {x, p.weight, p.bias});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(MaxPool, Examples) {
  EXPECT_EQ(vec(maxpool2d(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}))), (std::vector<double>{4}));
  EXPECT_THROW(maxpool2d(Tensor<double>::zeros({1, 1, 3, 4})), DimensionError);
}

TEST(MaxPool, ConstantInputRoutesGradientToFirstElement) {
  auto x = Tensor<double>::full({1, 1, 4, 4}, 2.0).set_requires_grad(true);
  const auto y = maxpool2d(x);
  for (double v : y.values()) EXPECT_EQ(v, 2.0);
  backward(sum(y));
  const std::vector<double> want{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), want);
}

TEST(MaxPool, RandomMatchesScanOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = random_tensor<double>({2, 3, 4, 4}, seed);
    const auto y = maxpool2d(x);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t oy = 0; oy < 2; ++oy)
        for (std::size_t ox = 0; ox < 2; ++ox) {
          double m = -1e300;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              m = std::max(m, x.values()[p * 16 + (2 * oy + dy) * 4 + 2 * ox + dx]);
          EXPECT_EQ(y.values()[p * 4 + oy * 2 + ox], m);
        }
  }
}

TEST(MaxPool, CommutesWithConstantShift) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = random_tensor<double>({1, 2, 6, 6}, seed);
    const double c = 0.5 + static_cast<double>(seed);
    EXPECT_EQ(vec(maxpool2d(add_scalar(x, c))), vec(add_scalar(maxpool2d(x), c)));
  }
}

TEST(AvgPool, MeanOfWindows) {
  const auto y = avg_pool2d(Tensor<double>({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), 2);
  EXPECT_EQ(vec(y), (std::vector<double>{3.5, 5.5}));
  EXPECT_THROW(avg_pool2d(Tensor<double>::zeros({1, 1, 3, 4}), 2), DimensionError);
}

TEST(Upsample, ConstantsArePreserved) {
  const auto y = upsample_bilinear2x(Tensor<double>::full({1, 2, 3, 3}, 1.75));
  ASSERT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.75);
  const auto single = upsample_bilinear2x(Tensor<double>({1, 1, 1, 1}, {-3}));
  EXPECT_EQ(vec(single), (std::vector<double>{-3, -3, -3, -3}));
}

TEST(Upsample, BilinearWeights) {
  const auto y = upsample_bilinear2x(Tensor<double>({1, 1, 1, 2}, {0, 1}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  const std::vector<double> row{0, 0.25, 0.75, 1};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.values()[r * 4 + i], row[i]);
}

TEST(Upsample, NearestRepeats) {
  const auto y = upsample(Tensor<double>({1, 1, 1, 2}, {5, 7}), 2, UpsampleMode::kNearest);
  EXPECT_EQ(vec(y), (std::vector<double>{5, 5, 7, 7, 5, 5, 7, 7}));
}

TEST(BatchNorm, ConstantChannelNormalisesToZero) {
  auto p = NormParams<double>::identity(2, true);
  const auto y = batch_norm2d(Tensor<double>::full({2, 2, 3, 3}, 4.0), p, true);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  auto p = NormParams<double>::identity(3, true);
  p.gamma = Tensor<double>::zeros({3});
  p.beta = Tensor<double>({3}, {1, -2, 0.5});
  const auto y = batch_norm2d(random_tensor<double>({2, 3, 2, 2}, 3), p, true);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(y.values()[(b * 3 + c) * 4 + i], p.beta.values()[c]);
}

TEST(BatchNorm, TwoValuesNormaliseToPlusMinusOne) {
  auto p = NormParams<double>::identity(1, true);
  p.eps = 1e-14;
  const auto y = batch_norm2d(Tensor<double>({1, 1, 1, 2}, {1, 3}), p, true);
  EXPECT_NEAR(y.values()[0], -1.0, 1e-12);
  EXPECT_NEAR(y.values()[1], 1.0, 1e-12);
}

TEST(BatchNorm, TrainingMoments) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = NormParams<double>::identity(3, true);
    const auto x = random_tensor<double>({4, 3, 5, 5}, seed, -2, 7);
    const auto y = batch_norm2d(x, p, true);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i) m += y.values()[(b * 3 + c) * 25 + i];
      m /= 100;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i) {
          const double d = y.values()[(b * 3 + c) * 25 + i] - m;
          v += d * d;
        }
      v /= 100;
      EXPECT_LT(std::abs(m), 1e-5);
      EXPECT_NEAR(v, 1.0, 1e-4);
    }
  }
}

TEST(BatchNorm, RunningStatisticsAndInference) {
  auto p = NormParams<double>::identity(1, true);
  const Tensor<double> x({2, 1, 1, 2}, {1, 2, 3, 6});
  batch_norm2d(x, p, true);
  // mean 3, unbiased variance 14/3
  EXPECT_NEAR(p.running_mean.values()[0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(p.running_var.values()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);

  const auto y = batch_norm2d(x, p, false);
  const double rm = p.running_mean.values()[0], rv = p.running_var.values()[0];
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.values()[i], (x.values()[i] - rm) / std::sqrt(rv + 1e-5), 1e-12);
  }
  EXPECT_EQ(p.running_mean.values()[0], rm);
}

TEST(BatchNorm, SingleValuePerChannelRejectedInTraining) {
  auto p = NormParams<double>::identity(2, true);
  EXPECT_THROW(batch_norm2d(Tensor<double>::zeros({1, 2, 1, 1}), p, true), DimensionError);
  EXPECT_NO_THROW(batch_norm2d(Tensor<double>::zeros({1, 2, 1, 1}), p, false));
}

TEST(LayerNorm, Examples) {
  auto p = NormParams<double>::identity(4, false);
  const auto flat = layer_norm(Tensor<double>::full({3, 4}, 2.5), p);
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);

  auto q = NormParams<double>::identity(2, false);
  q.eps = 1e-14;
  const auto y = layer_norm(Tensor<double>({1, 2}, {1, -1}), q);
  EXPECT_NEAR(y.values()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.values()[1], -1.0, 1e-12);
}

TEST(LayerNorm, TokenMeanEqualsBetaMean) {
  auto p = NormParams<double>::identity(6, false);
  p.beta = random_tensor<double>({6}, 2);
  double beta_mean = 0;
  for (double b : p.beta.values()) beta_mean += b / 6;
  const auto y = layer_norm(random_tensor<double>({2, 5, 6}, 3, -4, 4), p);
  for (std::size_t t = 0; t < 10; ++t) {
    double m = 0;
    for (std::size_t d = 0; d < 6; ++d) m += y.values()[t * 6 + d] / 6;
    EXPECT_NEAR(m, beta_mean, 1e-6);
  }
}

TEST(Linear, IdentityAndZeroWeight) {
  const auto x = random_tensor<double>({2, 3, 4}, 5);
  LinearParams<double> id{Tensor<double>({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}),
                          Tensor<double>::zeros({4})};
  EXPECT_EQ(vec(linear(x, id)), vec(x));
  LinearParams<double> zero{Tensor<double>::zeros({4, 2}), Tensor<double>({2}, {3, -1})};
  const auto y = linear(x, zero);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 2}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(y.values()[2 * i], 3);
    EXPECT_EQ(y.values()[2 * i + 1], -1);
  }
}

TEST(Linear, MatchesMatmulPlusBias) {
  const auto x = random_tensor<double>({5, 3}, 6);
  LinearParams<double> p{random_tensor<double>({3, 4}, 7), random_tensor<double>({4}, 8)};
  const auto y = linear(x, p);
  const auto xw = matmul(x, p.weight);
  const auto ones = Tensor<double>::full({5, 1}, 1.0);
  const auto composed = add(xw, matmul(ones, reshape(p.bias, {1, 4})));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(y.values()[i], composed.values()[i], 1e-14);
}

TEST(Activation, Relu) {
  EXPECT_EQ(vec(relu(Tensor<double>({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  auto x = leaf<double>({3}, {-1, 0, 2});
  backward(sum(relu(x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1}));
}

TEST(Activation, GeluTanhForm) {
  const auto x = random_tensor<double>({50}, 9, -4, 4);
  const auto y = gelu(x);
  const double k = std::sqrt(2.0 / std::numbers::pi);
  for (std::size_t i = 0; i < 50; ++i) {
    const double v = x.values()[i];
    EXPECT_NEAR(y.values()[i], 0.5 * v * (1 + std::tanh(k * (v + 0.044715 * v * v * v))), 1e-15);
  }
}

TEST(Activation, SoftmaxExamples) {
  const auto a = softmax(Tensor<double>({2}, {0, 0}));
  EXPECT_EQ(vec(a), (std::vector<double>{0.5, 0.5}));
  const auto b = softmax(Tensor<double>({2}, {0, std::log(3.0)}));
  EXPECT_NEAR(b.values()[0], 0.25, 1e-15);
  EXPECT_NEAR(b.values()[1], 0.75, 1e-15);
}

TEST(Activation, SoftmaxRowsSumToOneAndShiftInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = random_tensor<double>({4, 7}, seed, -30, 30);
    const double c = -50.0 + 10.0 * static_cast<double>(seed);
    const auto y = softmax(x);
    const auto z = softmax(add_scalar(x, c));
    const auto yf = softmax(random_tensor<float>({4, 7}, seed, -30, 30));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      float sf = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        s += y.values()[r * 7 + j];
        sf += yf.values()[r * 7 + j];
        EXPECT_NEAR(y.values()[r * 7 + j], z.values()[r * 7 + j], 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_NEAR(sf, 1.0f, 1e-6f);
    }
  }
}

TEST(Activation, SoftmaxLargeLogitsStayFinite) {
  const auto y = softmax(Tensor<float>({3}, {1000.f, 1000.f, -1000.f}));
  EXPECT_FLOAT_EQ(y.values()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.values()[2], 0.0f);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<std::uint8_t> t{0, 1, 2, 3, 3, 2};
  const auto loss = cross_entropy(Tensor<double>::zeros({1, 4, 2, 3}), t);
  EXPECT_NEAR(loss.item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(loss.item(), 1.386294, 1e-6);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  const std::vector<std::uint8_t> t{1};
  const auto loss = cross_entropy(Tensor<double>({1, 3, 1, 1}, {0, 60, 0}), t);
  EXPECT_GE(loss.item(), 0.0);
  EXPECT_LT(loss.item(), 1e-20);
}

TEST(CrossEntropy, TwoPixelExample) {
  // pixel 0 logits (0, 1) target 1; pixel 1 logits (2, 0) target 0
  const std::vector<std::uint8_t> t{1, 0};
  const auto loss = cross_entropy(Tensor<double>({1, 2, 1, 2}, {0, 2, 1, 0}), t);
  const double e = std::exp(1.0);
  const double want = 0.5 * (-std::log(e / (1 + e)) - std::log(e * e / (e * e + 1)));
  EXPECT_NEAR(loss.item(), want, 1e-15);
}

TEST(CrossEntropy, NonNegativeAndRejectsBadClass) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> t(2 * 9);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 5);
    EXPECT_GT(cross_entropy(random_tensor<double>({2, 5, 3, 3}, seed, -5, 5), t).item(), 0.0);
  }
  const std::vector<std::uint8_t> bad{0, 5};
  EXPECT_THROW(cross_entropy(Tensor<double>::zeros({1, 5, 1, 2}), bad), InvalidArgument);
  const std::vector<std::uint8_t> short_target{0};
  EXPECT_THROW(cross_entropy(Tensor<double>::zeros({1, 5, 1, 2}), short_target), DimensionError);
}
