#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qairn/error.hpp"
#include "qairn/metrics.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace qairn;
using namespace qairn::metrics;
using qairn::testing::random_tensor;

namespace {

Tensor ramp(int h, int w) {
  Tensor t({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = float(x + y) / 128.0f;  // exact in binary
  return t;
}

Tensor tiles(int h, int w) {
  Tensor t({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = ((x / 8 + y / 8) % 2) ? 0.75f : 0.25f;
  return t;
}

TEST(Psnr, IdenticalIsInfinite) {
  Tensor t = random_tensor({1, 3, 8, 8}, 1);
  EXPECT_TRUE(std::isinf(psnr(t, t)));
}

TEST(Psnr, ConstantOffset) {
  Tensor ref({1, 3, 8, 8}, 0.0f);
  Tensor test({1, 3, 8, 8}, 0.1f);
  EXPECT_NEAR(psnr(ref, test), 20.0, 1e-6);
}

TEST(Psnr, MatchesDirectSummation) {
  Tensor a = random_tensor({1, 3, 31, 29}, 2);
  Tensor b = random_tensor({1, 3, 31, 29}, 3);
  EXPECT_NEAR(psnr(a, b), oracle::psnr(a, b), 1e-9);
}

TEST(SsimEval, ModesAgreeOnGrayscale) {
  Tensor g = random_tensor({1, 1, 32, 32}, 4);
  Tensor h = random_tensor({1, 1, 32, 32}, 5);
  Tensor rgb_g({1, 3, 32, 32}), rgb_h({1, 3, 32, 32});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        rgb_g.at(0, c, y, x) = g.at(0, 0, y, x);
        rgb_h.at(0, c, y, x) = h.at(0, 0, y, x);
      }
  EXPECT_NEAR(ssim_eval(rgb_g, rgb_h, ChannelMode::RgbMean),
              ssim_eval(rgb_g, rgb_h, ChannelMode::LumaBt601), 1e-6);
  EXPECT_NEAR(ssim_eval(rgb_g, rgb_g, ChannelMode::RgbMean), 1.0, 1e-12);
  EXPECT_NEAR(ssim_eval(rgb_g, rgb_g, ChannelMode::LumaBt601), 1.0, 1e-12);
}

TEST(SsimEval, MatchesWindowOracle) {
  Tensor a = random_tensor({1, 3, 64, 64}, 6);
  Tensor b = random_tensor({1, 3, 64, 64}, 7);
  EXPECT_NEAR(ssim_eval(a, b), oracle::ssim(a, b), 1e-6);
  EXPECT_NEAR(ssim_eval(a, b, ChannelMode::LumaBt601),
              oracle::ssim(to_luma(a), to_luma(b)), 1e-6);
}

TEST(PsnrB, SmoothRampEqualsPsnr) {
  Tensor ref = ramp(32, 40);
  Tensor test = ramp(32, 40);
  for (float& v : test.values()) v += 1.0f / 32.0f;
  EXPECT_EQ(blocking_effect_factor(test), 0.0);
  EXPECT_EQ(psnr_b(ref, test), psnr(ref, test));
}

TEST(PsnrB, TilesPenalized) {
  Tensor ref({1, 1, 32, 32}, 0.5f);
  Tensor test = tiles(32, 32);
  const double expected = oracle::psnr_b(ref, test);
  EXPECT_NEAR(psnr_b(ref, test), expected, 1e-9);
  EXPECT_LT(psnr_b(ref, test), psnr(ref, test));
  // D_b = 0.25 per direction, D_bc = 0, eta = 3 / 5.
  EXPECT_NEAR(blocking_effect_factor(test), 2 * 0.6 * 0.25, 1e-12);
}

TEST(PsnrB, MatchesPairEnumerationOracle) {
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({1, 1, 40 + trial, 33 + 2 * trial}, 10 + trial);
    Tensor b = random_tensor({1, 1, 40 + trial, 33 + 2 * trial}, 20 + trial);
    EXPECT_NEAR(psnr_b(a, b), oracle::psnr_b(a, b), 1e-9);
  }
  Tensor a = random_tensor({1, 3, 24, 24}, 30);
  Tensor b = random_tensor({1, 3, 24, 24}, 31);
  EXPECT_NEAR(psnr_b(a, b), oracle::psnr_b(to_luma(a), to_luma(b)), 1e-9);
  EXPECT_NEAR(psnr_b(a, b, 8, 1.0, ChannelMode::RgbMean), oracle::psnr_b(a, b), 1e-9);
}

TEST(PsnrB, NeverExceedsPsnr) {
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({1, 3, 24, 32}, 40 + trial);
    Tensor b = random_tensor({1, 3, 24, 32}, 60 + trial);
    EXPECT_LE(psnr_b(a, b, 8, 1.0, ChannelMode::RgbMean), psnr(a, b));
    EXPECT_LE(psnr_b(a, b), psnr(to_luma(a), to_luma(b)));
  }
}

TEST(PsnrB, TooSmallIsInputError) {
  Tensor a({1, 1, 8, 20});
  try {
    psnr_b(a, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

TEST(Minkowski, FixpointMeanAndHalf) {
  Tensor c({1, 1, 5, 7}, 0.3f);
  for (double p : {0.5, 1.0, 2.0, 4.0}) EXPECT_NEAR(minkowski_pool(c, p), 0.3, 1e-7);
  Tensor r = random_tensor({1, 1, 6, 6}, 8);
  double mean = 0;
  for (float v : r.values()) mean += v;
  EXPECT_NEAR(minkowski_pool(r, 1.0), mean / 36.0, 1e-12);
  Tensor half({1, 1, 2, 2});
  half.at(0, 0, 0, 0) = 1.0f;
  half.at(0, 0, 1, 1) = 1.0f;
  EXPECT_NEAR(minkowski_pool(half, 2.0), std::sqrt(0.5), 1e-12);
}

TEST(Minkowski, MonotoneInPAndBounded) {
  for (int trial = 0; trial < 30; ++trial) {
    Tensor m = random_tensor({1, 1, 9, 9}, 100 + trial);
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    double prev = 0.0;
    for (double p : {0.25, 0.5, 1.0, 2.0, 3.0, 8.0}) {
      const double q = minkowski_pool(m, p);
      EXPECT_GE(q, prev - 1e-12);
      EXPECT_GE(q, *lo - 1e-12);
      EXPECT_LE(q, *hi + 1e-12);
      prev = q;
    }
  }
}

TEST(Minkowski, Errors) {
  EXPECT_THROW(minkowski_pool(Tensor(), 2.0), Error);
  EXPECT_THROW(minkowski_pool(Tensor({1, 1, 2, 2}, 0.5f), 0.0), Error);
}

TEST(Correlation, AffineIncreasing) {
  std::vector<double> x{0.3, 1.5, -2.0, 4.0, 2.2};
  std::vector<double> y;
  for (double v : x) y.push_back(2 * v + 1);
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-12);
  EXPECT_EQ(spearman(x, y), 1.0);
  EXPECT_EQ(kendall(x, y), 1.0);
}

TEST(Correlation, MonotoneNonlinear) {
  std::vector<double> x{0.1, 0.5, 1.0, 1.7, 2.4, 3.0};
  std::vector<double> y;
  for (double v : x) y.push_back(v * v * v);
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-15);
  EXPECT_LT(pearson(x, y), 1.0);
}

TEST(Correlation, KendallThreeElements) {
  std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  EXPECT_DOUBLE_EQ(kendall(x, y), oracle::kendall(x, y));
  EXPECT_NEAR(kendall(x, y), 1.0 / 3.0, 1e-15);
}

TEST(Correlation, ConstantInputIsUndefined) {
  std::vector<double> x{1, 1, 1, 1}, y{1, 2, 3, 4};
  for (auto fn : {&pearson, &spearman, &kendall}) {
    try {
      fn(x, y);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::UndefinedCorrelation);
    }
  }
  std::vector<double> two{1, 2};
  EXPECT_THROW(pearson(two, two), Error);
}

// Random vectors with deliberate ties: values drawn from a small integer set.
std::vector<double> tied_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> v(0, 6);
  std::vector<double> out(n);
  for (double& d : out) d = v(rng) * 0.5;
  return out;
}

TEST(Correlation, RankAndPairOraclesExact) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(3, 30);
  int checked = 0;
  while (checked < 50) {
    const std::size_t n = len(rng);
    auto x = tied_vector(rng, n);
    auto y = tied_vector(rng, n);
    const auto rx = oracle::ranks(x);
    const auto ry = oracle::ranks(y);
    EXPECT_EQ(average_ranks(x), rx);
    EXPECT_EQ(average_ranks(y), ry);
    try {
      const double k = kendall(x, y);
      EXPECT_EQ(k, oracle::kendall(x, y));
      EXPECT_EQ(spearman(x, y), pearson(rx, ry));
      ++checked;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::UndefinedCorrelation);
    }
  }
}

TEST(Correlation, InvarianceAndAntisymmetry) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(25), y(25), y2(25), yn(25), x3(25);
    for (int i = 0; i < 25; ++i) {
      x[i] = g(rng);
      y[i] = x[i] + g(rng);
      y2[i] = 3.5 * y[i] + 10.0;
      yn[i] = -y[i];
      x3[i] = std::exp(x[i]);
    }
    EXPECT_NEAR(pearson(x, y), pearson(x, y2), 1e-12);
    EXPECT_EQ(spearman(x, y), spearman(x3, y2));
    EXPECT_EQ(kendall(x, y), kendall(x3, y2));
    EXPECT_NEAR(pearson(x, yn), -pearson(x, y), 1e-12);
    EXPECT_NEAR(spearman(x, yn), -spearman(x, y), 1e-12);
    EXPECT_NEAR(kendall(x, yn), -kendall(x, y), 1e-12);
  }
}

TEST(Logistic, RecoversSyntheticMapping) {
  Logistic4 truth{{9.0, 1.0, 0.5, 0.1}};
  std::vector<double> x, y;
  for (int i = 0; i < 40; ++i) {
    x.push_back(i / 39.0);
    y.push_back(truth(x.back()));
  }
  Logistic4 fit = fit_logistic4(x, y);
  for (double v : x) EXPECT_NEAR(fit(v), truth(v), 1e-4);
}

TEST(PairwiseSum, MatchesExactSum) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i);
  EXPECT_EQ(pairwise_sum(v), 499500.0);
}

}  // namespace
