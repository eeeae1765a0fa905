#include "qairn/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qairn/error.hpp"

namespace qairn::metrics {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(what) + ": shapes " + qairn::to_string(a.shape()) + " and " +
              qairn::to_string(b.shape()) + " differ");
  require(!a.empty(), ErrorKind::Input, std::string(what) + ": empty image");
}

double mse(const Tensor& a, const Tensor& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    se += d * d;
  }
  return se / double(a.size());
}

double to_db(double max_val, double err) {
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / err);
}

void check_pair(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Dimension,
          "correlation inputs differ in length");
  require(x.size() >= 3, ErrorKind::Input,
          "correlation needs at least 3 samples, got " + std::to_string(x.size()));
}

// Merge sort on `v`, returning the number of inversions (swaps).
long long sort_count_swaps(std::vector<double>& v, std::size_t lo, std::size_t hi,
                           std::vector<double>& scratch) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long swaps = sort_count_swaps(v, lo, mid, scratch) +
                    sort_count_swaps(v, mid, hi, scratch);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<long long>(mid - i);
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + lo, scratch.begin() + hi, v.begin() + lo);
  return swaps;
}

// Sum of t(t-1)/2 over runs of equal values in a sorted range.
long long tied_pairs(const std::vector<double>& sorted) {
  long long total = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const long long t = static_cast<long long>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace

std::string to_string(ChannelMode mode) {
  return mode == ChannelMode::RgbMean ? "rgb_mean" : "luma_bt601";
}

ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "rgb_mean") return ChannelMode::RgbMean;
  if (s == "luma_bt601") return ChannelMode::LumaBt601;
  fail(ErrorKind::Config, "unknown channel mode '" + s + "'");
}

Tensor to_luma(const Tensor& rgb) {
  if (rgb.c() == 1) return rgb;
  require(rgb.c() == 3, ErrorKind::Dimension, "to_luma expects 1 or 3 channels");
  Tensor y({rgb.n(), 1, rgb.h(), rgb.w()});
  const std::size_t pixels = rgb.shape().pixels();
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* px = rgb.data() + p * 3;
    y.data()[p] = static_cast<float>(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
  }
  return y;
}

double psnr(const Tensor& ref, const Tensor& test, double max_val) {
  check_same(ref, test, "psnr");
  return to_db(max_val, mse(ref, test));
}

double ssim_eval(const Tensor& ref, const Tensor& test, ChannelMode mode,
                 const SsimParams& params) {
  check_same(ref, test, "ssim");
  if (mode == ChannelMode::LumaBt601) return ssim_index(to_luma(ref), to_luma(test), params);
  return ssim_index(ref, test, params);
}

double blocking_effect_factor(const Tensor& test, int block_size) {
  require(block_size >= 2, ErrorKind::Input, "block size must be >= 2");
  const int h = test.h();
  const int w = test.w();
  require(std::min(h, w) > block_size, ErrorKind::Input,
          "PSNR-B needs both image extents larger than the block size");
  const double eta = std::log2(double(block_size)) / std::log2(double(std::min(h, w)));

  double total = 0.0;
  for (int n = 0; n < test.n(); ++n)
    for (int c = 0; c < test.c(); ++c) {
      double bef = 0.0;
      // Horizontal neighbours (x, x+1); boundary when x+1 is on the grid.
      double sb = 0.0, sbc = 0.0;
      long nb = 0, nbc = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
          const double d = double(test.at(n, c, y, x)) - test.at(n, c, y, x + 1);
          if ((x + 1) % block_size == 0) {
            sb += d * d;
            ++nb;
          } else {
            sbc += d * d;
            ++nbc;
          }
        }
      double db = sb / double(nb), dbc = sbc / double(nbc);
      if (db > dbc) bef += eta * (db - dbc);
      // Vertical neighbours (y, y+1).
      sb = sbc = 0.0;
      nb = nbc = 0;
      for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = double(test.at(n, c, y, x)) - test.at(n, c, y + 1, x);
          if ((y + 1) % block_size == 0) {
            sb += d * d;
            ++nb;
          } else {
            sbc += d * d;
            ++nbc;
          }
        }
      db = sb / double(nb);
      dbc = sbc / double(nbc);
      if (db > dbc) bef += eta * (db - dbc);
      total += bef;
    }
  return total / double(test.n() * test.c());
}

double psnr_b(const Tensor& ref, const Tensor& test, int block_size,
              double max_val, ChannelMode mode) {
  check_same(ref, test, "psnr_b");
  if (mode == ChannelMode::LumaBt601 && ref.c() != 1) {
    return psnr_b(to_luma(ref), to_luma(test), block_size, max_val, mode);
  }
  const double bef = blocking_effect_factor(test, block_size);
  return to_db(max_val, mse(ref, test) + bef);
}

double minkowski_pool(const Tensor& map, double p) {
  require(!map.empty(), ErrorKind::Input, "minkowski_pool: empty map");
  require(p > 0.0 && std::isfinite(p), ErrorKind::Input,
          "minkowski_pool: exponent must be positive");
  std::vector<double> powered(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = map.data()[i];
    require(v >= 0.0 && v <= 1.0, ErrorKind::Input,
            "minkowski_pool: map values must lie in [0,1]");
    powered[i] = std::pow(v, p);
  }
  return std::pow(pairwise_mean(powered), 1.0 / p);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double mx = pairwise_mean(x);
  const double my = pairwise_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(ErrorKind::UndefinedCorrelation, "pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    // Positions i..j-1 share the mean of ranks i+1..j.
    const double r = (double(i + 1) + double(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  try {
    return pearson(rx, ry);
  } catch (const Error&) {
    fail(ErrorKind::UndefinedCorrelation, "spearman: constant input");
  }
}

double kendall(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  const long long tx = tied_pairs(xs);
  long long txy = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const long long t = static_cast<long long>(j - i);
    txy += t * (t - 1) / 2;
    i = j;
  }
  std::vector<double> scratch(n);
  const long long swaps = sort_count_swaps(ys, 0, n, scratch);
  const long long ty = tied_pairs(ys);
  const long long denom_x = n0 - tx;
  const long long denom_y = n0 - ty;
  if (denom_x == 0 || denom_y == 0)
    fail(ErrorKind::UndefinedCorrelation, "kendall: constant input");
  const long long numerator = n0 - tx - ty + txy - 2 * swaps;
  return double(numerator) / std::sqrt(double(denom_x) * double(denom_y));
}

CorrelationReport correlate(std::span<const double> predicted,
                            std::span<const double> subjective) {
  CorrelationReport r;
  r.pcc = pearson(predicted, subjective);
  r.srcc = spearman(predicted, subjective);
  r.kcc = kendall(predicted, subjective);
  r.n_samples = predicted.size();
  return r;
}

double Logistic4::operator()(double x) const {
  const double scale = std::max(std::abs(beta[3]), 1e-12);
  return beta[1] + (beta[0] - beta[1]) / (1.0 + std::exp(-(x - beta[2]) / scale));
}

Logistic4 fit_logistic4(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  Logistic4 f;
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  const double mx = pairwise_mean(x);
  double sx = 0.0;
  for (double v : x) sx += (v - mx) * (v - mx);
  sx = std::sqrt(sx / double(n));
  require(sx > 0.0, ErrorKind::UndefinedCorrelation, "logistic fit: constant predictor");
  f.beta = {*ymax, *ymin, mx, sx};

  auto residual_norm = [&](const Logistic4& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::pow(g(x[i]) - y[i], 2);
    return s;
  };
  double lambda = 1e-3;
  double cost = residual_norm(f);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::MatrixXd jac(n, 4);
    Eigen::VectorXd res(n);
    const double s = std::max(std::abs(f.beta[3]), 1e-12);
    const double sign = f.beta[3] < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = (x[i] - f.beta[2]) / s;
      const double sig = 1.0 / (1.0 + std::exp(-z));
      const double dsig = sig * (1.0 - sig);
      const double span_b = f.beta[0] - f.beta[1];
      jac(i, 0) = sig;
      jac(i, 1) = 1.0 - sig;
      jac(i, 2) = -span_b * dsig / s;
      jac(i, 3) = -span_b * dsig * z / s * sign;
      res(i) = f(x[i]) - y[i];
    }
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d grad = jac.transpose() * res;
    Eigen::Matrix4d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
    const Eigen::Vector4d step = damped.ldlt().solve(-grad);
    Logistic4 trial = f;
    for (int k = 0; k < 4; ++k) trial.beta[k] += step(k);
    const double trial_cost = residual_norm(trial);
    if (std::isfinite(trial_cost) && trial_cost < cost) {
      const bool converged = (cost - trial_cost) < 1e-14 * std::max(1.0, cost);
      f = trial;
      cost = trial_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (converged) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  return f;
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double pairwise_mean(std::span<const double> values) {
  require(!values.empty(), ErrorKind::Input, "mean of an empty sequence");
  return pairwise_sum(values) / double(values.size());
}

}  // namespace qairn::metrics
