#include "qairn/objective.hpp"

#include <cmath>

#include "qairn/error.hpp"

namespace qairn {

void SsimParams::validate() const {
  require(window >= 1 && window % 2 == 1, ErrorKind::Config,
          "SSIM window size must be odd and positive");
  require(sigma > 0.0, ErrorKind::Config, "SSIM sigma must be positive");
  require(k1 > 0.0 && k2 > 0.0 && dynamic_range > 0.0, ErrorKind::Config,
          "SSIM constants must be positive");
}

std::vector<double> SsimParams::taps() const {
  std::vector<double> g(window);
  const int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - half;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

void to_json(nlohmann::json& j, const SsimParams& p) {
  j = {{"window", p.window}, {"sigma", p.sigma}, {"k1", p.k1},
       {"k2", p.k2}, {"dynamic_range", p.dynamic_range}};
}

void from_json(const nlohmann::json& j, SsimParams& p) {
  SsimParams d;
  p.window = j.value("window", d.window);
  p.sigma = j.value("sigma", d.sigma);
  p.k1 = j.value("k1", d.k1);
  p.k2 = j.value("k2", d.k2);
  p.dynamic_range = j.value("dynamic_range", d.dynamic_range);
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
              to_string(b.shape()) + " differ");
}

// Separable "valid" Gaussian filter of an h x w plane -> (h-k+1) x (w-k+1).
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * src[std::size_t(y) * w + x + t];
      rows[std::size_t(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * rows[std::size_t(y + t) * ow + x];
      out[std::size_t(y) * ow + x] = acc;
    }
  return out;
}

// Adjoint of filter_valid: spreads an (h-k+1) x (w-k+1) map back to h x w.
std::vector<double> filter_valid_adjoint(const std::vector<double>& src, int h,
                                         int w, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> cols(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int t = 0; t < k; ++t)
      for (int x = 0; x < ow; ++x)
        cols[std::size_t(y + t) * ow + x] += taps[t] * src[std::size_t(y) * ow + x];
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int t = 0; t < k; ++t)
        out[std::size_t(y) * w + x + t] += taps[t] * cols[std::size_t(y) * ow + x];
  return out;
}

struct PlaneResult {
  double ssim_sum = 0.0;
  std::vector<double> grad;  // d(sum of local SSIM)/d x over the plane
};

PlaneResult ssim_plane(const std::vector<double>& x, const std::vector<double>& y,
                       int h, int w, const SsimParams& params,
                       const std::vector<double>& taps, bool want_grad) {
  const std::size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, taps);
  const auto my = filter_valid(y, h, w, taps);
  const auto exx = filter_valid(xx, h, w, taps);
  const auto eyy = filter_valid(yy, h, w, taps);
  const auto exy = filter_valid(xy, h, w, taps);
  const double c1 = params.c1();
  const double c2 = params.c2();

  PlaneResult r;
  const std::size_t m = mx.size();
  std::vector<double> dmu, dexx, dexy;
  if (want_grad) {
    dmu.resize(m);
    dexx.resize(m);
    dexy.resize(m);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double vx = exx[i] - mx[i] * mx[i];
    const double vy = eyy[i] - my[i] * my[i];
    const double cov = exy[i] - mx[i] * my[i];
    const double n1 = 2.0 * mx[i] * my[i] + c1;
    const double n2 = 2.0 * cov + c2;
    const double d1 = mx[i] * mx[i] + my[i] * my[i] + c1;
    const double d2 = vx + vy + c2;
    const double s = (n1 * n2) / (d1 * d2);
    r.ssim_sum += s;
    if (want_grad) {
      dmu[i] = s * (2.0 * my[i] / n1 - 2.0 * my[i] / n2 - 2.0 * mx[i] / d1 +
                    2.0 * mx[i] / d2);
      dexx[i] = -s / d2;
      dexy[i] = 2.0 * s / n2;
    }
  }
  if (want_grad) {
    const auto a = filter_valid_adjoint(dmu, h, w, taps);
    const auto b = filter_valid_adjoint(dexx, h, w, taps);
    const auto c = filter_valid_adjoint(dexy, h, w, taps);
    r.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.grad[i] = a[i] + 2.0 * x[i] * b[i] + y[i] * c[i];
  }
  return r;
}

}  // namespace

double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  check_same(pred, target, "l1_loss");
  require(!pred.empty(), ErrorKind::Input, "l1_loss: empty input");
  const std::size_t n = pred.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    sum += std::abs(double(pred.data()[i]) - double(target.data()[i]));
  if (grad != nullptr) {
    *grad = Tensor(pred.shape());
    const float inv = static_cast<float>(1.0 / double(n));
    for (std::size_t i = 0; i < n; ++i) {
      const float d = pred.data()[i] - target.data()[i];
      grad->data()[i] = d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
    }
  }
  return sum / double(n);
}

double ssim_index(const Tensor& pred, const Tensor& target,
                  const SsimParams& params, Tensor* grad) {
  check_same(pred, target, "ssim_index");
  params.validate();
  require(pred.h() >= params.window && pred.w() >= params.window, ErrorKind::Input,
          "ssim_index: image " + std::to_string(pred.h()) + "x" +
              std::to_string(pred.w()) + " is smaller than the " +
              std::to_string(params.window) + "-tap window");
  require(pred.n() >= 1 && pred.c() >= 1, ErrorKind::Input, "ssim_index: empty input");

  const int h = pred.h();
  const int w = pred.w();
  const int planes = pred.n() * pred.c();
  const auto taps = params.taps();
  const double windows =
      double(planes) * (h - params.window + 1) * (w - params.window + 1);
  std::vector<PlaneResult> results(planes);

#pragma omp parallel for schedule(dynamic)
  for (int p = 0; p < planes; ++p) {
    const int n = p / pred.c();
    const int c = p % pred.c();
    std::vector<double> x(std::size_t(h) * w), y(std::size_t(h) * w);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        x[std::size_t(yy) * w + xx] = pred.at(n, c, yy, xx);
        y[std::size_t(yy) * w + xx] = target.at(n, c, yy, xx);
      }
    results[p] = ssim_plane(x, y, h, w, params, taps, grad != nullptr);
  }

  double total = 0.0;
  for (const auto& r : results) total += r.ssim_sum;
  if (grad != nullptr) {
    *grad = Tensor(pred.shape());
    for (int p = 0; p < planes; ++p) {
      const int n = p / pred.c();
      const int c = p % pred.c();
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
          grad->at(n, c, yy, xx) =
              static_cast<float>(results[p].grad[std::size_t(yy) * w + xx] / windows);
    }
  }
  return total / windows;
}

LossReport total_loss(const Tensor& pred, const Tensor& target, Tensor* grad,
                      const SsimParams& params) {
  LossReport report;
  Tensor g_l1;
  Tensor g_ssim;
  report.l1 = l1_loss(pred, target, grad ? &g_l1 : nullptr);
  report.mean_ssim = ssim_index(pred, target, params, grad ? &g_ssim : nullptr);
  report.ssim_term = 1.0 - report.mean_ssim;
  report.total = report.l1 + report.ssim_term;
  if (grad != nullptr) {
    *grad = std::move(g_l1);
    float* dst = grad->data();
    const float* s = g_ssim.data();
    for (std::size_t i = 0; i < grad->size(); ++i) dst[i] -= s[i];
  }
  return report;
}

}  // namespace qairn
