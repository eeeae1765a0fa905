#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "qairn/dataio.hpp"
#include "qairn/error.hpp"

namespace qairn::dataio {

Tensor synthesize_image(int height, int width, std::uint64_t seed) {
  require(height > 0 && width > 0, ErrorKind::Input, "synthetic image size must be positive");
  std::mt19937_64 rng(seed);
  auto unit = [&rng] { return double(rng() >> 11) * 0x1.0p-53; };

  // shading: a random linear ramp per channel
  cv::Mat img(height, width, CV_32FC3);
  double base[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * unit();
    gy[c] = (unit() - 0.5) * 0.4;
    gx[c] = (unit() - 0.5) * 0.4;
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      auto& px = img.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c)
        px[c] = float(base[c] + gy[c] * y / height + gx[c] * x / width);
    }

  // shapes with hard edges
  const int shapes = 6 + int(rng() % 7);
  const int scale = std::min(height, width);
  for (int s = 0; s < shapes; ++s) {
    const cv::Scalar colour(unit(), unit(), unit());
    const cv::Point centre(int(unit() * width), int(unit() * height));
    const int r = 4 + int(unit() * scale / 3);
    switch (rng() % 3) {
      case 0:
        cv::circle(img, centre, r, colour, cv::FILLED, cv::LINE_AA);
        break;
      case 1:
        cv::rectangle(img, centre, centre + cv::Point(r, int(r * (0.5 + unit()))), colour,
                      cv::FILLED);
        break;
      default:
        cv::line(img, centre, cv::Point(int(unit() * width), int(unit() * height)), colour,
                 1 + int(unit() * 4), cv::LINE_AA);
    }
  }

  // oriented sinusoidal texture in one region plus fine grain everywhere
  const double freq = 0.2 + unit() * 0.8;
  const double angle = unit() * 3.14159265358979;
  const double amp = 0.05 + 0.1 * unit();
  const int ty = int(unit() * height / 2), tx = int(unit() * width / 2);
  std::normal_distribution<double> grain(0.0, 0.01);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      auto& px = img.at<cv::Vec3f>(y, x);
      double t = 0.0;
      if (y >= ty && y < ty + height / 2 && x >= tx && x < tx + width / 2)
        t = amp * std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)));
      for (int c = 0; c < 3; ++c) px[c] += float(t + grain(rng));
    }
  cv::GaussianBlur(img, img, cv::Size(3, 3), 0.6);

  Tensor out(Shape{1, 3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto& px = img.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c)
        out.at(0, c, y, x) = std::round(std::clamp(px[c], 0.0f, 1.0f) * 255.0f) / 255.0f;
    }
  return out;
}

std::vector<fs::path> write_synthetic_corpus(const fs::path& dir, int count, int height,
                                             int width, std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    const fs::path p = dir / name;
    write_image(p, synthesize_image(height, width, seed * 1000003ull + std::uint64_t(i)));
    paths.push_back(p);
  }
  return paths;
}

}  // namespace qairn::dataio
