#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/core/version.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "qairn/dataio.hpp"
#include "qairn/error.hpp"

namespace qairn::dataio {

namespace {

Tensor from_mat(const cv::Mat& bgr8) {
  Tensor t(Shape{1, 3, bgr8.rows, bgr8.cols});
  for (int y = 0; y < bgr8.rows; ++y) {
    const auto* row = bgr8.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr8.cols; ++x) {
      float* px = t.pixel(0, y, x);
      px[0] = row[x][2] / 255.0f;
      px[1] = row[x][1] / 255.0f;
      px[2] = row[x][0] / 255.0f;
    }
  }
  return t;
}

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

cv::Mat to_mat(const Tensor& image) {
  require(image.n() == 1 && (image.c() == 1 || image.c() == 3), ErrorKind::Dimension,
          "expected a single 1- or 3-channel image, got " + to_string(image.shape()));
  require(image.all_finite(), ErrorKind::Input, "image contains non-finite values");
  if (image.c() == 1) {
    cv::Mat m(image.h(), image.w(), CV_8UC1);
    for (int y = 0; y < image.h(); ++y)
      for (int x = 0; x < image.w(); ++x) m.at<std::uint8_t>(y, x) = quantize(image.at(0, 0, y, x));
    return m;
  }
  cv::Mat m(image.h(), image.w(), CV_8UC3);
  for (int y = 0; y < image.h(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.w(); ++x) {
      const float* px = image.pixel(0, y, x);
      row[x] = cv::Vec3b(quantize(px[2]), quantize(px[1]), quantize(px[0]));
    }
  }
  return m;
}

}  // namespace

bool is_image_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  static const std::vector<std::string> known = {".png", ".jpg", ".jpeg", ".bmp",
                                                 ".ppm", ".pgm", ".tif", ".tiff"};
  return std::find(known.begin(), known.end(), ext) != known.end();
}

std::optional<Tensor> try_read_image(const fs::path& path) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (m.empty()) return std::nullopt;
  return from_mat(m);
}

Tensor read_image(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Io, "image not found: " + path.string());
  auto img = try_read_image(path);
  require(img.has_value(), ErrorKind::Codec, "cannot decode image: " + path.string());
  return std::move(*img);
}

void write_image(const fs::path& path, const Tensor& image) {
  const cv::Mat m = to_mat(image);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + e.what());
  }
  require(ok, ErrorKind::Io, "cannot write " + path.string());
}

std::string codec_id() {
  return std::string("opencv-") + CV_VERSION + "/libjpeg baseline 4:2:0";
}

Tensor distort_jpeg(const Tensor& image, int qf) {
  require(qf >= 1 && qf <= 100, ErrorKind::Input,
          "JPEG quality factor must be in [1, 100], got " + std::to_string(qf));
  const cv::Mat src = to_mat(image);
  std::vector<std::uint8_t> bytes;
  const std::vector<int> opts = {cv::IMWRITE_JPEG_QUALITY, qf, cv::IMWRITE_JPEG_PROGRESSIVE, 0,
                                 cv::IMWRITE_JPEG_OPTIMIZE, 0};
  bool ok = false;
  try {
    ok = cv::imencode(".jpg", src, bytes, opts);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Codec, std::string("JPEG encode failed: ") + e.what());
  }
  require(ok && !bytes.empty(), ErrorKind::Codec, "JPEG encode failed");
  const cv::Mat dec = cv::imdecode(bytes, image.c() == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  require(!dec.empty() && dec.rows == image.h() && dec.cols == image.w(), ErrorKind::Codec,
          "JPEG decode failed");
  if (image.c() == 3) return from_mat(dec);
  Tensor t(Shape{1, 1, dec.rows, dec.cols});
  for (int y = 0; y < dec.rows; ++y)
    for (int x = 0; x < dec.cols; ++x) t.at(0, 0, y, x) = dec.at<std::uint8_t>(y, x) / 255.0f;
  return t;
}

Tensor crop(const Tensor& image, int y, int x, int h, int w) {
  require(image.n() == 1, ErrorKind::Dimension, "crop expects a single image");
  require(y >= 0 && x >= 0 && h > 0 && w > 0 && y + h <= image.h() && x + w <= image.w(),
          ErrorKind::Dimension, "crop window out of bounds");
  Tensor out(Shape{1, image.c(), h, w});
  const std::size_t row = std::size_t(w) * image.c();
  for (int r = 0; r < h; ++r)
    std::copy_n(image.pixel(0, y + r, x), row, out.pixel(0, r, 0));
  return out;
}

}  // namespace qairn::dataio
