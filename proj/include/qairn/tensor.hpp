#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qairn {

/// Extent of a batch of feature maps. Semantics are (batch, channel, height,
/// width); storage is channel-last, so the channel index varies fastest.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense float tensor with NHWC storage. Used for images, feature maps and
/// parameter blobs alike (parameters use `dims` directly and ignore `shape`).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.numel(), fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) *
               shape_.c +
           c;
  }
  float& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  float at(int n, int c, int y, int x) const {
    return data_[offset(n, c, y, x)];
  }

  /// Pointer to the channel vector of pixel (n, y, x).
  float* pixel(int n, int y, int x) { return data_.data() + offset(n, 0, y, x); }
  const float* pixel(int n, int y, int x) const {
    return data_.data() + offset(n, 0, y, x);
  }

  void fill(float v);
  bool all_finite() const;

  /// Copy of batch element `index` as a batch of one.
  Tensor slice_batch(int index) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Network input/target. Values in [0,1], channel count = model input channels.
using ImageBatch = Tensor;
/// Intermediate activation inside the network.
using FeatureMap = Tensor;

/// Stacks single images (n == 1 each) into one batch.
Tensor stack_batch(std::span<const Tensor> images);

}  // namespace qairn
