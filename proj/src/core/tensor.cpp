#include "qairn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qairn/error.hpp"

namespace qairn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " +
         std::to_string(s.h) + ", " + std::to_string(s.w) + ")";
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

Tensor Tensor::slice_batch(int index) const {
  require(index >= 0 && index < shape_.n, ErrorKind::Dimension,
          "batch index out of range");
  Shape s = shape_;
  s.n = 1;
  Tensor out(s);
  const std::size_t stride = s.numel();
  std::memcpy(out.data(), data_.data() + stride * index, stride * sizeof(float));
  return out;
}

Tensor stack_batch(std::span<const Tensor> images) {
  require(!images.empty(), ErrorKind::Dimension, "cannot stack an empty list");
  Shape s = images.front().shape();
  require(s.n == 1, ErrorKind::Dimension, "stack_batch expects single images");
  s.n = static_cast<int>(images.size());
  Tensor out(s);
  const std::size_t stride = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].shape() == images.front().shape(), ErrorKind::Dimension,
            "stack_batch: images differ in shape");
    std::memcpy(out.data() + stride * i, images[i].data(), stride * sizeof(float));
  }
  return out;
}

}  // namespace qairn
