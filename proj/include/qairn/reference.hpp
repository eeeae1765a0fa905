#pragma once

#include <span>

#include "qairn/kernels.hpp"

// Serial direct-loop convolutions. Slow, but written straight from the
// definition with no patch matrices or BLAS; the parallel kernels are tested
// against these and the benchmark compares the two.

namespace qairn::reference {

using kernels::ConvGeometry;

Tensor conv2d_forward(const Tensor& x, std::span<const float> weight,
                      std::span<const float> bias, int out_channels,
                      ConvGeometry g);

void conv2d_backward(const Tensor& x, const Tensor& dy,
                     std::span<const float> weight, ConvGeometry g,
                     std::span<float> dweight, std::span<float> dbias,
                     Tensor* dx);

Tensor conv_transpose2d_forward(const Tensor& x, std::span<const float> weight,
                                std::span<const float> bias, int out_channels,
                                ConvGeometry g, int out_h, int out_w);

void conv_transpose2d_backward(const Tensor& x, const Tensor& dy,
                               std::span<const float> weight, ConvGeometry g,
                               std::span<float> dweight,
                               std::span<float> dbias, Tensor* dx);

}  // namespace qairn::reference
