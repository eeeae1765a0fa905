#pragma once

#include <span>

#include "qairn/tensor.hpp"

// OpenMP-parallel compute kernels used by the network. Every kernel is
// deterministic: parallel loops only partition independent output elements,
// and all reductions run in a fixed order regardless of thread count.
// Matching single-threaded direct-loop versions live in reference.hpp.

namespace qairn::kernels {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  /// Output extent of a forward convolution over `in` samples.
  int conv_out(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  /// Natural output extent of the transposed convolution over `in` samples.
  int transpose_out(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

/// Row-major single-precision GEMM, C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);

/// Pins the BLAS backend to one thread so GEMM results never depend on the
/// machine's core count.
void set_deterministic_blas();

/// Patch matrix of shape [N*out_h*out_w, k*k*C] with zero fill outside the
/// image. Column order is (ky, kx, c).
void im2col(const Tensor& x, ConvGeometry g, int out_h, int out_w,
            std::span<float> cols);

/// Adjoint of im2col: gathers patch columns back onto `x` (overwritten).
void col2im(std::span<const float> cols, ConvGeometry g, int out_h, int out_w,
            Tensor& x);

// Convolution with weight layout [Cout, k, k, Cin] and bias [Cout].
Tensor conv2d_forward(const Tensor& x, std::span<const float> weight,
                      std::span<const float> bias, int out_channels,
                      ConvGeometry g);

/// Accumulates into dweight/dbias; writes dx when non-null.
void conv2d_backward(const Tensor& x, const Tensor& dy,
                     std::span<const float> weight, ConvGeometry g,
                     std::span<float> dweight, std::span<float> dbias,
                     Tensor* dx);

// Transposed convolution with weight layout [Cin, k, k, Cout] and bias
// [Cout]. The output is cropped (or zero-extended) to out_h x out_w.
Tensor conv_transpose2d_forward(const Tensor& x, std::span<const float> weight,
                                std::span<const float> bias, int out_channels,
                                ConvGeometry g, int out_h, int out_w);

void conv_transpose2d_backward(const Tensor& x, const Tensor& dy,
                               std::span<const float> weight, ConvGeometry g,
                               std::span<float> dweight,
                               std::span<float> dbias, Tensor* dx);

// Elementwise kernels.
void relu_inplace(Tensor& x);
/// dy is masked in place by the sign of the forward output y.
void relu_backward_inplace(const Tensor& y, Tensor& dy);
void sigmoid_inplace(Tensor& x);
void add_inplace(Tensor& a, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& ab, Tensor& a, Tensor& b);

/// out = gate * skip + (1 - gate) * decoder, with the single-channel gate
/// broadcast across channels.
Tensor gate_blend(const Tensor& skip, const Tensor& decoder, const Tensor& gate);

/// Gradients of gate_blend with respect to its three inputs.
void gate_blend_backward(const Tensor& skip, const Tensor& decoder,
                         const Tensor& gate, const Tensor& dout,
                         Tensor& dskip, Tensor& ddecoder, Tensor& dgate);

}  // namespace qairn::kernels
