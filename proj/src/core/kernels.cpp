#include "qairn/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "qairn/error.hpp"

extern "C" void openblas_set_num_threads(int num_threads);

namespace qairn::kernels {

namespace {

using Index = std::ptrdiff_t;

void check_rank(const Tensor& x, int channels, const char* what) {
  require(x.c() == channels, ErrorKind::Dimension,
          std::string(what) + ": expected " + std::to_string(channels) +
              " channels, got shape " + to_string(x.shape()));
}

// Per-channel sum over all pixels, accumulated in double in pixel order.
void accumulate_bias_grad(const Tensor& dy, std::span<float> dbias) {
  const int channels = dy.c();
  const Index pixels = static_cast<Index>(dy.shape().pixels());
  std::vector<double> acc(channels, 0.0);
  const float* src = dy.data();
  for (Index p = 0; p < pixels; ++p) {
    const float* row = src + p * channels;
    for (int c = 0; c < channels; ++c) acc[c] += row[c];
  }
  for (int c = 0; c < channels; ++c) dbias[c] += static_cast<float>(acc[c]);
}

void add_bias(Tensor& y, std::span<const float> bias) {
  const int channels = y.c();
  const Index pixels = static_cast<Index>(y.shape().pixels());
  float* dst = y.data();
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    float* row = dst + p * channels;
    for (int c = 0; c < channels; ++c) row[c] += bias[c];
  }
}

// Patch matrices are large (tens of MB for a 16-image batch); reusing one
// buffer per thread avoids paying for fresh zeroed pages on every call.
std::span<float> workspace(std::size_t size) {
  thread_local std::vector<float> buffer;
  if (buffer.size() < size) buffer.resize(size);
  return {buffer.data(), size};
}

bool is_pointwise(ConvGeometry g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void set_deterministic_blas() { openblas_set_num_threads(1); }

namespace {

// Rows [r0, r1) of the patch matrix.
void im2col_rows(const Tensor& x, ConvGeometry g, int out_h, int out_w, Index r0,
                 Index r1, float* out) {
  const int channels = x.c();
  const int k = g.kernel;
  const Index row_len = static_cast<Index>(k) * k * channels;
  const int h = x.h();
  const int w = x.w();
#pragma omp parallel for schedule(static)
  for (Index r = r0; r < r1; ++r) {
    const int ox = static_cast<int>(r % out_w);
    const int oy = static_cast<int>((r / out_w) % out_h);
    const int n = static_cast<int>(r / (static_cast<Index>(out_w) * out_h));
    float* dst = out + (r - r0) * row_len;
    for (int ky = 0; ky < k; ++ky) {
      const int iy = oy * g.stride - g.pad + ky;
      float* slot = dst + static_cast<Index>(ky) * k * channels;
      if (iy < 0 || iy >= h) {
        std::memset(slot, 0, sizeof(float) * k * channels);
        continue;
      }
      const int ix0 = ox * g.stride - g.pad;
      if (ix0 >= 0 && ix0 + k <= w) {
        // whole kernel row inside the image: one contiguous run in NHWC
        std::memcpy(slot, x.pixel(n, iy, ix0), sizeof(float) * k * channels);
        continue;
      }
      for (int kx = 0; kx < k; ++kx) {
        const int ix = ix0 + kx;
        if (ix < 0 || ix >= w) {
          std::memset(slot + kx * channels, 0, sizeof(float) * channels);
        } else {
          std::memcpy(slot + kx * channels, x.pixel(n, iy, ix), sizeof(float) * channels);
        }
      }
    }
  }
}

// Rows of the patch matrix processed per GEMM: sized so a tile stays in L2.
Index tile_rows(Index row_len) {
  return std::max<Index>(64, (Index{256} << 10) / (row_len * Index(sizeof(float))));
}

// y[rows, cout] = patches(x) * weight^T, computed tile by tile.
void conv_tiled(const Tensor& x, std::span<const float> weight, int out_channels,
                ConvGeometry g, int oh, int ow, float* y) {
  const Index k_len = static_cast<Index>(g.kernel) * g.kernel * x.c();
  const Index rows = static_cast<Index>(x.n()) * oh * ow;
  const Index tile = tile_rows(k_len);
  const auto buf = workspace(static_cast<std::size_t>(std::min(tile, rows) * k_len));
  for (Index r0 = 0; r0 < rows; r0 += tile) {
    const Index r1 = std::min(rows, r0 + tile);
    im2col_rows(x, g, oh, ow, r0, r1, buf.data());
    gemm(false, true, int(r1 - r0), out_channels, int(k_len), 1.0f, buf.data(), int(k_len),
         weight.data(), int(k_len), 0.0f, y + r0 * out_channels, out_channels);
  }
}

}  // namespace

void im2col(const Tensor& x, ConvGeometry g, int out_h, int out_w,
            std::span<float> cols) {
  const Index row_len = static_cast<Index>(g.kernel) * g.kernel * x.c();
  const Index rows = static_cast<Index>(x.n()) * out_h * out_w;
  require(cols.size() == static_cast<std::size_t>(rows * row_len),
          ErrorKind::Dimension, "im2col: column buffer has the wrong size");
  im2col_rows(x, g, out_h, out_w, 0, rows, cols.data());
}

void col2im(std::span<const float> cols, ConvGeometry g, int out_h, int out_w,
            Tensor& x) {
  const int channels = x.c();
  const int k = g.kernel;
  const int s = g.stride;
  const Index row_len = static_cast<Index>(k) * k * channels;
  const Index image_rows = static_cast<Index>(x.n()) * x.h();
  require(cols.size() ==
              static_cast<std::size_t>(x.n()) * out_h * out_w * row_len,
          ErrorKind::Dimension, "col2im: column buffer has the wrong size");
  const int h = x.h();
  const int w = x.w();
  // Gather formulation: every image pixel is written by exactly one thread.
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < image_rows; ++r) {
    const int iy = static_cast<int>(r % h);
    const int n = static_cast<int>(r / h);
    for (int ix = 0; ix < w; ++ix) {
      float* dst = x.pixel(n, iy, ix);
      std::memset(dst, 0, sizeof(float) * channels);
      for (int ky = 0; ky < k; ++ky) {
        const int ty = iy + g.pad - ky;
        if (ty < 0 || ty % s != 0) continue;
        const int oy = ty / s;
        if (oy >= out_h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int tx = ix + g.pad - kx;
          if (tx < 0 || tx % s != 0) continue;
          const int ox = tx / s;
          if (ox >= out_w) continue;
          const float* src =
              cols.data() +
              ((static_cast<Index>(n) * out_h + oy) * out_w + ox) * row_len +
              (static_cast<Index>(ky) * k + kx) * channels;
          for (int c = 0; c < channels; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

Tensor conv2d_forward(const Tensor& x, std::span<const float> weight,
                      std::span<const float> bias, int out_channels,
                      ConvGeometry g) {
  const int in_channels = x.c();
  const int k_len = g.kernel * g.kernel * in_channels;
  require(weight.size() == static_cast<std::size_t>(out_channels) * k_len,
          ErrorKind::Dimension, "conv2d: weight size does not match geometry");
  require(bias.size() == static_cast<std::size_t>(out_channels),
          ErrorKind::Dimension, "conv2d: bias size mismatch");
  const int oh = g.conv_out(x.h());
  const int ow = g.conv_out(x.w());
  require(oh > 0 && ow > 0, ErrorKind::Dimension, "conv2d: input too small");
  Tensor y({x.n(), out_channels, oh, ow});
  const int rows = static_cast<int>(y.shape().pixels());
  if (is_pointwise(g)) {
    gemm(false, true, rows, out_channels, k_len, 1.0f, x.data(), k_len,
         weight.data(), k_len, 0.0f, y.data(), out_channels);
  } else {
    conv_tiled(x, weight, out_channels, g, oh, ow, y.data());
  }
  add_bias(y, bias);
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& dy,
                     std::span<const float> weight, ConvGeometry g,
                     std::span<float> dweight, std::span<float> dbias,
                     Tensor* dx) {
  const int in_channels = x.c();
  const int out_channels = dy.c();
  const int k_len = g.kernel * g.kernel * in_channels;
  const int oh = dy.h();
  const int ow = dy.w();
  require(oh == g.conv_out(x.h()) && ow == g.conv_out(x.w()) && dy.n() == x.n(),
          ErrorKind::Dimension, "conv2d_backward: dy shape mismatch");
  require(dweight.size() == weight.size(), ErrorKind::Dimension,
          "conv2d_backward: weight gradient size mismatch");
  const int rows = static_cast<int>(dy.shape().pixels());

  if (is_pointwise(g)) {
    gemm(true, false, out_channels, k_len, rows, 1.0f, dy.data(), out_channels,
         x.data(), k_len, 1.0f, dweight.data(), k_len);
    accumulate_bias_grad(dy, dbias);
    if (dx == nullptr) return;
    *dx = Tensor(x.shape());
    gemm(false, false, rows, k_len, out_channels, 1.0f, dy.data(), out_channels,
         weight.data(), k_len, 0.0f, dx->data(), k_len);
    return;
  }

  const Index tile = tile_rows(k_len);
  {
    const auto buf = workspace(static_cast<std::size_t>(std::min<Index>(tile, rows)) * k_len);
    for (Index r0 = 0; r0 < rows; r0 += tile) {
      const Index r1 = std::min<Index>(rows, r0 + tile);
      im2col_rows(x, g, oh, ow, r0, r1, buf.data());
      gemm(true, false, out_channels, k_len, int(r1 - r0), 1.0f,
           dy.data() + r0 * out_channels, out_channels, buf.data(), k_len, 1.0f,
           dweight.data(), k_len);
    }
  }
  accumulate_bias_grad(dy, dbias);

  if (dx == nullptr) return;
  *dx = Tensor(x.shape());
  const int k = g.kernel;
  if (g.stride == 1 && g.pad <= k - 1) {
    // stride 1: the input gradient is a convolution of dy with the
    // spatially flipped, channel-transposed kernel
    std::vector<float> flipped(weight.size());
    for (int co = 0; co < out_channels; ++co)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          for (int ci = 0; ci < in_channels; ++ci)
            flipped[((static_cast<std::size_t>(ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)) *
                        out_channels + co] =
                weight[((static_cast<std::size_t>(co) * k + ky) * k + kx) * in_channels + ci];
    conv_tiled(dy, flipped, in_channels, ConvGeometry{k, 1, k - 1 - g.pad}, x.h(), x.w(),
               dx->data());
    return;
  }
  const auto cols = workspace(static_cast<std::size_t>(rows) * k_len);
  gemm(false, false, rows, k_len, out_channels, 1.0f, dy.data(), out_channels,
       weight.data(), k_len, 0.0f, cols.data(), k_len);
  col2im(cols, g, oh, ow, *dx);
}

Tensor conv_transpose2d_forward(const Tensor& x, std::span<const float> weight,
                                std::span<const float> bias, int out_channels,
                                ConvGeometry g, int out_h, int out_w) {
  const int in_channels = x.c();
  const int k_len = g.kernel * g.kernel * out_channels;
  require(weight.size() == static_cast<std::size_t>(in_channels) * k_len,
          ErrorKind::Dimension,
          "conv_transpose2d: weight size does not match geometry");
  require(bias.size() == static_cast<std::size_t>(out_channels),
          ErrorKind::Dimension, "conv_transpose2d: bias size mismatch");
  require(out_h > 0 && out_w > 0, ErrorKind::Dimension,
          "conv_transpose2d: empty output");
  const int rows = static_cast<int>(x.shape().pixels());
  const auto cols = workspace(static_cast<std::size_t>(rows) * k_len);
  gemm(false, false, rows, k_len, in_channels, 1.0f, x.data(), in_channels,
       weight.data(), k_len, 0.0f, cols.data(), k_len);
  Tensor y({x.n(), out_channels, out_h, out_w});
  col2im(cols, g, x.h(), x.w(), y);
  add_bias(y, bias);
  return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& dy,
                               std::span<const float> weight, ConvGeometry g,
                               std::span<float> dweight,
                               std::span<float> dbias, Tensor* dx) {
  const int in_channels = x.c();
  const int out_channels = dy.c();
  const int k_len = g.kernel * g.kernel * out_channels;
  require(dy.n() == x.n(), ErrorKind::Dimension,
          "conv_transpose2d_backward: batch mismatch");
  require(dweight.size() == weight.size(), ErrorKind::Dimension,
          "conv_transpose2d_backward: weight gradient size mismatch");
  const int rows = static_cast<int>(x.shape().pixels());
  const auto cols = workspace(static_cast<std::size_t>(rows) * k_len);
  im2col(dy, g, x.h(), x.w(), cols);
  gemm(true, false, in_channels, k_len, rows, 1.0f, x.data(), in_channels,
       cols.data(), k_len, 1.0f, dweight.data(), k_len);
  accumulate_bias_grad(dy, dbias);
  if (dx == nullptr) return;
  *dx = Tensor(x.shape());
  gemm(false, true, rows, in_channels, k_len, 1.0f, cols.data(), k_len,
       weight.data(), k_len, 0.0f, dx->data(), in_channels);
}

void relu_inplace(Tensor& x) {
  float* p = x.data();
  const Index size = static_cast<Index>(x.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < size; ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
  require(y.shape() == dy.shape(), ErrorKind::Dimension,
          "relu_backward: shape mismatch");
  const float* out = y.data();
  float* grad = dy.data();
  const Index size = static_cast<Index>(y.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < size; ++i) {
    if (!(out[i] > 0.0f)) grad[i] = 0.0f;
  }
}

void sigmoid_inplace(Tensor& x) {
  float* p = x.data();
  const Index size = static_cast<Index>(x.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < size; ++i) p[i] = 1.0f / (1.0f + std::exp(-p[i]));
}

void add_inplace(Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          "add: shape mismatch " + to_string(a.shape()) + " vs " +
              to_string(b.shape()));
  float* dst = a.data();
  const float* src = b.data();
  const Index size = static_cast<Index>(a.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < size; ++i) dst[i] += src[i];
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
          ErrorKind::Dimension, "concat_channels: spatial mismatch");
  const int ca = a.c();
  const int cb = b.c();
  Tensor out({a.n(), ca + cb, a.h(), a.w()});
  const Index pixels = static_cast<Index>(a.shape().pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    float* dst = out.data() + p * (ca + cb);
    std::memcpy(dst, a.data() + p * ca, sizeof(float) * ca);
    std::memcpy(dst + ca, b.data() + p * cb, sizeof(float) * cb);
  }
  return out;
}

void split_channels(const Tensor& ab, Tensor& a, Tensor& b) {
  const int ca = a.c();
  const int cb = b.c();
  require(ab.c() == ca + cb, ErrorKind::Dimension,
          "split_channels: channel mismatch");
  const Index pixels = static_cast<Index>(ab.shape().pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    const float* src = ab.data() + p * (ca + cb);
    std::memcpy(a.data() + p * ca, src, sizeof(float) * ca);
    std::memcpy(b.data() + p * cb, src + ca, sizeof(float) * cb);
  }
}

Tensor gate_blend(const Tensor& skip, const Tensor& decoder, const Tensor& gate) {
  require(skip.shape() == decoder.shape(), ErrorKind::Dimension,
          "gate: skip " + to_string(skip.shape()) + " and decoder " +
              to_string(decoder.shape()) + " differ");
  check_rank(gate, 1, "gate");
  require(gate.n() == skip.n() && gate.h() == skip.h() && gate.w() == skip.w(),
          ErrorKind::Dimension, "gate: map does not match feature extent");
  const int channels = skip.c();
  Tensor out(skip.shape());
  const Index pixels = static_cast<Index>(skip.shape().pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    const float g = gate.data()[p];
    const float* s = skip.data() + p * channels;
    const float* d = decoder.data() + p * channels;
    float* o = out.data() + p * channels;
    for (int c = 0; c < channels; ++c) o[c] = g * s[c] + (1.0f - g) * d[c];
  }
  return out;
}

void gate_blend_backward(const Tensor& skip, const Tensor& decoder,
                         const Tensor& gate, const Tensor& dout, Tensor& dskip,
                         Tensor& ddecoder, Tensor& dgate) {
  const int channels = skip.c();
  dskip = Tensor(skip.shape());
  ddecoder = Tensor(skip.shape());
  dgate = Tensor(gate.shape());
  const Index pixels = static_cast<Index>(skip.shape().pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    const float g = gate.data()[p];
    const float* s = skip.data() + p * channels;
    const float* d = decoder.data() + p * channels;
    const float* go = dout.data() + p * channels;
    float* gs = dskip.data() + p * channels;
    float* gd = ddecoder.data() + p * channels;
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      gs[c] = g * go[c];
      gd[c] = (1.0f - g) * go[c];
      acc += static_cast<double>(go[c]) * (s[c] - d[c]);
    }
    dgate.data()[p] = static_cast<float>(acc);
  }
}

}  // namespace qairn::kernels
