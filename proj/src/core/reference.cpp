#include "qairn/reference.hpp"

#include <vector>

#include "qairn/error.hpp"

namespace qairn::reference {

namespace {

// Index of weight[o, ky, kx, i] for a [O, k, k, I] blob.
std::size_t widx(int o, int ky, int kx, int i, int k, int in_ch) {
  return ((static_cast<std::size_t>(o) * k + ky) * k + kx) * in_ch + i;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, std::span<const float> weight,
                      std::span<const float> bias, int out_channels,
                      ConvGeometry g) {
  const int cin = x.c();
  const int k = g.kernel;
  require(weight.size() == static_cast<std::size_t>(out_channels) * k * k * cin,
          ErrorKind::Dimension, "reference conv2d: weight size mismatch");
  const int oh = g.conv_out(x.h());
  const int ow = g.conv_out(x.w());
  Tensor y({x.n(), out_channels, oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_channels; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[o];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * g.stride - g.pad + ky;
              const int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
              for (int i = 0; i < cin; ++i)
                acc += static_cast<double>(weight[widx(o, ky, kx, i, k, cin)]) *
                       x.at(n, i, iy, ix);
            }
          y.at(n, o, oy, ox) = static_cast<float>(acc);
        }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& dy,
                     std::span<const float> weight, ConvGeometry g,
                     std::span<float> dweight, std::span<float> dbias,
                     Tensor* dx) {
  const int cin = x.c();
  const int cout = dy.c();
  const int k = g.kernel;
  std::vector<double> dw(weight.size(), 0.0);
  std::vector<double> db(cout, 0.0);
  std::vector<double> dxa(x.size(), 0.0);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < cout; ++o)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const double grad = dy.at(n, o, oy, ox);
          db[o] += grad;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * g.stride - g.pad + ky;
              const int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
              for (int i = 0; i < cin; ++i) {
                const std::size_t wi = widx(o, ky, kx, i, k, cin);
                dw[wi] += grad * x.at(n, i, iy, ix);
                dxa[x.offset(n, i, iy, ix)] += grad * weight[wi];
              }
            }
        }
  for (std::size_t i = 0; i < dw.size(); ++i) dweight[i] += static_cast<float>(dw[i]);
  for (int o = 0; o < cout; ++o) dbias[o] += static_cast<float>(db[o]);
  if (dx != nullptr) {
    *dx = Tensor(x.shape());
    for (std::size_t i = 0; i < dxa.size(); ++i) dx->data()[i] = static_cast<float>(dxa[i]);
  }
}

Tensor conv_transpose2d_forward(const Tensor& x, std::span<const float> weight,
                                std::span<const float> bias, int out_channels,
                                ConvGeometry g, int out_h, int out_w) {
  const int cin = x.c();
  const int k = g.kernel;
  require(weight.size() == static_cast<std::size_t>(cin) * k * k * out_channels,
          ErrorKind::Dimension, "reference conv_transpose2d: weight size mismatch");
  std::vector<double> acc(static_cast<std::size_t>(x.n()) * out_h * out_w * out_channels, 0.0);
  Tensor y({x.n(), out_channels, out_h, out_w});
  for (int n = 0; n < x.n(); ++n)
    for (int iy = 0; iy < x.h(); ++iy)
      for (int ix = 0; ix < x.w(); ++ix)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int oy = iy * g.stride - g.pad + ky;
            const int ox = ix * g.stride - g.pad + kx;
            if (oy < 0 || oy >= out_h || ox < 0 || ox >= out_w) continue;
            for (int i = 0; i < cin; ++i)
              for (int o = 0; o < out_channels; ++o)
                acc[y.offset(n, o, oy, ox)] +=
                    static_cast<double>(weight[widx(i, ky, kx, o, k, out_channels)]) *
                    x.at(n, i, iy, ix);
          }
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_channels; ++o)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox)
          y.at(n, o, oy, ox) = static_cast<float>(acc[y.offset(n, o, oy, ox)] + bias[o]);
  return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& dy,
                               std::span<const float> weight, ConvGeometry g,
                               std::span<float> dweight,
                               std::span<float> dbias, Tensor* dx) {
  const int cin = x.c();
  const int cout = dy.c();
  const int k = g.kernel;
  std::vector<double> dw(weight.size(), 0.0);
  std::vector<double> db(cout, 0.0);
  std::vector<double> dxa(x.size(), 0.0);
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox)
        for (int o = 0; o < cout; ++o) db[o] += dy.at(n, o, oy, ox);
  for (int n = 0; n < x.n(); ++n)
    for (int iy = 0; iy < x.h(); ++iy)
      for (int ix = 0; ix < x.w(); ++ix)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int oy = iy * g.stride - g.pad + ky;
            const int ox = ix * g.stride - g.pad + kx;
            if (oy < 0 || oy >= dy.h() || ox < 0 || ox >= dy.w()) continue;
            for (int i = 0; i < cin; ++i)
              for (int o = 0; o < cout; ++o) {
                const std::size_t wi = widx(i, ky, kx, o, k, cout);
                const double grad = dy.at(n, o, oy, ox);
                dw[wi] += grad * x.at(n, i, iy, ix);
                dxa[x.offset(n, i, iy, ix)] += grad * weight[wi];
              }
          }
  for (std::size_t i = 0; i < dw.size(); ++i) dweight[i] += static_cast<float>(dw[i]);
  for (int o = 0; o < cout; ++o) dbias[o] += static_cast<float>(db[o]);
  if (dx != nullptr) {
    *dx = Tensor(x.shape());
    for (std::size_t i = 0; i < dxa.size(); ++i) dx->data()[i] = static_cast<float>(dxa[i]);
  }
}

}  // namespace qairn::reference
