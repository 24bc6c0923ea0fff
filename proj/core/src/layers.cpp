#include "utilise/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace utilise::nn {
namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<Mat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

template <typename Real>
Param<Real>::Param(std::string n, std::vector<int> s)
    : name(std::move(n)), shape(std::move(s)), value(product(shape), Real(0)), grad(value.size(), Real(0)) {}

template <typename Real>
void Param<Real>::zero_grad() {
  std::fill(grad.begin(), grad.end(), Real(0));
}

template <typename Real>
void Param<Real>::init_uniform(Rng& rng, double bound) {
  for (Real& v : value) v = static_cast<Real>(rng.uniform(-bound, bound));
}

template <typename Real>
void Param<Real>::fill(Real v) {
  std::fill(value.begin(), value.end(), v);
}

template <typename Real>
void im2col(const Real* src, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, Real* cols) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const Real* plane = src + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        Real* row = cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          Real* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Real(0));
            continue;
          }
          const Real* line = plane + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            const int lo = std::min(out_w, std::max(0, pad - kx));
            const int hi = std::min(out_w, width + pad - kx);
            for (int ox = 0; ox < lo; ++ox) dst[ox] = Real(0);
            for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox - pad + kx];
            for (int ox = std::max(hi, lo); ox < out_w; ++ox) dst[ox] = Real(0);
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < width) ? line[ix] : Real(0);
            }
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Real* cols, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, Real* dst) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    Real* plane = dst + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Real* row = cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          Real* line = plane + static_cast<std::size_t>(iy) * width;
          const Real* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Real>
Conv2d<Real>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                     int stride, int padding)
    : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {}

template <typename Real>
void Conv2d<Real>::initialize(Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / (static_cast<double>(in_) * k_ * k_));
  weight.init_uniform(rng, bound);
  bias.fill(Real(0));
}

template <typename Real>
Volume<Real> Conv2d<Real>::forward(const Volume<Real>& x) const {
  if (x.c != in_) throw std::invalid_argument(weight.name + ": input channel mismatch");
  const int ho = output_size(x.h);
  const int wo = output_size(x.w);
  Volume<Real> y(x.n, out_, ho, wo);
  const int taps = in_ * k_ * k_;
  const int pixels = ho * wo;
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<Real> cols(direct ? 0 : static_cast<std::size_t>(taps) * pixels);
  ConstMatMap<Real> w(weight.value.data(), out_, taps);
  Eigen::Map<const Vec<Real>> b(bias.value.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    const Real* src = x.frame(i);
    if (!direct) {
      im2col(src, in_, x.h, x.w, k_, stride_, pad_, ho, wo, cols.data());
      src = cols.data();
    }
    ConstMatMap<Real> c(src, taps, pixels);
    MatMap<Real> out(y.frame(i), out_, pixels);
    out.noalias() = w * c;
    out.colwise() += b;
  }
  return y;
}

template <typename Real>
Volume<Real> Conv2d<Real>::backward(const Volume<Real>& x, const Volume<Real>& dy) {
  const int ho = output_size(x.h);
  const int wo = output_size(x.w);
  if (dy.n != x.n || dy.c != out_ || dy.h != ho || dy.w != wo) {
    throw std::invalid_argument(weight.name + ": gradient shape mismatch");
  }
  Volume<Real> dx(x.n, in_, x.h, x.w);
  const int taps = in_ * k_ * k_;
  const int pixels = ho * wo;
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<Real> cols(direct ? 0 : static_cast<std::size_t>(taps) * pixels);
  std::vector<Real> dcols(direct ? 0 : static_cast<std::size_t>(taps) * pixels);
  ConstMatMap<Real> w(weight.value.data(), out_, taps);
  MatMap<Real> dw(weight.grad.data(), out_, taps);
  Eigen::Map<Vec<Real>> db(bias.grad.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    const Real* src = x.frame(i);
    if (!direct) {
      im2col(src, in_, x.h, x.w, k_, stride_, pad_, ho, wo, cols.data());
      src = cols.data();
    }
    ConstMatMap<Real> c(src, taps, pixels);
    ConstMatMap<Real> g(dy.frame(i), out_, pixels);
    dw.noalias() += g * c.transpose();
    // Scalar loop: Eigen's vectorized row sums depend on buffer alignment.
    for (int o = 0; o < out_; ++o) {
      const Real* row = dy.frame(i) + static_cast<std::size_t>(o) * pixels;
      Real s = 0;
      for (int q = 0; q < pixels; ++q) s += row[q];
      db[o] += s;
    }
    if (direct) {
      MatMap<Real>(dx.frame(i), taps, pixels).noalias() = w.transpose() * g;
    } else {
      MatMap<Real>(dcols.data(), taps, pixels).noalias() = w.transpose() * g;
      col2im(dcols.data(), in_, x.h, x.w, k_, stride_, pad_, ho, wo, dx.frame(i));
    }
  }
  return dx;
}

template <typename Real>
ConvTranspose2d<Real>::ConvTranspose2d(const std::string& name, int in_channels, int out_channels)
    : weight(name + ".weight", {in_channels, out_channels, kKernel, kKernel}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels) {}

template <typename Real>
void ConvTranspose2d<Real>::initialize(Rng& rng, double gain) {
  // Each output pixel receives (k / stride)^2 taps per input channel.
  const double fan_in = static_cast<double>(in_) * (kKernel / kStride) * (kKernel / kStride);
  const double bound = gain * std::sqrt(3.0 / fan_in);
  weight.init_uniform(rng, bound);
  bias.fill(Real(0));
}

template <typename Real>
Volume<Real> ConvTranspose2d<Real>::forward(const Volume<Real>& x) const {
  if (x.c != in_) throw std::invalid_argument(weight.name + ": input channel mismatch");
  const int ho = x.h * kStride;
  const int wo = x.w * kStride;
  Volume<Real> y(x.n, out_, ho, wo);
  const int taps = out_ * kKernel * kKernel;
  const int pixels = x.h * x.w;
  std::vector<Real> cols(static_cast<std::size_t>(taps) * pixels);
  ConstMatMap<Real> w(weight.value.data(), in_, taps);
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<Real> xin(x.frame(i), in_, pixels);
    MatMap<Real>(cols.data(), taps, pixels).noalias() = w.transpose() * xin;
    Real* dst = y.frame(i);
    col2im(cols.data(), out_, ho, wo, kKernel, kStride, kPad, x.h, x.w, dst);
    for (int c = 0; c < out_; ++c) {
      Real* plane = dst + static_cast<std::size_t>(c) * ho * wo;
      const Real b = bias.value[static_cast<std::size_t>(c)];
      for (int p = 0; p < ho * wo; ++p) plane[p] += b;
    }
  }
  return y;
}

template <typename Real>
Volume<Real> ConvTranspose2d<Real>::backward(const Volume<Real>& x, const Volume<Real>& dy) {
  const int ho = x.h * kStride;
  const int wo = x.w * kStride;
  if (dy.n != x.n || dy.c != out_ || dy.h != ho || dy.w != wo) {
    throw std::invalid_argument(weight.name + ": gradient shape mismatch");
  }
  Volume<Real> dx(x.n, in_, x.h, x.w);
  const int taps = out_ * kKernel * kKernel;
  const int pixels = x.h * x.w;
  std::vector<Real> dcols(static_cast<std::size_t>(taps) * pixels);
  ConstMatMap<Real> w(weight.value.data(), in_, taps);
  MatMap<Real> dw(weight.grad.data(), in_, taps);
  for (int i = 0; i < x.n; ++i) {
    const Real* g = dy.frame(i);
    im2col(g, out_, ho, wo, kKernel, kStride, kPad, x.h, x.w, dcols.data());
    ConstMatMap<Real> dc(dcols.data(), taps, pixels);
    ConstMatMap<Real> xin(x.frame(i), in_, pixels);
    dw.noalias() += xin * dc.transpose();
    MatMap<Real>(dx.frame(i), in_, pixels).noalias() = w * dc;
    for (int c = 0; c < out_; ++c) {
      const Real* plane = g + static_cast<std::size_t>(c) * ho * wo;
      Real sum = 0;
      for (int p = 0; p < ho * wo; ++p) sum += plane[p];
      bias.grad[static_cast<std::size_t>(c)] += sum;
    }
  }
  return dx;
}

template <typename Real>
void relu_inplace(std::vector<Real>& v) {
  for (Real& x : v) x = x > Real(0) ? x : Real(0);
}

template <typename Real>
void relu_backward_inplace(std::vector<Real>& grad, const std::vector<Real>& output) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > Real(0))) grad[i] = Real(0);
  }
}

template <typename Real>
void sigmoid_inplace(std::vector<Real>& v) {
  for (Real& x : v) x = Real(1) / (Real(1) + std::exp(-x));
}

template <typename Real>
void sigmoid_backward_inplace(std::vector<Real>& grad, const std::vector<Real>& output) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= output[i] * (Real(1) - output[i]);
}

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(std::numbers::sqrt2 / 2)));
}

template <typename Real>
Real gelu_derivative(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(std::numbers::sqrt2 / 2)));
  const Real pdf = std::exp(Real(-0.5) * x * x) * Real(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

#define UTILISE_INSTANTIATE(Real)                                                                  \
  template struct Param<Real>;                                                                     \
  template class Conv2d<Real>;                                                                     \
  template class ConvTranspose2d<Real>;                                                            \
  template void relu_inplace<Real>(std::vector<Real>&);                                            \
  template void relu_backward_inplace<Real>(std::vector<Real>&, const std::vector<Real>&);         \
  template void sigmoid_inplace<Real>(std::vector<Real>&);                                         \
  template void sigmoid_backward_inplace<Real>(std::vector<Real>&, const std::vector<Real>&);      \
  template Real gelu<Real>(Real);                                                                  \
  template Real gelu_derivative<Real>(Real);                                                       \
  template void im2col<Real>(const Real*, int, int, int, int, int, int, int, int, Real*);          \
  template void col2im<Real>(const Real*, int, int, int, int, int, int, int, int, Real*);

UTILISE_INSTANTIATE(float)
UTILISE_INSTANTIATE(double)

#undef UTILISE_INSTANTIATE

}  // namespace utilise::nn
