#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "utilise/rng.hpp"

namespace utilise::nn {

// A learned tensor with its accumulated gradient.
template <typename Real>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<Real> value;
  std::vector<Real> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad();
  // Uniform in [-bound, bound].
  void init_uniform(Rng& rng, double bound);
  void fill(Real v);
};

// Row-major N x C x H x W activation volume.
template <typename Real>
struct Volume {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<Real> data;

  Volume() = default;
  Volume(int n_, int c_, int h_, int w_, Real fill = Real(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t frame_size() const { return static_cast<std::size_t>(c) * plane(); }
  Real* frame(int i) { return data.data() + static_cast<std::size_t>(i) * frame_size(); }
  const Real* frame(int i) const { return data.data() + static_cast<std::size_t>(i) * frame_size(); }
  Real& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  Real at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  bool same_shape(const Volume& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

// Uniform init bound is gain * sqrt(3 / fan_in); sqrt(2) keeps the activation
// variance of a ReLU stack constant (He init), 1 suits a linear/sigmoid output.
inline constexpr double kReluGain = 1.4142135623730951;
inline constexpr double kLinearGain = 1.0;

// 2-D convolution, weights [out, in, k, k] and bias [out].
template <typename Real>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding);

  // Weights uniform in +-gain*sqrt(3/fan_in), bias zero.
  void initialize(Rng& rng, double gain = kReluGain);
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_size(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

  Volume<Real> forward(const Volume<Real>& x) const;
  // Accumulates weight/bias gradients and returns dL/dx.
  Volume<Real> backward(const Volume<Real>& x, const Volume<Real>& dy);

  Param<Real> weight;
  Param<Real> bias;

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

// Transposed convolution doubling the spatial size (kernel 4, stride 2,
// padding 1). Weights [in, out, 4, 4], bias [out].
template <typename Real>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_channels, int out_channels);

  // Weights uniform in +-gain*sqrt(3/fan_in), bias zero.
  void initialize(Rng& rng, double gain = kReluGain);
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Volume<Real> forward(const Volume<Real>& x) const;
  Volume<Real> backward(const Volume<Real>& x, const Volume<Real>& dy);

  Param<Real> weight;
  Param<Real> bias;

 private:
  static constexpr int kKernel = 4;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;
  int in_ = 0, out_ = 0;
};

// Element-wise helpers. Backward variants take the forward *output*.
template <typename Real>
void relu_inplace(std::vector<Real>& v);
template <typename Real>
void relu_backward_inplace(std::vector<Real>& grad, const std::vector<Real>& output);
template <typename Real>
void sigmoid_inplace(std::vector<Real>& v);
template <typename Real>
void sigmoid_backward_inplace(std::vector<Real>& grad, const std::vector<Real>& output);

template <typename Real>
Real gelu(Real x);
template <typename Real>
Real gelu_derivative(Real x);

// im2col / col2im over a single C x H x W frame. `cols` is (C*k*k) x (Ho*Wo).
template <typename Real>
void im2col(const Real* src, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, Real* cols);
template <typename Real>
void col2im(const Real* cols, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, Real* dst);

}  // namespace utilise::nn
