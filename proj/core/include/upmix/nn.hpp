#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace upmix::nn {

/// Channels x height x width activation tensor, width contiguous. For
/// spectrogram inputs height is frequency and width is time.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T{}) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }
  bool same_shape(const Tensor3& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

/// Output extent of a "same"-padded convolution: ceil(n / stride).
inline int conv_out_extent(int n, int stride) { return (n + stride - 1) / stride; }

/// 2-D convolution over the first `in_channels` channels of `in` with
/// "same" padding (kernel/2) and the given stride. `weight` is laid out
/// [out][in][kernel][kernel]. `out` is resized to out_channels x
/// ceil(H/stride) x ceil(W/stride).
template <typename T>
void conv2d_forward(const Tensor3<T>& in, int in_channels, std::span<const T> weight, std::span<const T> bias,
                    int out_channels, int kernel, int stride, Tensor3<T>& out);

/// Accumulates gradients of conv2d_forward: weight and bias gradients always,
/// input gradient (first `in_channels` channels of `din`) when `din` is non-null.
template <typename T>
void conv2d_backward(const Tensor3<T>& in, int in_channels, std::span<const T> weight, int out_channels, int kernel,
                     int stride, const Tensor3<T>& dout, Tensor3<T>* din, std::span<T> dweight, std::span<T> dbias);

template <typename T>
inline T elu(T x) {
  return x > T(0) ? x : std::expm1(x);
}
/// ELU derivative written in terms of the activation output y = elu(x).
template <typename T>
inline T elu_grad_from_output(T y) {
  return y > T(0) ? T(1) : y + T(1);
}
template <typename T>
inline T softplus(T x) {
  return (x > T(0) ? x : T(0)) + std::log1p(std::exp(-std::abs(x)));
}
template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace upmix::nn
