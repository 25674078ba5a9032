#include "upmix/nn.hpp"

#include <algorithm>

#include <Eigen/Core>

namespace upmix::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using PlaneMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstPlaneMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr int kTilePixels = 4096;

struct Geometry {
  int in_h, in_w, out_h, out_w, kernel, stride, pad;
};

// im2col for output rows [oy0, oy1): row r = (ci * k + ky) * k + kx.
template <typename T>
void im2col(const Tensor3<T>& in, int in_channels, const Geometry& g, int oy0, int oy1, RowMat<T>& cols) {
  const int tile_rows = oy1 - oy0;
  cols.resize(static_cast<Eigen::Index>(in_channels) * g.kernel * g.kernel,
              static_cast<Eigen::Index>(tile_rows) * g.out_w);
  for (int ci = 0; ci < in_channels; ++ci) {
    const T* src = in.channel(ci);
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols.row((ci * g.kernel + ky) * g.kernel + kx).data();
        for (int oy = oy0; oy < oy1; ++oy) {
          T* dst = row + static_cast<std::ptrdiff_t>(oy - oy0) * g.out_w;
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* line = src + static_cast<std::ptrdiff_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int in_channels, const Geometry& g, int oy0, int oy1, Tensor3<T>& din) {
  for (int ci = 0; ci < in_channels; ++ci) {
    T* dst = din.channel(ci);
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols.row((ci * g.kernel + ky) * g.kernel + kx).data();
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* s = row + static_cast<std::ptrdiff_t>(oy - oy0) * g.out_w;
          T* line = dst + static_cast<std::ptrdiff_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in_w) line[ix] += s[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Geometry geometry(const Tensor3<T>& in, int kernel, int stride) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  return {in.height, in.width, conv_out_extent(in.height, stride), conv_out_extent(in.width, stride), kernel, stride,
          kernel / 2};
}

// Stride-1 convolutions skip im2col: every tap is one GEMM between the weight
// slice and the input plane shifted by dy * W + dx in flattened order. Reads
// that wrap into the neighbouring row land on columns zeroed in a per-dx copy
// of the input; reads outside the plane are excluded from the column range.

template <typename T>
using TapMap = Eigen::Map<const RowMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using MutTapMap = Eigen::Map<RowMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

struct Shift {
  std::ptrdiff_t offset;
  std::ptrdiff_t begin;
  std::ptrdiff_t end;
};

Shift shift_for(const Geometry& g, int ky, int kx) {
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(g.in_h) * g.in_w;
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(ky - g.pad) * g.in_w + (kx - g.pad);
  return {off, std::max<std::ptrdiff_t>(0, -off), std::min(plane, plane - off)};
}

// Copy of the first `channels` planes with the columns that a dx-shift would
// wrap onto set to zero.
template <typename T>
std::vector<T> masked_copy(const T* src, int channels, const Geometry& g, int dx) {
  const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  std::vector<T> out(src, src + plane * static_cast<std::size_t>(channels));
  const int lo = dx < 0 ? g.in_w + dx : 0;
  const int hi = dx < 0 ? g.in_w : dx;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < g.in_h; ++y) {
      T* row = out.data() + c * plane + static_cast<std::size_t>(y) * g.in_w;
      std::fill(row + std::max(lo, 0), row + std::min(hi, g.in_w), T(0));
    }
  }
  return out;
}

template <typename T>
void zero_columns(T* data, int channels, const Geometry& g, int dx) {
  const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const int lo = dx < 0 ? g.in_w + dx : 0;
  const int hi = dx < 0 ? g.in_w : dx;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < g.in_h; ++y) {
      T* row = data + c * plane + static_cast<std::size_t>(y) * g.in_w;
      std::fill(row + std::max(lo, 0), row + std::min(hi, g.in_w), T(0));
    }
  }
}

template <typename T>
TapMap<T> weight_tap(const T* weight, int out_channels, int in_channels, int kernel, int ky, int kx) {
  const Eigen::Index taps = static_cast<Eigen::Index>(kernel) * kernel;
  return TapMap<T>(weight + ky * kernel + kx, out_channels, in_channels,
                   Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(in_channels * taps, taps));
}

template <typename T>
void shifted_forward(const Tensor3<T>& in, int in_channels, const T* weight, int out_channels, const Geometry& g,
                     Tensor3<T>& out) {
  const auto plane = static_cast<Eigen::Index>(in.plane());
  std::vector<std::vector<T>> variants(static_cast<std::size_t>(g.kernel));
  for (int kx = 0; kx < g.kernel; ++kx) {
    if (kx != g.pad) variants[static_cast<std::size_t>(kx)] = masked_copy(in.data.data(), in_channels, g, kx - g.pad);
  }
  for (int ky = 0; ky < g.kernel; ++ky) {
    for (int kx = 0; kx < g.kernel; ++kx) {
      const Shift s = shift_for(g, ky, kx);
      if (s.end <= s.begin) continue;
      const T* src = kx == g.pad ? in.data.data() : variants[static_cast<std::size_t>(kx)].data();
      ConstPlaneMap<T> x(src + s.begin + s.offset, in_channels, s.end - s.begin, Eigen::OuterStride<>(plane));
      PlaneMap<T> o(out.data.data() + s.begin, out_channels, s.end - s.begin, Eigen::OuterStride<>(plane));
      o.noalias() += weight_tap(weight, out_channels, in_channels, g.kernel, ky, kx) * x;
    }
  }
}

template <typename T>
void shifted_backward(const Tensor3<T>& in, int in_channels, const T* weight, int out_channels, const Geometry& g,
                      const Tensor3<T>& dout, Tensor3<T>* din, T* dweight) {
  const auto plane = static_cast<Eigen::Index>(in.plane());
  const Eigen::Index taps = static_cast<Eigen::Index>(g.kernel) * g.kernel;
  for (int kx = 0; kx < g.kernel; ++kx) {
    const int dx = kx - g.pad;
    const std::vector<T> masked = dx == 0 ? std::vector<T>() : masked_copy(in.data.data(), in_channels, g, dx);
    const T* src = dx == 0 ? in.data.data() : masked.data();
    std::vector<T> dmasked;
    T* dst = nullptr;
    if (din != nullptr) {
      if (dx == 0) {
        dst = din->data.data();
      } else {
        dmasked.assign(static_cast<std::size_t>(plane) * static_cast<std::size_t>(in_channels), T(0));
        dst = dmasked.data();
      }
    }
    for (int ky = 0; ky < g.kernel; ++ky) {
      const Shift s = shift_for(g, ky, kx);
      if (s.end <= s.begin) continue;
      ConstPlaneMap<T> x(src + s.begin + s.offset, in_channels, s.end - s.begin, Eigen::OuterStride<>(plane));
      ConstPlaneMap<T> d(dout.data.data() + s.begin, out_channels, s.end - s.begin, Eigen::OuterStride<>(plane));
      MutTapMap<T> dw(dweight + ky * g.kernel + kx, out_channels, in_channels,
                      Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(in_channels * taps, taps));
      dw.noalias() += d * x.transpose();
      if (dst != nullptr) {
        PlaneMap<T> dx_map(dst + s.begin + s.offset, in_channels, s.end - s.begin, Eigen::OuterStride<>(plane));
        dx_map.noalias() += weight_tap(weight, out_channels, in_channels, g.kernel, ky, kx).transpose() * d;
      }
    }
    if (din != nullptr && dx != 0) {
      zero_columns(dmasked.data(), in_channels, g, dx);
      T* target = din->data.data();
      for (std::size_t i = 0; i < dmasked.size(); ++i) target[i] += dmasked[i];
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor3<T>& in, int in_channels, std::span<const T> weight, std::span<const T> bias,
                    int out_channels, int kernel, int stride, Tensor3<T>& out) {
  if (in_channels > in.channels) throw std::invalid_argument("conv2d_forward: not enough input channels");
  const Geometry g = geometry(in, kernel, stride);
  const auto taps = static_cast<Eigen::Index>(in_channels) * kernel * kernel;
  if (weight.size() != static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(taps) ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw std::invalid_argument("conv2d_forward: parameter size mismatch");
  }
  if (out.channels != out_channels || out.height != g.out_h || out.width != g.out_w) {
    out = Tensor3<T>(out_channels, g.out_h, g.out_w);
  }
  const Eigen::Map<const RowMat<T>> w(weight.data(), out_channels, taps);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), out_channels);
  if (stride == 1 && kernel > 1) {
    for (int co = 0; co < out_channels; ++co) std::fill_n(out.channel(co), out.plane(), bias[static_cast<std::size_t>(co)]);
    shifted_forward(in, in_channels, weight.data(), out_channels, g, out);
    return;
  }
  const int rows_per_tile = std::max(1, kTilePixels / std::max(1, g.out_w));
  RowMat<T> cols;
  for (int oy0 = 0; oy0 < g.out_h; oy0 += rows_per_tile) {
    const int oy1 = std::min(g.out_h, oy0 + rows_per_tile);
    im2col(in, in_channels, g, oy0, oy1, cols);
    PlaneMap<T> o(out.data.data() + static_cast<std::ptrdiff_t>(oy0) * g.out_w, out_channels,
                  static_cast<Eigen::Index>(oy1 - oy0) * g.out_w, Eigen::OuterStride<>(static_cast<Eigen::Index>(out.plane())));
    o.noalias() = w * cols;
    o.colwise() += b;
  }
}

template <typename T>
void conv2d_backward(const Tensor3<T>& in, int in_channels, std::span<const T> weight, int out_channels, int kernel,
                     int stride, const Tensor3<T>& dout, Tensor3<T>* din, std::span<T> dweight, std::span<T> dbias) {
  const Geometry g = geometry(in, kernel, stride);
  if (dout.channels != out_channels || dout.height != g.out_h || dout.width != g.out_w) {
    throw std::invalid_argument("conv2d_backward: output gradient shape mismatch");
  }
  if (din != nullptr && !din->same_shape(in)) throw std::invalid_argument("conv2d_backward: input gradient shape mismatch");
  const auto taps = static_cast<Eigen::Index>(in_channels) * kernel * kernel;
  const Eigen::Map<const RowMat<T>> w(weight.data(), out_channels, taps);
  Eigen::Map<RowMat<T>> dw(dweight.data(), out_channels, taps);
  // plain loop: Eigen's vectorized sum would order terms by buffer alignment
  for (int co = 0; co < out_channels; ++co) {
    const T* d = dout.channel(co);
    T acc = T(0);
    for (std::size_t i = 0; i < dout.plane(); ++i) acc += d[i];
    dbias[static_cast<std::size_t>(co)] += acc;
  }
  if (stride == 1 && kernel > 1) {
    shifted_backward(in, in_channels, weight.data(), out_channels, g, dout, din, dweight.data());
    return;
  }
  const int rows_per_tile = std::max(1, kTilePixels / std::max(1, g.out_w));
  RowMat<T> cols;
  RowMat<T> dcols;
  for (int oy0 = 0; oy0 < g.out_h; oy0 += rows_per_tile) {
    const int oy1 = std::min(g.out_h, oy0 + rows_per_tile);
    im2col(in, in_channels, g, oy0, oy1, cols);
    ConstPlaneMap<T> d(dout.data.data() + static_cast<std::ptrdiff_t>(oy0) * g.out_w, out_channels,
                       static_cast<Eigen::Index>(oy1 - oy0) * g.out_w,
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(dout.plane())));
    dw.noalias() += d * cols.transpose();
    if (din != nullptr) {
      dcols.noalias() = w.transpose() * d;
      col2im_add(dcols, in_channels, g, oy0, oy1, *din);
    }
  }
}

#define UPMIX_INSTANTIATE_CONV(T)                                                                                   \
  template void conv2d_forward<T>(const Tensor3<T>&, int, std::span<const T>, std::span<const T>, int, int, int,   \
                                  Tensor3<T>&);                                                                    \
  template void conv2d_backward<T>(const Tensor3<T>&, int, std::span<const T>, int, int, int, const Tensor3<T>&, \
                                   Tensor3<T>*, std::span<T>, std::span<T>);

UPMIX_INSTANTIATE_CONV(float)
UPMIX_INSTANTIATE_CONV(double)

#undef UPMIX_INSTANTIATE_CONV

}  // namespace upmix::nn
