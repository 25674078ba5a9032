#include <gtest/gtest.h>

#include <cmath>
#include <tuple>

#include "upmix/nn.hpp"
#include "upmix/rng.hpp"

using namespace upmix;
using namespace upmix::nn;

namespace {

struct Shape {
  int in_ch, out_ch, height, width, kernel, stride;
};

// Direct loops over output positions and taps.
struct Naive {
  Tensor3<double> out, din;
  std::vector<double> dw, db;
};

Naive naive_conv(const Tensor3<double>& in, int ci_n, const std::vector<double>& w, const std::vector<double>& b,
                 const Shape& s, const Tensor3<double>& dout) {
  const int k = s.kernel, oh = conv_out_extent(s.height, s.stride), ow = conv_out_extent(s.width, s.stride);
  Naive r;
  r.out = Tensor3<double>(s.out_ch, oh, ow);
  r.din = Tensor3<double>(in.channels, in.height, in.width);
  r.dw.assign(w.size(), 0.0);
  r.db.assign(b.size(), 0.0);
  for (int co = 0; co < s.out_ch; ++co) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = b[static_cast<std::size_t>(co)];
        const double g = dout.channel(co)[y * ow + x];
        for (int ci = 0; ci < ci_n; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * s.stride + ky - k / 2, ix = x * s.stride + kx - k / 2;
              if (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width) continue;
              const auto wi = static_cast<std::size_t>(((co * ci_n + ci) * k + ky) * k + kx);
              const double v = in.channel(ci)[iy * s.width + ix];
              acc += w[wi] * v;
              r.dw[wi] += g * v;
              r.din.channel(ci)[iy * s.width + ix] += g * w[wi];
            }
          }
        }
        r.db[static_cast<std::size_t>(co)] += g;
        r.out.channel(co)[y * ow + x] = acc;
      }
    }
  }
  return r;
}

template <typename T>
Tensor3<T> random_tensor(int c, int h, int w, Rng& rng) {
  Tensor3<T> t(c, h, w);
  for (auto& v : t.data) v = static_cast<T>(standard_normal(rng));
  return t;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(standard_normal(rng));
  return v;
}

class ConvAgainstNaive : public ::testing::TestWithParam<Shape> {};

}  // namespace

TEST_P(ConvAgainstNaive, ForwardAndBackwardMatch) {
  const Shape s = GetParam();
  Rng rng = make_rng(11, "conv", {static_cast<std::uint64_t>(s.kernel), static_cast<std::uint64_t>(s.stride)});
  // one extra input channel that the convolution must ignore
  const auto in = random_tensor<double>(s.in_ch + 1, s.height, s.width, rng);
  const auto w = random_vec<double>(static_cast<std::size_t>(s.out_ch * s.in_ch * s.kernel * s.kernel), rng);
  const auto b = random_vec<double>(static_cast<std::size_t>(s.out_ch), rng);
  const auto dout = random_tensor<double>(s.out_ch, conv_out_extent(s.height, s.stride), conv_out_extent(s.width, s.stride), rng);
  const Naive ref = naive_conv(in, s.in_ch, w, b, s, dout);

  Tensor3<double> out;
  conv2d_forward<double>(in, s.in_ch, w, b, s.out_ch, s.kernel, s.stride, out);
  ASSERT_TRUE(out.same_shape(ref.out));
  for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(out.data[i], ref.out.data[i], 1e-12);

  Tensor3<double> din(in.channels, in.height, in.width);
  std::vector<double> dw(w.size()), db(b.size());
  conv2d_backward<double>(in, s.in_ch, w, s.out_ch, s.kernel, s.stride, dout, &din, dw, db);
  for (std::size_t i = 0; i < dw.size(); ++i) EXPECT_NEAR(dw[i], ref.dw[i], 1e-11);
  for (std::size_t i = 0; i < db.size(); ++i) EXPECT_NEAR(db[i], ref.db[i], 1e-11);
  for (std::size_t i = 0; i < din.data.size(); ++i) EXPECT_NEAR(din.data[i], ref.din.data[i], 1e-11);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvAgainstNaive,
                         ::testing::Values(Shape{3, 4, 7, 6, 1, 1}, Shape{3, 4, 7, 6, 3, 1}, Shape{3, 4, 7, 6, 5, 1},
                                           Shape{3, 4, 7, 6, 1, 2}, Shape{3, 4, 7, 6, 3, 2}, Shape{2, 3, 9, 5, 5, 2},
                                           Shape{6, 5, 33, 40, 3, 1}, Shape{6, 5, 33, 40, 3, 2}, Shape{1, 1, 1, 1, 3, 1},
                                           Shape{2, 2, 2, 9, 3, 1}));

TEST(Nn, BackwardAccumulates) {
  Rng rng(4);
  const auto in = random_tensor<double>(2, 5, 5, rng);
  const auto w = random_vec<double>(2 * 2 * 9, rng);
  const auto dout = random_tensor<double>(2, 5, 5, rng);
  std::vector<double> dw1(w.size()), db1(2), dw2(w.size()), db2(2);
  conv2d_backward<double>(in, 2, w, 2, 3, 1, dout, nullptr, dw1, db1);
  conv2d_backward<double>(in, 2, w, 2, 3, 1, dout, nullptr, dw2, db2);
  conv2d_backward<double>(in, 2, w, 2, 3, 1, dout, nullptr, dw2, db2);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(dw2[i], 2 * dw1[i], 1e-12);
}

TEST(Nn, FloatTracksDouble) {
  Rng rng(8);
  const auto ind = random_tensor<double>(4, 12, 10, rng);
  const auto wd = random_vec<double>(3 * 4 * 9, rng);
  const auto bd = random_vec<double>(3, rng);
  Tensor3<float> inf(4, 12, 10);
  for (std::size_t i = 0; i < ind.data.size(); ++i) inf.data[i] = static_cast<float>(ind.data[i]);
  std::vector<float> wf(wd.begin(), wd.end()), bf(bd.begin(), bd.end());
  Tensor3<double> od;
  Tensor3<float> of;
  conv2d_forward<double>(ind, 4, wd, bd, 3, 3, 1, od);
  conv2d_forward<float>(inf, 4, wf, bf, 3, 3, 1, of);
  for (std::size_t i = 0; i < od.data.size(); ++i) EXPECT_NEAR(of.data[i], od.data[i], 1e-4);
}

TEST(Nn, ConvOutExtent) {
  EXPECT_EQ(conv_out_extent(513, 2), 257);
  EXPECT_EQ(conv_out_extent(384, 2), 192);
  EXPECT_EQ(conv_out_extent(7, 1), 7);
}

TEST(Nn, Activations) {
  EXPECT_EQ(elu(2.0), 2.0);
  EXPECT_NEAR(elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(elu_grad_from_output(elu(3.0)), 1.0);
  EXPECT_NEAR(elu_grad_from_output(elu(-0.5)), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(50.0), 50.0, 1e-12);
  EXPECT_GT(softplus(-50.0), 0.0);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-3.0) + sigmoid(3.0), 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
}

TEST(Conv, ResultDoesNotDependOnBufferAddress) {
  Rng rng(12);
  nn::Tensor3<float> in(8, 17, 12);
  for (float& v : in.data) v = static_cast<float>(standard_normal(rng));
  std::vector<float> w(8 * 8 * 9), b(8);
  for (float& v : w) v = static_cast<float>(standard_normal(rng));
  for (int stride : {1, 2}) {
    std::vector<float> first;
    for (int shift = 0; shift < 8; ++shift) {
      // copies placed behind a few stray allocations land at varying alignments
      std::vector<std::vector<char>> stray;
      for (int k = 0; k < shift; ++k) stray.emplace_back(static_cast<std::size_t>(4 * k + 1));
      const nn::Tensor3<float> x = in;
      nn::Tensor3<float> out, din(8, 17, 12);
      nn::conv2d_forward<float>(x, 8, w, b, 8, 3, stride, out);
      std::vector<float> dw(w.size()), db(b.size());
      nn::conv2d_backward<float>(x, 8, w, 8, 3, stride, out, &din, dw, db);
      std::vector<float> all = out.data;
      all.insert(all.end(), din.data.begin(), din.data.end());
      all.insert(all.end(), dw.begin(), dw.end());
      all.insert(all.end(), db.begin(), db.end());
      if (shift == 0) {
        first = all;
      } else {
        ASSERT_EQ(all, first) << "stride " << stride << " shift " << shift;
      }
    }
  }
}
