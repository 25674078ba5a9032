#include <benchmark/benchmark.h>

#include <cmath>

#include "upmix/dsp.hpp"
#include "upmix/metrics.hpp"
#include "upmix/nn.hpp"
#include "upmix/rng.hpp"
#include "upmix/vbap.hpp"

using namespace upmix;

namespace {

MultichannelAudio noise(int channels, std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  MultichannelAudio a(channels, samples, kCanonicalSampleRate);
  for (int c = 0; c < channels; ++c) {
    for (double& v : a.channel(c)) v = 0.5 * standard_normal(rng);
  }
  return a;
}

void BM_StftRoundTrip(benchmark::State& state) {
  const StftParams params;
  const auto x = noise(5, static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) {
    auto y = istft(stft(x, params), params, x.samples());
    benchmark::DoNotOptimize(y);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 5);
}
BENCHMARK(BM_StftRoundTrip)->Arg(44100)->Arg(97020)->Unit(benchmark::kMillisecond);

void BM_Conv2dForward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0)), stride = static_cast<int>(state.range(1));
  Rng rng(2);
  nn::Tensor3<float> in(channels, 65, 32), out;
  for (float& v : in.data) v = static_cast<float>(standard_normal(rng));
  std::vector<float> w(static_cast<std::size_t>(channels) * channels * 9), b(static_cast<std::size_t>(channels));
  for (float& v : w) v = static_cast<float>(0.1 * standard_normal(rng));
  for (auto _ : state) {
    nn::conv2d_forward<float>(in, channels, w, b, channels, 3, stride, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_Conv2dForward)->Args({8, 1})->Args({32, 1})->Args({32, 2})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(3);
  nn::Tensor3<float> in(channels, 65, 32), out, din(channels, 65, 32);
  for (float& v : in.data) v = static_cast<float>(standard_normal(rng));
  std::vector<float> w(static_cast<std::size_t>(channels) * channels * 9), b(static_cast<std::size_t>(channels));
  for (float& v : w) v = static_cast<float>(0.1 * standard_normal(rng));
  nn::conv2d_forward<float>(in, channels, w, b, channels, 3, 1, out);
  std::vector<float> dw(w.size()), db(b.size());
  for (auto _ : state) {
    nn::conv2d_backward<float>(in, channels, w, channels, 3, 1, out, &din, dw, db);
    benchmark::DoNotOptimize(din.data.data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_PanGains(benchmark::State& state) {
  const SpeakerLayout layout;
  double theta = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pan_gains(theta, layout));
    theta = std::fmod(theta + 0.37, 360.0);
  }
}
BENCHMARK(BM_PanGains);

void BM_Wild(benchmark::State& state) {
  const StftParams params;
  const auto a = magnitude(stft(noise(5, 44100, 4), params));
  const auto b = magnitude(stft(noise(5, 44100, 5), params));
  for (auto _ : state) benchmark::DoNotOptimize(wild(a, b));
}
BENCHMARK(BM_Wild)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
