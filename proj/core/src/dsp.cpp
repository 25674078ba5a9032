#include "upmix/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace upmix {

std::size_t StftParams::frames_for(std::size_t n) const {
  if (centered) return n / static_cast<std::size_t>(hop) + 1;
  if (n < static_cast<std::size_t>(fft_size)) return 0;
  return (n - static_cast<std::size_t>(fft_size)) / static_cast<std::size_t>(hop) + 1;
}

void StftParams::validate() const {
  if (fft_size < 2 || fft_size % 2 != 0) throw std::invalid_argument("StftParams: fft_size must be even and >= 2");
  if (hop < 1 || hop > fft_size) throw std::invalid_argument("StftParams: hop must be in [1, fft_size]");
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

namespace {

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and executed through the new-array interface afterwards.
struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

class PlanCache {
public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  PlanPair get(int n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    double* real = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* cplx = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    // FFTW_ESTIMATE keeps the chosen algorithm, and thus the rounding, identical run to run.
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(n, real, cplx, FFTW_ESTIMATE);
    p.inverse = fftw_plan_dft_c2r_1d(n, cplx, real, FFTW_ESTIMATE);
    fftw_free(real);
    fftw_free(cplx);
    plans_.emplace(n, p);
    return p;
  }

private:
  std::mutex mutex_;
  std::map<int, PlanPair> plans_;
};

struct FftBuffers {
  explicit FftBuffers(int n)
      : real(fftw_alloc_real(static_cast<std::size_t>(n))),
        cplx(fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1))) {}
  ~FftBuffers() {
    fftw_free(real);
    fftw_free(cplx);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;

  double* real;
  fftw_complex* cplx;
};

// Reflect index into [0, n) without repeating the edge sample; repeats as needed.
std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

ComplexSpectrogram stft(const MultichannelAudio& audio, const StftParams& params) {
  params.validate();
  if (audio.empty()) throw std::invalid_argument("stft: empty input");
  const auto n = static_cast<std::ptrdiff_t>(audio.samples());
  const int nfft = params.fft_size;
  const std::size_t frames = params.frames_for(audio.samples());
  if (frames == 0) throw std::invalid_argument("stft: input shorter than one frame");

  const auto window = hann_window(nfft);
  const PlanPair plan = PlanCache::instance().get(nfft);
  FftBuffers buf(nfft);
  ComplexSpectrogram spec(audio.channels(), params.bins(), static_cast<int>(frames));
  const std::ptrdiff_t offset = params.centered ? nfft / 2 : 0;

  for (int c = 0; c < audio.channels(); ++c) {
    const auto x = audio.channel(c);
    for (std::size_t t = 0; t < frames; ++t) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * params.hop - offset;
      for (int k = 0; k < nfft; ++k) {
        const std::ptrdiff_t idx = start + k;
        const double v = (idx >= 0 && idx < n) ? x[static_cast<std::size_t>(idx)]
                                                : x[static_cast<std::size_t>(reflect(idx, n))];
        buf.real[k] = v * window[static_cast<std::size_t>(k)];
      }
      fftw_execute_dft_r2c(plan.forward, buf.real, buf.cplx);
      for (int f = 0; f < params.bins(); ++f) {
        spec.at(c, f, static_cast<int>(t)) = {buf.cplx[f][0], buf.cplx[f][1]};
      }
    }
  }
  return spec;
}

MultichannelAudio istft(const ComplexSpectrogram& spec, const StftParams& params, std::optional<std::size_t> length,
                        int sample_rate) {
  params.validate();
  if (spec.bins() != params.bins()) {
    throw std::invalid_argument("istft: spectrogram has " + std::to_string(spec.bins()) + " bins, params expect " +
                                std::to_string(params.bins()));
  }
  if (spec.frames() < 1 || spec.channels() < 1) throw std::invalid_argument("istft: empty spectrogram");
  const int nfft = params.fft_size;
  const std::size_t frames = static_cast<std::size_t>(spec.frames());
  const std::size_t out_len = length.value_or((frames - 1) * static_cast<std::size_t>(params.hop));
  if (params.frames_for(out_len) != frames) {
    throw std::invalid_argument("istft: requested length is inconsistent with the frame count");
  }

  const auto window = hann_window(nfft);
  const PlanPair plan = PlanCache::instance().get(nfft);
  FftBuffers buf(nfft);
  const std::ptrdiff_t offset = params.centered ? nfft / 2 : 0;
  const std::size_t padded = (frames - 1) * static_cast<std::size_t>(params.hop) + static_cast<std::size_t>(nfft);

  std::vector<double> norm(padded, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int k = 0; k < nfft; ++k) {
      const double w = window[static_cast<std::size_t>(k)];
      norm[t * static_cast<std::size_t>(params.hop) + static_cast<std::size_t>(k)] += w * w;
    }
  }

  MultichannelAudio out(spec.channels(), out_len, sample_rate);
  std::vector<double> acc(padded);
  for (int c = 0; c < spec.channels(); ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (int f = 0; f < params.bins(); ++f) {
        const auto v = spec.at(c, f, static_cast<int>(t));
        buf.cplx[f][0] = v.real();
        buf.cplx[f][1] = v.imag();
      }
      // The c2r transform ignores imaginary parts of DC and Nyquist.
      fftw_execute_dft_c2r(plan.inverse, buf.cplx, buf.real);
      for (int k = 0; k < nfft; ++k) {
        acc[t * static_cast<std::size_t>(params.hop) + static_cast<std::size_t>(k)] +=
            buf.real[k] / nfft * window[static_cast<std::size_t>(k)];
      }
    }
    auto y = out.channel(c);
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(offset);
      y[i] = norm[j] > 1e-10 ? acc[j] / norm[j] : 0.0;
    }
  }
  return out;
}

MagPhase split_mag_phase(const ComplexSpectrogram& spec) {
  MagPhase out{MagnitudeSpectrogram(spec.channels(), spec.bins(), spec.frames()),
               PhaseSpectrogram(spec.channels(), spec.bins(), spec.frames())};
  const auto src = spec.values();
  auto mag = out.magnitude.values();
  auto ph = out.phase.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mag[i] = std::abs(src[i]);
    ph[i] = (src[i] == std::complex<double>{}) ? 0.0 : std::arg(src[i]);
    // std::arg maps the negative real axis to +pi or -pi depending on the sign of zero.
    if (ph[i] == -std::numbers::pi) ph[i] = std::numbers::pi;
  }
  return out;
}

ComplexSpectrogram combine_mag_phase(const MagnitudeSpectrogram& magnitude, const PhaseSpectrogram& phase) {
  if (!magnitude.same_shape(phase)) throw std::invalid_argument("combine_mag_phase: shape mismatch");
  ComplexSpectrogram out(magnitude.channels(), magnitude.bins(), magnitude.frames());
  const auto m = magnitude.values();
  const auto p = phase.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::polar(m[i], p[i]);
  return out;
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
  MagnitudeSpectrogram out(spec.channels(), spec.bins(), spec.frames());
  const auto src = spec.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::abs(src[i]);
  return out;
}

std::vector<SampleRange> extract_segments(const MultichannelAudio& audio, std::size_t segment_samples,
                                          std::span<const MultichannelAudio> stems, double silence_floor_db) {
  if (segment_samples == 0) throw std::invalid_argument("extract_segments: segment length must be positive");
  for (const auto& s : stems) {
    if (s.samples() != audio.samples() || s.sample_rate() != audio.sample_rate()) {
      throw std::invalid_argument("extract_segments: stems must share length and rate with the mix");
    }
  }
  // Compare mean squares against the floor to avoid a sqrt/log per window.
  const double floor_ms = std::pow(10.0, silence_floor_db / 10.0);
  std::vector<SampleRange> out;
  const std::size_t count = audio.samples() / segment_samples;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t begin = i * segment_samples;
    bool active = false;
    for (const auto& s : stems) {
      for (int c = 0; c < s.channels() && !active; ++c) {
        const auto x = s.channel(c);
        double sum = 0.0;
        for (std::size_t k = begin; k < begin + segment_samples; ++k) sum += x[k] * x[k];
        active = sum / static_cast<double>(segment_samples) > floor_ms;
      }
      if (active) break;
    }
    if (active) out.push_back({begin, segment_samples});
  }
  return out;
}

void AnalysisProfile::validate() const {
  stft.validate();
  if (segment_samples < static_cast<std::size_t>(stft.hop)) {
    throw std::invalid_argument("AnalysisProfile: segment shorter than one hop");
  }
  if (segment_samples % static_cast<std::size_t>(stft.hop) != 0) {
    throw std::invalid_argument("AnalysisProfile: segment length must be a multiple of the hop");
  }
}

AnalysisProfile AnalysisProfile::full() { return {"full", StftParams{1024, 256, true}, 98048}; }

AnalysisProfile AnalysisProfile::toy() { return {"toy", StftParams{128, 32, true}, 992}; }

AnalysisProfile AnalysisProfile::by_name(const std::string& name) {
  if (name == "full") return full();
  if (name == "toy") return toy();
  throw std::invalid_argument("unknown analysis profile '" + name + "' (expected full or toy)");
}

}  // namespace upmix
