#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "upmix/audio_io.hpp"

namespace upmix {

/// Hann-windowed STFT settings. Defaults are 1024-sample frames at 75% overlap.
struct StftParams {
  int fft_size = 1024;
  int hop = 256;
  bool centered = true;  // reflect-pad fft_size/2 on both sides

  int bins() const { return fft_size / 2 + 1; }
  /// Frames produced for `n` input samples: floor(n/hop) + 1 when centered.
  std::size_t frames_for(std::size_t n) const;
  void validate() const;
  bool operator==(const StftParams&) const = default;
};

/// Periodic Hann window.
std::vector<double> hann_window(int length);

/// Channels x bins x frames tensor, frames contiguous.
template <typename T>
class Spectrogram {
public:
  Spectrogram() = default;
  Spectrogram(int channels, int bins, int frames)
      : channels_(channels), bins_(bins), frames_(frames),
        data_(static_cast<std::size_t>(channels) * bins * frames, T{}) {
    if (channels < 0 || bins < 0 || frames < 0) throw std::invalid_argument("Spectrogram: negative extent");
  }

  int channels() const { return channels_; }
  int bins() const { return bins_; }
  int frames() const { return frames_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(bins_) * frames_; }
  std::size_t size() const { return data_.size(); }

  T& at(int c, int f, int t) { return data_[index(c, f, t)]; }
  const T& at(int c, int f, int t) const { return data_[index(c, f, t)]; }

  std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Spectrogram& o) const {
    return channels_ == o.channels_ && bins_ == o.bins_ && frames_ == o.frames_;
  }
  bool operator==(const Spectrogram&) const = default;

private:
  std::size_t index(int c, int f, int t) const {
    return (static_cast<std::size_t>(c) * bins_ + f) * frames_ + t;
  }

  int channels_ = 0;
  int bins_ = 0;
  int frames_ = 0;
  std::vector<T> data_;
};

using ComplexSpectrogram = Spectrogram<std::complex<double>>;
using MagnitudeSpectrogram = Spectrogram<double>;
using PhaseSpectrogram = Spectrogram<double>;

ComplexSpectrogram stft(const MultichannelAudio& audio, const StftParams& params = {});

/// Weighted overlap-add inverse. `length` defaults to (frames - 1) * hop.
MultichannelAudio istft(const ComplexSpectrogram& spec, const StftParams& params = {},
                        std::optional<std::size_t> length = std::nullopt,
                        int sample_rate = kCanonicalSampleRate);

struct MagPhase {
  MagnitudeSpectrogram magnitude;
  PhaseSpectrogram phase;  // (-pi, pi]; exactly 0 where the value is 0
};

MagPhase split_mag_phase(const ComplexSpectrogram& spec);
ComplexSpectrogram combine_mag_phase(const MagnitudeSpectrogram& magnitude, const PhaseSpectrogram& phase);
MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec);

struct SampleRange {
  std::size_t begin = 0;
  std::size_t count = 0;
  bool operator==(const SampleRange&) const = default;
};

inline constexpr double kDefaultSilenceFloorDb = -60.0;

/// Consecutive non-overlapping windows of `segment_samples` in which at least
/// one stem's RMS exceeds `silence_floor_db` dBFS. Trailing partial windows
/// are dropped.
std::vector<SampleRange> extract_segments(const MultichannelAudio& audio, std::size_t segment_samples,
                                          std::span<const MultichannelAudio> stems,
                                          double silence_floor_db = kDefaultSilenceFloorDb);

/// STFT settings plus the fixed training segment length.
///
/// `full()` reproduces the 513 x 384 spectrogram shape: 98,048 samples at
/// hop 256 give floor(98048/256) + 1 = 384 frames. `toy()` is a scaled-down
/// analogue (65 x 32) used for desk-scale training and tests.
struct AnalysisProfile {
  std::string name = "full";
  StftParams stft;
  std::size_t segment_samples = 98048;

  int bins() const { return stft.bins(); }
  int frames() const { return static_cast<int>(stft.frames_for(segment_samples)); }
  void validate() const;

  static AnalysisProfile full();
  static AnalysisProfile toy();
  static AnalysisProfile by_name(const std::string& name);
  bool operator==(const AnalysisProfile&) const = default;
};

}  // namespace upmix
