#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace upmix {

inline constexpr int kCanonicalSampleRate = 44100;

/// Time-domain multichannel buffer. Channel-major: `channel(c)[n]`.
///
/// Five-channel buffers use the order FL, RL, C, FR, RR (front left, rear
/// left, center, front right, rear right). This is NOT the usual WAV/SMPTE
/// order; files written by this library keep it on disk as well.
class MultichannelAudio {
public:
  MultichannelAudio() = default;
  MultichannelAudio(int channels, std::size_t samples_per_channel, int sample_rate);
  MultichannelAudio(std::vector<std::vector<double>> channels, int sample_rate);

  int channels() const { return static_cast<int>(data_.size()); }
  std::size_t samples() const { return data_.empty() ? 0 : data_.front().size(); }
  int sample_rate() const { return sample_rate_; }
  bool empty() const { return samples() == 0; }

  std::span<double> channel(int c) { return data_.at(static_cast<std::size_t>(c)); }
  std::span<const double> channel(int c) const { return data_.at(static_cast<std::size_t>(c)); }

  /// Copy of samples [begin, begin + count) on every channel; zero-pads past the end.
  MultichannelAudio slice(std::size_t begin, std::size_t count) const;

  /// Throws std::invalid_argument when channel lengths differ, the rate is
  /// non-positive, or a sample is NaN/Inf.
  void validate() const;

  bool operator==(const MultichannelAudio&) const = default;

private:
  std::vector<std::vector<double>> data_;
  int sample_rate_ = kCanonicalSampleRate;
};

enum class BitDepth { Int16, Int24, Float32 };

class WavError : public std::runtime_error {
public:
  enum class Kind { MissingFile, MalformedHeader, UnsupportedEncoding, Unwritable, InvalidSamples };

  WavError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

/// Reads 16/24-bit integer or 32-bit float PCM. Integer samples are divided
/// by 2^(bits-1).
MultichannelAudio read_wav(const std::filesystem::path& path);

/// Round trip through read_wav is exact at Float32 for float-representable
/// samples and within 2^-(bits-1) for the integer depths.
void write_wav(const std::filesystem::path& path, const MultichannelAudio& audio, BitDepth depth);

BitDepth parse_bit_depth(const std::string& text);

/// Rejects buffers whose rate differs from 44.1 kHz; the pipeline never resamples.
void require_canonical_rate(const MultichannelAudio& audio, const char* what);

}  // namespace upmix
