#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "upmix/audio_io.hpp"
#include "upmix/dsp.hpp"

namespace upmix {

/// Channel indices of the five-speaker layout, in on-disk order.
enum Channel : int { FL = 0, RL = 1, C = 2, FR = 3, RR = 4 };
inline constexpr int kSurroundChannels = 5;
inline constexpr std::array<const char*, kSurroundChannels> kChannelNames{"FL", "RL", "C", "FR", "RR"};

/// Azimuths are in degrees, counterclockwise-positive with 0 at front center,
/// so the left hemisphere is positive.
double normalize_degrees(double deg);  // -> [0, 360)
double circular_distance_degrees(double a, double b);  // -> [0, 180]

/// Speaker azimuths in channel order [FL, RL, C, FR, RR].
struct SpeakerLayout {
  std::array<double, kSurroundChannels> azimuth_deg{30.0, 110.0, 0.0, -30.0, -110.0};

  /// Throws unless the five azimuths are distinct and every adjacent pair on
  /// the ring is less than 180 degrees apart.
  void validate() const;

  /// JSON object keyed by channel name, e.g. {"FL": 30, "RL": 110, ...}.
  static SpeakerLayout from_json_file(const std::filesystem::path& path);
  static SpeakerLayout from_json_text(const std::string& text);
};

/// Per-stem source directions (degrees, normalized to [0, 360)).
struct PanningConfig {
  std::vector<double> direction_deg;

  std::size_t size() const { return direction_deg.size(); }
  bool operator==(const PanningConfig&) const = default;
};

using GainVector = std::array<double, kSurroundChannels>;

/// Two-speaker VBAP: solves [l1 l2] g = p for the adjacent pair bracketing
/// `theta_deg`, clamps round-off negatives, and normalizes to unit L2 norm.
GainVector pan_gains(double theta_deg, const SpeakerLayout& layout = {});

/// Azimuth of sum_c g_c * l_c. Throws std::domain_error if the vector sum vanishes.
double estimate_direction_from_gains(std::span<const double> gains, const SpeakerLayout& layout = {});

/// Stereo stems are collapsed to mono (mean of L and R) before panning.
MultichannelAudio to_mono(const MultichannelAudio& stem);

/// channel c = sum_k pan_gains(theta_k)[c] * stem_k.
MultichannelAudio render_stems(std::span<const MultichannelAudio> stems, const PanningConfig& config,
                               const SpeakerLayout& layout = {});

/// Passive downmix: L = FL + RL + C/2, R = FR + RR + C/2.
MultichannelAudio downmix(const MultichannelAudio& five);

/// The same formula on magnitudes. Magnitudes do not add linearly, so this is
/// only an approximation and is meant for diagnostics.
MagnitudeSpectrogram downmix_magnitude_approx(const MagnitudeSpectrogram& five);

}  // namespace upmix
