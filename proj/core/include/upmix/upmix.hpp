#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "upmix/audio_io.hpp"
#include "upmix/dsp.hpp"
#include "upmix/vae.hpp"

namespace upmix {

enum class UpmixMode { StyleTransfer, Blind, Baseline };

struct UpmixJob {
  UpmixMode mode = UpmixMode::Baseline;
  MultichannelAudio stereo_in;
  std::optional<MultichannelAudio> style_ref;
  std::uint64_t seed = 0;
  const UpmixModel* model = nullptr;
  int threads = 1;

  /// style_ref only for style transfer, a model for every mode but the baseline.
  void validate() const;
};

MultichannelAudio run_upmix(const UpmixJob& job);

/// Mean of the encoder's mu over all whole segments of a 5-channel reference.
std::vector<double> style_latent(const UpmixModel& model, const MultichannelAudio& style_ref, int threads = 1);

/// h ~ N(0, I) drawn once from `seed`.
std::vector<double> blind_latent(int latent_dims, std::uint64_t seed);

/// Decodes every segment of `stereo` with the same latent and stitches the
/// result. The trailing partial segment is zero-padded, then trimmed.
MultichannelAudio upmix_with_latent(const UpmixModel& model, const MultichannelAudio& stereo,
                                    std::span<const double> h, int threads = 1);

MultichannelAudio style_transfer(const UpmixModel& model, const MultichannelAudio& style_ref,
                                 const MultichannelAudio& stereo, int threads = 1);
MultichannelAudio blind_upmix(const UpmixModel& model, const MultichannelAudio& stereo, std::uint64_t seed,
                              int threads = 1);

/// FL = RL = L / sqrt(2), FR = RR = R / sqrt(2), C = 0.
MultichannelAudio baseline_upmix(const MultichannelAudio& stereo);

/// Left phase for FL/RL, right phase for FR/RR, angle(L + R) for C.
PhaseSpectrogram reconstruct_phase(const ComplexSpectrogram& stereo);

/// magnitude * exp(i phase) -> istft per segment, concatenated without overlap.
/// Each segment yields (frames - 1) * hop samples.
MultichannelAudio assemble_output(const std::vector<MagnitudeSpectrogram>& magnitudes,
                                  const std::vector<PhaseSpectrogram>& phases, const StftParams& stft_params,
                                  int sample_rate = kCanonicalSampleRate);

}  // namespace upmix
