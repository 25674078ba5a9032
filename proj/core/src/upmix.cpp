#include "upmix/upmix.hpp"

#include <cmath>
#include <stdexcept>

#include "upmix/parallel.hpp"
#include "upmix/rng.hpp"
#include "upmix/vbap.hpp"

namespace upmix {

void UpmixJob::validate() const {
  if (stereo_in.channels() != 2) throw std::invalid_argument("upmix: stereo input must have 2 channels");
  if ((mode == UpmixMode::StyleTransfer) != style_ref.has_value()) {
    throw std::invalid_argument("upmix: a style reference is required for style transfer and only there");
  }
  if ((mode == UpmixMode::Baseline) != (model == nullptr)) {
    throw std::invalid_argument("upmix: a model is required for style transfer and blind upmixing, not for the baseline");
  }
}

MultichannelAudio run_upmix(const UpmixJob& job) {
  job.validate();
  switch (job.mode) {
    case UpmixMode::StyleTransfer:
      return style_transfer(*job.model, *job.style_ref, job.stereo_in, job.threads);
    case UpmixMode::Blind:
      return blind_upmix(*job.model, job.stereo_in, job.seed, job.threads);
    case UpmixMode::Baseline:
      break;
  }
  return baseline_upmix(job.stereo_in);
}

namespace {

void check_model_input(const UpmixModel& model, const MultichannelAudio& audio, int channels, const char* what) {
  require_canonical_rate(audio, what);
  if (audio.channels() != channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                                std::to_string(audio.channels()));
  }
  if (model.profile.bins() != model.params.arch.freq_bins || model.profile.frames() != model.params.arch.frames) {
    throw std::invalid_argument("model analysis profile does not match its architecture");
  }
}

}  // namespace

std::vector<double> style_latent(const UpmixModel& model, const MultichannelAudio& style_ref, int threads) {
  check_model_input(model, style_ref, kSurroundChannels, "style reference");
  const std::size_t seg = model.profile.segment_samples;
  const std::size_t count = style_ref.samples() / seg;
  if (count == 0) {
    throw std::invalid_argument("style reference is shorter than one segment (" + std::to_string(seg) + " samples)");
  }
  std::vector<std::vector<double>> mus(count);
  parallel_for(count, threads, [&](std::size_t s) {
    const auto x5 = magnitude(stft(style_ref.slice(s * seg, seg), model.profile.stft));
    mus[s] = encode(model.params, x5).mu;
  });
  std::vector<double> h(mus.front().size(), 0.0);
  for (const auto& mu : mus) {
    for (std::size_t j = 0; j < h.size(); ++j) h[j] += mu[j];
  }
  for (double& v : h) v /= static_cast<double>(count);
  return h;
}

std::vector<double> blind_latent(int latent_dims, std::uint64_t seed) {
  Rng rng = make_rng(seed, "blind-latent");
  std::vector<double> h(static_cast<std::size_t>(latent_dims));
  for (double& v : h) v = standard_normal(rng);
  return h;
}

MultichannelAudio upmix_with_latent(const UpmixModel& model, const MultichannelAudio& stereo, std::span<const double> h,
                                    int threads) {
  check_model_input(model, stereo, 2, "stereo input");
  if (h.size() != static_cast<std::size_t>(model.params.arch.latent_dims)) {
    throw std::invalid_argument("upmix: latent has the wrong dimension");
  }
  const std::size_t seg = model.profile.segment_samples;
  const std::size_t n = stereo.samples();
  const std::size_t count = (n + seg - 1) / seg;
  std::vector<MagnitudeSpectrogram> mags(count);
  std::vector<PhaseSpectrogram> phases(count);
  parallel_for(count, threads, [&](std::size_t s) {
    const ComplexSpectrogram spec = stft(stereo.slice(s * seg, seg), model.profile.stft);
    mags[s] = decode(model.params, magnitude(spec), h);
    phases[s] = reconstruct_phase(spec);
  });
  MultichannelAudio out = assemble_output(mags, phases, model.profile.stft, stereo.sample_rate());
  return out.slice(0, n);
}

MultichannelAudio style_transfer(const UpmixModel& model, const MultichannelAudio& style_ref,
                                 const MultichannelAudio& stereo, int threads) {
  const auto h = style_latent(model, style_ref, threads);
  return upmix_with_latent(model, stereo, h, threads);
}

MultichannelAudio blind_upmix(const UpmixModel& model, const MultichannelAudio& stereo, std::uint64_t seed,
                              int threads) {
  const auto h = blind_latent(model.params.arch.latent_dims, seed);
  return upmix_with_latent(model, stereo, h, threads);
}

MultichannelAudio baseline_upmix(const MultichannelAudio& stereo) {
  if (stereo.channels() != 2) throw std::invalid_argument("baseline_upmix: stereo input must have 2 channels");
  const double g = 1.0 / std::sqrt(2.0);
  MultichannelAudio out(kSurroundChannels, stereo.samples(), stereo.sample_rate());
  const auto l = stereo.channel(0);
  const auto r = stereo.channel(1);
  for (std::size_t i = 0; i < stereo.samples(); ++i) {
    out.channel(FL)[i] = out.channel(RL)[i] = g * l[i];
    out.channel(FR)[i] = out.channel(RR)[i] = g * r[i];
  }
  return out;
}

PhaseSpectrogram reconstruct_phase(const ComplexSpectrogram& stereo) {
  if (stereo.channels() != 2) throw std::invalid_argument("reconstruct_phase: stereo spectrogram required");
  PhaseSpectrogram out(kSurroundChannels, stereo.bins(), stereo.frames());
  auto angle = [](std::complex<double> z) { return z == std::complex<double>{} ? 0.0 : std::arg(z); };
  for (int f = 0; f < stereo.bins(); ++f) {
    for (int t = 0; t < stereo.frames(); ++t) {
      const auto l = stereo.at(0, f, t);
      const auto r = stereo.at(1, f, t);
      out.at(FL, f, t) = out.at(RL, f, t) = angle(l);
      out.at(FR, f, t) = out.at(RR, f, t) = angle(r);
      out.at(C, f, t) = angle(l + r);
    }
  }
  return out;
}

MultichannelAudio assemble_output(const std::vector<MagnitudeSpectrogram>& magnitudes,
                                  const std::vector<PhaseSpectrogram>& phases, const StftParams& stft_params,
                                  int sample_rate) {
  if (magnitudes.size() != phases.size()) throw std::invalid_argument("assemble_output: segment count mismatch");
  if (magnitudes.empty()) return MultichannelAudio(kSurroundChannels, 0, sample_rate);
  const int channels = magnitudes.front().channels();
  const std::size_t seg = static_cast<std::size_t>(magnitudes.front().frames() - 1) * static_cast<std::size_t>(stft_params.hop);
  MultichannelAudio out(channels, seg * magnitudes.size(), sample_rate);
  for (std::size_t s = 0; s < magnitudes.size(); ++s) {
    if (!magnitudes[s].same_shape(magnitudes.front()) || !phases[s].same_shape(magnitudes.front())) {
      throw std::invalid_argument("assemble_output: segment shapes differ");
    }
    const MultichannelAudio part = istft(combine_mag_phase(magnitudes[s], phases[s]), stft_params, seg, sample_rate);
    for (int c = 0; c < channels; ++c) {
      const auto src = part.channel(c);
      std::copy(src.begin(), src.end(), out.channel(c).begin() + static_cast<std::ptrdiff_t>(s * seg));
    }
  }
  return out;
}

}  // namespace upmix
