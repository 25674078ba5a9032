#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "upmix/upmix.hpp"
#include "upmix/vbap.hpp"

using namespace upmix;

namespace {

UpmixModel toy_model(std::uint64_t seed = 1) {
  const auto p = AnalysisProfile::toy();
  Rng rng(seed);
  return {p, init_params<float>(ArchConfig::toy(p.bins(), p.frames(), 4, 4), rng)};
}

double max_abs(const MultichannelAudio& a) {
  double m = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    for (double v : a.channel(c)) m = std::max(m, std::abs(v));
  }
  return m;
}

}  // namespace

TEST(Upmix, BaselineExample) {
  MultichannelAudio st({{1.0, -2.0}, {0.5, 0.0}}, kCanonicalSampleRate);
  const auto out = baseline_upmix(st);
  const double g = 1.0 / std::sqrt(2.0);
  EXPECT_EQ(out.channel(FL)[0], g);
  EXPECT_EQ(out.channel(RL)[1], -2.0 * g);
  EXPECT_EQ(out.channel(FR)[0], 0.5 * g);
  EXPECT_EQ(out.channel(RR)[0], 0.5 * g);
  EXPECT_EQ(out.channel(C)[0], 0.0);
  EXPECT_EQ(out.channel(C)[1], 0.0);
}

TEST(Upmix, BaselinePreservesPowerAndDownmixesToScaledInput) {
  const auto st = testing_util::random_audio(2, 3000, 4);
  const auto out = baseline_upmix(st);
  double pin = 0.0, pout = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (double v : st.channel(c)) pin += v * v;
  }
  for (int c = 0; c < 5; ++c) {
    for (double v : out.channel(c)) pout += v * v;
  }
  EXPECT_NEAR(pout / pin, 1.0, 1e-12);
  const auto back = downmix(out);
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < st.samples(); ++i) EXPECT_NEAR(back.channel(c)[i], std::sqrt(2.0) * st.channel(c)[i], 1e-12);
  }
}

TEST(Upmix, PhaseReconstruction) {
  ComplexSpectrogram st(2, 1, 3);
  st.at(0, 0, 0) = {1.0, 0.0};
  st.at(1, 0, 0) = {0.0, 1.0};
  st.at(0, 0, 1) = {1.0, 0.0};
  st.at(1, 0, 1) = {-1.0, 0.0};  // L + R = 0
  st.at(0, 0, 2) = {0.0, -2.0};
  st.at(1, 0, 2) = {0.0, -1.0};
  const auto ph = reconstruct_phase(st);
  EXPECT_EQ(ph.channels(), 5);
  EXPECT_EQ(ph.at(FL, 0, 0), 0.0);
  EXPECT_EQ(ph.at(RL, 0, 0), 0.0);
  EXPECT_NEAR(ph.at(FR, 0, 0), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(ph.at(RR, 0, 0), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(ph.at(C, 0, 0), std::numbers::pi / 4, 1e-15);
  EXPECT_EQ(ph.at(C, 0, 1), 0.0);
  EXPECT_NEAR(ph.at(C, 0, 2), -std::numbers::pi / 2, 1e-15);
}

TEST(Upmix, AssembleRoundTrip) {
  const auto p = AnalysisProfile::toy();
  const std::size_t seg = (static_cast<std::size_t>(p.frames()) - 1) * static_cast<std::size_t>(p.stft.hop);
  const auto x = testing_util::random_audio(5, 3 * seg, 8);
  std::vector<MagnitudeSpectrogram> mags;
  std::vector<PhaseSpectrogram> phases;
  for (int s = 0; s < 3; ++s) {
    auto mp = split_mag_phase(stft(x.slice(static_cast<std::size_t>(s) * seg, p.segment_samples), p.stft));
    mags.push_back(std::move(mp.magnitude));
    phases.push_back(std::move(mp.phase));
  }
  const auto y = assemble_output(mags, phases, p.stft);
  ASSERT_EQ(y.samples(), 3 * seg);
  const double scale = max_abs(x);
  for (int c = 0; c < 5; ++c) {
    for (std::size_t i = 0; i < y.samples(); ++i) ASSERT_NEAR(y.channel(c)[i], x.channel(c)[i], 1e-6 * scale);
  }
  mags.pop_back();
  EXPECT_THROW(assemble_output(mags, phases, p.stft), std::invalid_argument);
}

TEST(Upmix, AssembleLengthAtFullScale) {
  const auto p = AnalysisProfile::full();
  std::vector<MagnitudeSpectrogram> mags(3, MagnitudeSpectrogram(5, p.bins(), p.frames()));
  std::vector<PhaseSpectrogram> phases(3, PhaseSpectrogram(5, p.bins(), p.frames()));
  const auto y = assemble_output(mags, phases, p.stft);
  EXPECT_EQ(y.samples(), 294144u);
  EXPECT_EQ(max_abs(y), 0.0);
}

TEST(Upmix, ModelModesKeepDurationAndAreFinite) {
  const auto model = toy_model();
  const auto st = testing_util::random_audio(2, 5000, 3);
  const auto ref = testing_util::random_audio(5, 3000, 4);
  for (const auto& out : {style_transfer(model, ref, st), blind_upmix(model, st, 1)}) {
    EXPECT_EQ(out.channels(), 5);
    EXPECT_EQ(out.samples(), st.samples());
    for (int c = 0; c < 5; ++c) {
      for (double v : out.channel(c)) ASSERT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Upmix, DeterministicAcrossRunsAndThreads) {
  const auto model = toy_model();
  const auto st = testing_util::random_audio(2, 4000, 3);
  const auto ref = testing_util::random_audio(5, 2500, 4);
  EXPECT_EQ(style_transfer(model, ref, st, 1), style_transfer(model, ref, st, 3));
  EXPECT_EQ(blind_upmix(model, st, 9), blind_upmix(model, st, 9));
  EXPECT_NE(blind_upmix(model, st, 9), blind_upmix(model, st, 10));
  EXPECT_NE(blind_latent(4, 1), blind_latent(4, 2));
  EXPECT_EQ(blind_latent(4, 1), blind_latent(4, 1));
}

TEST(Upmix, StyleLatentAveragesSegmentMeans) {
  const auto model = toy_model();
  const std::size_t seg = model.profile.segment_samples;
  const auto ref = testing_util::random_audio(5, 2 * seg + 100, 6);
  const auto h = style_latent(model, ref);
  const auto a = encode(model.params, magnitude(stft(ref.slice(0, seg), model.profile.stft)));
  const auto b = encode(model.params, magnitude(stft(ref.slice(seg, seg), model.profile.stft)));
  ASSERT_EQ(h.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(h[j], 0.5 * (a.mu[j] + b.mu[j]), 1e-12);
  EXPECT_THROW(style_latent(model, testing_util::random_audio(5, seg - 1, 1)), std::invalid_argument);
}

TEST(Upmix, JobValidation) {
  const auto model = toy_model();
  UpmixJob job;
  job.stereo_in = testing_util::random_audio(2, 2000, 1);
  EXPECT_NO_THROW(run_upmix(job));
  job.model = &model;
  EXPECT_THROW(run_upmix(job), std::invalid_argument);
  job.mode = UpmixMode::Blind;
  EXPECT_NO_THROW(run_upmix(job));
  job.mode = UpmixMode::StyleTransfer;
  EXPECT_THROW(run_upmix(job), std::invalid_argument);
  job.style_ref = testing_util::random_audio(5, 2000, 2);
  EXPECT_EQ(run_upmix(job), style_transfer(model, *job.style_ref, job.stereo_in));
  job.style_ref = testing_util::random_audio(2, 2000, 2);
  EXPECT_THROW(run_upmix(job), std::invalid_argument);
  job.mode = UpmixMode::Blind;
  job.style_ref.reset();
  job.stereo_in = testing_util::random_audio(3, 2000, 1);
  EXPECT_THROW(run_upmix(job), std::invalid_argument);
}

TEST(Upmix, RequiresCanonicalRate) {
  const auto model = toy_model();
  MultichannelAudio st(2, 3000, 48000);
  EXPECT_THROW(blind_upmix(model, st, 1), std::invalid_argument);
}
