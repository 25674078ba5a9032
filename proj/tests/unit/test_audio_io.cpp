#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "test_util.hpp"
#include "upmix/audio_io.hpp"

using namespace upmix;
using testing_util::TempDir;

namespace {

// Hand-assembled RIFF file so the reader is checked against bytes written
// independently of write_wav.
std::string riff(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                 const std::string& payload) {
  auto u16 = [](std::uint16_t v) { return std::string{static_cast<char>(v & 0xff), static_cast<char>(v >> 8)}; };
  auto u32 = [](std::uint32_t v) {
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
    return s;
  };
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  std::string fmt = u16(format) + u16(channels) + u32(rate) + u32(rate * block) + u16(block) + u16(bits);
  std::string body = "WAVE" + std::string("fmt ") + u32(static_cast<std::uint32_t>(fmt.size())) + fmt + "data" +
                     u32(static_cast<std::uint32_t>(payload.size())) + payload;
  return "RIFF" + u32(static_cast<std::uint32_t>(body.size())) + body;
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(AudioIo, Float32RoundTripIsBitExactForFloatValues) {
  TempDir dir("wav");
  auto a = testing_util::random_audio(5, 1000, 1);
  for (int c = 0; c < 5; ++c) {
    for (double& v : a.channel(c)) v = static_cast<float>(v);
  }
  write_wav(dir / "a.wav", a, BitDepth::Float32);
  const auto b = read_wav(dir / "a.wav");
  EXPECT_EQ(a, b);
}

TEST(AudioIo, IntegerDepthsRoundTripWithinOneStep) {
  TempDir dir("wav");
  const auto a = testing_util::random_audio(2, 777, 2, 0.9);
  for (auto [depth, bits] : {std::pair{BitDepth::Int16, 16}, std::pair{BitDepth::Int24, 24}}) {
    write_wav(dir / "a.wav", a, depth);
    const auto b = read_wav(dir / "a.wav");
    ASSERT_EQ(b.channels(), 2);
    ASSERT_EQ(b.samples(), 777u);
    const double step = std::ldexp(1.0, -(bits - 1));
    for (int c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < a.samples(); ++i) EXPECT_LE(std::abs(a.channel(c)[i] - b.channel(c)[i]), step);
    }
  }
}

TEST(AudioIo, ReadsHandBuiltPcm16) {
  TempDir dir("wav");
  // two stereo frames: (16384, -32768), (0, 32767)
  const std::string payload{'\x00', '\x40', '\x00', '\x80', '\x00', '\x00', '\xff', '\x7f'};
  dump(dir / "h.wav", riff(1, 2, 44100, 16, payload));
  const auto a = read_wav(dir / "h.wav");
  ASSERT_EQ(a.channels(), 2);
  ASSERT_EQ(a.samples(), 2u);
  EXPECT_EQ(a.channel(0)[0], 0.5);
  EXPECT_EQ(a.channel(1)[0], -1.0);
  EXPECT_EQ(a.channel(0)[1], 0.0);
  EXPECT_EQ(a.channel(1)[1], 32767.0 / 32768.0);
}

TEST(AudioIo, ReadsHandBuiltFloat) {
  TempDir dir("wav");
  const float samples[3] = {0.25f, -0.125f, 1.5f};
  std::string payload(reinterpret_cast<const char*>(samples), sizeof samples);
  dump(dir / "f.wav", riff(3, 1, 48000, 32, payload));
  const auto a = read_wav(dir / "f.wav");
  EXPECT_EQ(a.sample_rate(), 48000);
  EXPECT_EQ(a.channel(0)[2], 1.5);
  EXPECT_THROW(require_canonical_rate(a, "test"), std::invalid_argument);
}

TEST(AudioIo, ErrorKinds) {
  TempDir dir("wav");
  try {
    read_wav(dir / "missing.wav");
    FAIL();
  } catch (const WavError& e) {
    EXPECT_EQ(e.kind(), WavError::Kind::MissingFile);
  }
  dump(dir / "junk.wav", "RIFX0000WAVE");
  try {
    read_wav(dir / "junk.wav");
    FAIL();
  } catch (const WavError& e) {
    EXPECT_EQ(e.kind(), WavError::Kind::MalformedHeader);
  }
  dump(dir / "u8.wav", riff(1, 1, 44100, 8, std::string(4, '\x80')));
  try {
    read_wav(dir / "u8.wav");
    FAIL();
  } catch (const WavError& e) {
    EXPECT_EQ(e.kind(), WavError::Kind::UnsupportedEncoding);
  }
  MultichannelAudio bad(1, 4, kCanonicalSampleRate);
  bad.channel(0)[1] = std::nan("");
  try {
    write_wav(dir / "nan.wav", bad, BitDepth::Float32);
    FAIL();
  } catch (const WavError& e) {
    EXPECT_EQ(e.kind(), WavError::Kind::InvalidSamples);
  }
  try {
    write_wav(dir / "no" / "such" / "dir.wav", MultichannelAudio(1, 4, kCanonicalSampleRate), BitDepth::Int16);
    FAIL();
  } catch (const WavError& e) {
    EXPECT_EQ(e.kind(), WavError::Kind::Unwritable);
  }
}

TEST(AudioIo, ClampsOnIntegerWrite) {
  TempDir dir("wav");
  MultichannelAudio a(1, 2, kCanonicalSampleRate);
  a.channel(0)[0] = 3.0;
  a.channel(0)[1] = -3.0;
  write_wav(dir / "c.wav", a, BitDepth::Int16);
  const auto b = read_wav(dir / "c.wav");
  EXPECT_EQ(b.channel(0)[0], 32767.0 / 32768.0);
  EXPECT_EQ(b.channel(0)[1], -1.0);
}

TEST(AudioIo, SliceZeroPadsPastTheEnd) {
  MultichannelAudio a({{1, 2, 3}}, kCanonicalSampleRate);
  const auto s = a.slice(2, 3);
  ASSERT_EQ(s.samples(), 3u);
  EXPECT_EQ(s.channel(0)[0], 3.0);
  EXPECT_EQ(s.channel(0)[1], 0.0);
  EXPECT_EQ(s.channel(0)[2], 0.0);
}

TEST(AudioIo, ParseBitDepth) {
  EXPECT_EQ(parse_bit_depth("16i"), BitDepth::Int16);
  EXPECT_EQ(parse_bit_depth("24i"), BitDepth::Int24);
  EXPECT_EQ(parse_bit_depth("32f"), BitDepth::Float32);
  EXPECT_THROW(parse_bit_depth("8u"), std::invalid_argument);
}
