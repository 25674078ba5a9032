#include "upmix/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace upmix {

MultichannelAudio::MultichannelAudio(int channels, std::size_t samples_per_channel, int sample_rate)
    : data_(static_cast<std::size_t>(channels), std::vector<double>(samples_per_channel, 0.0)),
      sample_rate_(sample_rate) {
  if (channels < 1) throw std::invalid_argument("MultichannelAudio: channel count must be positive");
  if (sample_rate <= 0) throw std::invalid_argument("MultichannelAudio: sample rate must be positive");
}

MultichannelAudio::MultichannelAudio(std::vector<std::vector<double>> channels, int sample_rate)
    : data_(std::move(channels)), sample_rate_(sample_rate) {
  validate();
}

MultichannelAudio MultichannelAudio::slice(std::size_t begin, std::size_t count) const {
  MultichannelAudio out(channels(), count, sample_rate_);
  for (int c = 0; c < channels(); ++c) {
    const auto src = channel(c);
    if (begin >= src.size()) continue;
    const std::size_t n = std::min(count, src.size() - begin);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(begin), n, out.channel(c).begin());
  }
  return out;
}

void MultichannelAudio::validate() const {
  if (data_.empty()) throw std::invalid_argument("MultichannelAudio: no channels");
  if (sample_rate_ <= 0) throw std::invalid_argument("MultichannelAudio: sample rate must be positive");
  const std::size_t n = data_.front().size();
  for (const auto& ch : data_) {
    if (ch.size() != n) throw std::invalid_argument("MultichannelAudio: channel lengths differ");
    for (double v : ch) {
      if (!std::isfinite(v)) throw std::invalid_argument("MultichannelAudio: non-finite sample");
    }
  }
}

void require_canonical_rate(const MultichannelAudio& audio, const char* what) {
  if (audio.sample_rate() != kCanonicalSampleRate) {
    throw std::invalid_argument(std::string(what) + ": sample rate " + std::to_string(audio.sample_rate()) +
                                " Hz is not 44100 Hz (resampling is not supported)");
  }
}

BitDepth parse_bit_depth(const std::string& text) {
  if (text == "16" || text == "16i") return BitDepth::Int16;
  if (text == "24" || text == "24i") return BitDepth::Int24;
  if (text == "32" || text == "32f") return BitDepth::Float32;
  throw std::invalid_argument("unknown bit depth '" + text + "' (expected 16i, 24i or 32f)");
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}
void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw WavError(WavError::Kind::MalformedHeader, "malformed WAV header in " + path.string() + ": " + why);
}

}  // namespace

MultichannelAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(WavError::Kind::MissingFile, "cannot open WAV file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12) malformed(path, "file shorter than RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    malformed(path, "missing RIFF/WAVE tags");
  }

  FormatChunk fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) malformed(path, "truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      fmt.format = read_u16(f);
      fmt.channels = read_u16(f + 2);
      fmt.sample_rate = read_u32(f + 4);
      fmt.block_align = read_u16(f + 12);
      fmt.bits = read_u16(f + 14);
      if (fmt.format == kFormatExtensible) {
        if (size < 40) malformed(path, "truncated extensible fmt chunk");
        // First two bytes of the sub-format GUID carry the plain format tag.
        fmt.format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) malformed(path, "data chunk precedes fmt chunk");
      data = bytes.data() + body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) malformed(path, "no fmt chunk");
  if (data == nullptr) malformed(path, "no data chunk");
  if (fmt.channels == 0 || fmt.sample_rate == 0) malformed(path, "zero channels or sample rate");

  const bool pcm_ok = fmt.format == kFormatPcm && (fmt.bits == 16 || fmt.bits == 24);
  const bool float_ok = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm_ok && !float_ok) {
    throw WavError(WavError::Kind::UnsupportedEncoding,
                   "unsupported WAV encoding in " + path.string() + ": format " + std::to_string(fmt.format) +
                       ", " + std::to_string(fmt.bits) + " bits");
  }
  const std::size_t bytes_per_sample = fmt.bits / 8u;
  const std::size_t frame = bytes_per_sample * fmt.channels;
  if (fmt.block_align != frame) malformed(path, "block alignment does not match channels x bits");

  const std::size_t frames = data_size / frame;
  MultichannelAudio audio(fmt.channels, frames, static_cast<int>(fmt.sample_rate));
  for (std::size_t n = 0; n < frames; ++n) {
    for (int c = 0; c < fmt.channels; ++c) {
      const unsigned char* p = data + n * frame + static_cast<std::size_t>(c) * bytes_per_sample;
      double v = 0.0;
      if (fmt.format == kFormatFloat) {
        v = static_cast<double>(std::bit_cast<float>(read_u32(p)));
      } else if (fmt.bits == 16) {
        v = static_cast<double>(static_cast<std::int16_t>(read_u16(p))) / 32768.0;
      } else {
        std::int32_t s = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (s & 0x800000) s -= 0x1000000;
        v = static_cast<double>(s) / 8388608.0;
      }
      audio.channel(c)[n] = v;
    }
  }
  return audio;
}

void write_wav(const std::filesystem::path& path, const MultichannelAudio& audio, BitDepth depth) {
  try {
    audio.validate();
  } catch (const std::invalid_argument& e) {
    throw WavError(WavError::Kind::InvalidSamples, std::string("refusing to write ") + path.string() + ": " + e.what());
  }

  const std::uint16_t bits = depth == BitDepth::Int16 ? 16 : depth == BitDepth::Int24 ? 24 : 32;
  const std::uint16_t format = depth == BitDepth::Float32 ? kFormatFloat : kFormatPcm;
  const std::uint16_t channels = static_cast<std::uint16_t>(audio.channels());
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * (bits / 8));
  const std::size_t data_bytes = audio.samples() * block_align;
  if (data_bytes > 0xFFFFFF00u) {
    throw WavError(WavError::Kind::Unwritable, "audio too long for a RIFF file: " + path.string());
  }
  const std::uint32_t fmt_size = format == kFormatFloat ? 18 : 16;

  std::vector<unsigned char> out;
  out.reserve(data_bytes + 64);
  put_tag(out, "RIFF");
  put_u32(out, static_cast<std::uint32_t>(4 + 8 + fmt_size + 8 + data_bytes + (data_bytes & 1u)));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, fmt_size);
  put_u16(out, format);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate()) * block_align);
  put_u16(out, block_align);
  put_u16(out, bits);
  if (fmt_size == 18) put_u16(out, 0);
  put_tag(out, "data");
  put_u32(out, static_cast<std::uint32_t>(data_bytes));

  for (std::size_t n = 0; n < audio.samples(); ++n) {
    for (int c = 0; c < channels; ++c) {
      const double v = audio.channel(c)[n];
      switch (depth) {
        case BitDepth::Float32:
          put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
          break;
        case BitDepth::Int16: {
          const auto q = static_cast<std::int32_t>(std::clamp(std::lround(v * 32768.0), -32768L, 32767L));
          put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
          break;
        }
        case BitDepth::Int24: {
          const auto q = static_cast<std::int32_t>(std::clamp(std::lround(v * 8388608.0), -8388608L, 8388607L));
          const auto u = static_cast<std::uint32_t>(q);
          out.push_back(static_cast<unsigned char>(u & 0xFF));
          out.push_back(static_cast<unsigned char>((u >> 8) & 0xFF));
          out.push_back(static_cast<unsigned char>((u >> 16) & 0xFF));
          break;
        }
      }
    }
  }
  if (data_bytes & 1u) out.push_back(0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WavError(WavError::Kind::Unwritable, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw WavError(WavError::Kind::Unwritable, "write failed for " + path.string());
}

}  // namespace upmix
