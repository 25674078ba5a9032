#include "upmix/vbap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace upmix {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Vec2 {
  double x, y;
};

Vec2 unit(double deg) {
  const double r = normalize_degrees(deg) * kDegToRad;
  return {std::cos(r), std::sin(r)};
}

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

// Channels sorted by normalized azimuth, ascending.
std::array<int, kSurroundChannels> ring_order(const SpeakerLayout& layout) {
  std::array<int, kSurroundChannels> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return normalize_degrees(layout.azimuth_deg[static_cast<std::size_t>(a)]) <
           normalize_degrees(layout.azimuth_deg[static_cast<std::size_t>(b)]);
  });
  return order;
}

}  // namespace

double normalize_degrees(double deg) {
  double d = std::fmod(deg, 360.0);
  if (d < 0.0) d += 360.0;
  if (d >= 360.0) d -= 360.0;  // fmod of tiny negatives can round up to 360
  return d;
}

double circular_distance_degrees(double a, double b) {
  const double d = normalize_degrees(a - b);
  return d > 180.0 ? 360.0 - d : d;
}

void SpeakerLayout::validate() const {
  const auto order = ring_order(*this);
  for (int i = 0; i < kSurroundChannels; ++i) {
    const double a = normalize_degrees(azimuth_deg[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    const double b =
        normalize_degrees(azimuth_deg[static_cast<std::size_t>(order[static_cast<std::size_t>((i + 1) % kSurroundChannels)])]);
    const double gap = normalize_degrees(b - a);
    if (gap == 0.0) throw std::invalid_argument("SpeakerLayout: azimuths must be distinct");
    if (gap >= 180.0) throw std::invalid_argument("SpeakerLayout: adjacent speakers must be less than 180 degrees apart");
  }
}

SpeakerLayout SpeakerLayout::from_json_text(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SpeakerLayout layout;
  for (int c = 0; c < kSurroundChannels; ++c) {
    const char* name = kChannelNames[static_cast<std::size_t>(c)];
    if (!j.contains(name)) throw std::invalid_argument(std::string("speaker layout is missing channel ") + name);
    layout.azimuth_deg[static_cast<std::size_t>(c)] = j.at(name).get<double>();
  }
  layout.validate();
  return layout;
}

SpeakerLayout SpeakerLayout::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open speaker layout " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

GainVector pan_gains(double theta_deg, const SpeakerLayout& layout) {
  layout.validate();
  const double theta = normalize_degrees(theta_deg);
  const auto order = ring_order(layout);

  // Pair (lo, hi) with lo <= theta < hi walking counterclockwise around the ring.
  int lo = order[kSurroundChannels - 1];
  int hi = order[0];
  for (int i = 0; i < kSurroundChannels; ++i) {
    const int a = order[static_cast<std::size_t>(i)];
    const int b = order[static_cast<std::size_t>((i + 1) % kSurroundChannels)];
    const double az_a = normalize_degrees(layout.azimuth_deg[static_cast<std::size_t>(a)]);
    const double span = normalize_degrees(layout.azimuth_deg[static_cast<std::size_t>(b)] - az_a);
    if (normalize_degrees(theta - az_a) < span) {
      lo = a;
      hi = b;
      break;
    }
  }

  const Vec2 l1 = unit(layout.azimuth_deg[static_cast<std::size_t>(lo)]);
  const Vec2 l2 = unit(layout.azimuth_deg[static_cast<std::size_t>(hi)]);
  const Vec2 p = unit(theta);
  const double det = cross(l1, l2);
  double g1 = std::max(0.0, cross(p, l2) / det);
  double g2 = std::max(0.0, cross(l1, p) / det);
  const double norm = std::hypot(g1, g2);
  g1 /= norm;
  g2 /= norm;

  GainVector g{};
  g[static_cast<std::size_t>(lo)] = g1;
  g[static_cast<std::size_t>(hi)] = g2;
  return g;
}

double estimate_direction_from_gains(std::span<const double> gains, const SpeakerLayout& layout) {
  if (gains.size() != kSurroundChannels) throw std::invalid_argument("estimate_direction_from_gains: need 5 gains");
  double x = 0.0, y = 0.0, total = 0.0;
  for (int c = 0; c < kSurroundChannels; ++c) {
    const double g = gains[static_cast<std::size_t>(c)];
    if (g < 0.0 || !std::isfinite(g)) throw std::invalid_argument("estimate_direction_from_gains: gains must be nonnegative");
    const Vec2 l = unit(layout.azimuth_deg[static_cast<std::size_t>(c)]);
    x += g * l.x;
    y += g * l.y;
    total += g;
  }
  if (total == 0.0 || std::hypot(x, y) <= 1e-12 * total) {
    throw std::domain_error("estimate_direction_from_gains: direction undefined for these gains");
  }
  return normalize_degrees(std::atan2(y, x) / kDegToRad);
}

MultichannelAudio to_mono(const MultichannelAudio& stem) {
  if (stem.channels() == 1) return stem;
  MultichannelAudio mono(1, stem.samples(), stem.sample_rate());
  auto dst = mono.channel(0);
  for (int c = 0; c < stem.channels(); ++c) {
    const auto src = stem.channel(c);
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
  }
  const double scale = 1.0 / stem.channels();
  for (double& v : dst) v *= scale;
  return mono;
}

MultichannelAudio render_stems(std::span<const MultichannelAudio> stems, const PanningConfig& config,
                               const SpeakerLayout& layout) {
  if (stems.empty()) throw std::invalid_argument("render_stems: no stems");
  if (config.size() != stems.size()) throw std::invalid_argument("render_stems: one direction per stem required");
  const std::size_t n = stems.front().samples();
  const int rate = stems.front().sample_rate();
  for (const auto& s : stems) {
    if (s.samples() != n || s.sample_rate() != rate) {
      throw std::invalid_argument("render_stems: stems must share length and sample rate");
    }
  }
  MultichannelAudio out(kSurroundChannels, n, rate);
  for (std::size_t k = 0; k < stems.size(); ++k) {
    const MultichannelAudio mono = to_mono(stems[k]);
    const auto src = mono.channel(0);
    const GainVector g = pan_gains(config.direction_deg[k], layout);
    for (int c = 0; c < kSurroundChannels; ++c) {
      const double gc = g[static_cast<std::size_t>(c)];
      if (gc == 0.0) continue;
      auto dst = out.channel(c);
      for (std::size_t i = 0; i < n; ++i) dst[i] += gc * src[i];
    }
  }
  return out;
}

MultichannelAudio downmix(const MultichannelAudio& five) {
  if (five.channels() != kSurroundChannels) {
    throw std::invalid_argument("downmix: expected 5 channels, got " + std::to_string(five.channels()));
  }
  MultichannelAudio out(2, five.samples(), five.sample_rate());
  auto left = out.channel(0);
  auto right = out.channel(1);
  const auto fl = five.channel(FL), rl = five.channel(RL), c = five.channel(C);
  const auto fr = five.channel(FR), rr = five.channel(RR);
  for (std::size_t i = 0; i < five.samples(); ++i) {
    left[i] = fl[i] + rl[i] + c[i] / 2.0;
    right[i] = fr[i] + rr[i] + c[i] / 2.0;
  }
  return out;
}

MagnitudeSpectrogram downmix_magnitude_approx(const MagnitudeSpectrogram& five) {
  if (five.channels() != kSurroundChannels) throw std::invalid_argument("downmix: expected 5 channels");
  MagnitudeSpectrogram out(2, five.bins(), five.frames());
  const auto fl = five.plane(FL), rl = five.plane(RL), c = five.plane(C);
  const auto fr = five.plane(FR), rr = five.plane(RR);
  auto left = out.plane(0);
  auto right = out.plane(1);
  for (std::size_t i = 0; i < left.size(); ++i) {
    left[i] = fl[i] + rl[i] + c[i] / 2.0;
    right[i] = fr[i] + rr[i] + c[i] / 2.0;
  }
  return out;
}

}  // namespace upmix
