#include "upmix/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "upmix/parallel.hpp"
#include "upmix/tensor_io.hpp"

namespace upmix {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Songs

MultichannelAudio StemSong::mix() const {
  validate();
  MultichannelAudio out(1, samples(), sample_rate());
  auto dst = out.channel(0);
  for (const auto& s : stems) {
    const auto src = s.channel(0);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

std::vector<MultichannelAudio> StemSong::segment(SampleRange range) const {
  std::vector<MultichannelAudio> out;
  out.reserve(stems.size());
  for (const auto& s : stems) out.push_back(s.slice(range.begin, range.count));
  return out;
}

void StemSong::validate() const {
  if (stems.size() != kStemCount) throw std::invalid_argument("StemSong " + id + ": exactly 4 stems required");
  for (const auto& s : stems) {
    if (s.channels() != 1) throw std::invalid_argument("StemSong " + id + ": stems must be mono");
    if (s.samples() != stems.front().samples() || s.sample_rate() != stems.front().sample_rate()) {
      throw std::invalid_argument("StemSong " + id + ": stems must share length and sample rate");
    }
  }
}

StemSong load_stem_song(const std::filesystem::path& dir) {
  StemSong song;
  song.id = dir.filename().string();
  for (const char* name : kStemNames) {
    auto audio = read_wav(dir / (std::string(name) + ".wav"));
    require_canonical_rate(audio, name);
    song.stems.push_back(to_mono(audio));
  }
  song.validate();
  return song;
}

std::vector<StemSong> load_stem_songs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<StemSong> songs;
  for (const auto& d : dirs) songs.push_back(load_stem_song(d));
  if (songs.empty()) throw std::runtime_error("no song directories under " + root.string());
  return songs;
}

// ---------------------------------------------------------------------------
// Tiny procedural corpus

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// RBJ band-pass biquad, 0 dB peak gain.
class BandPass {
public:
  BandPass(double center_hz, double q, double rate) {
    const double w0 = 2.0 * std::numbers::pi * center_hz / rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0_ = alpha / a0;
    b2_ = -alpha / a0;
    a1_ = -2.0 * std::cos(w0) / a0;
    a2_ = (1.0 - alpha) / a0;
  }
  double operator()(double x) {
    const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

private:
  double b0_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

void scale_to_rms(std::span<double> x, double target) {
  double sum = 0.0;
  for (double v : x) sum += v * v;
  const double rms = std::sqrt(sum / static_cast<double>(x.size()));
  if (rms > 0.0) {
    for (double& v : x) v *= target / rms;
  }
}

// Harmonic line: consecutive notes with smooth per-note envelopes.
void harmonic_line(std::span<double> out, Rng& rng, double rate, double f_lo, double f_hi, double note_lo,
                   double note_hi, std::span<const double> harmonic_amps, double vibrato_depth) {
  const std::size_t n = out.size();
  std::size_t pos = 0;
  double phase = 0.0;
  const double vib_rate = uniform(rng, 4.0, 6.0);
  while (pos < n) {
    const auto len = std::min(n - pos, static_cast<std::size_t>(uniform(rng, note_lo, note_hi) * rate));
    const double f0 = f_lo * std::pow(f_hi / f_lo, uniform01(rng));
    const double attack = 0.01 * rate;
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(pos + i) / rate;
      const double f = f0 * (1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
      phase += 2.0 * std::numbers::pi * f / rate;
      const double di = static_cast<double>(i);
      const double rel = static_cast<double>(len - i);
      const double env = 0.35 + 0.65 * std::min({1.0, di / attack, rel / attack});
      double v = 0.0;
      for (std::size_t h = 0; h < harmonic_amps.size(); ++h) {
        v += harmonic_amps[h] * std::sin(static_cast<double>(h + 1) * phase);
      }
      out[pos + i] = env * v;
    }
    pos += len;
  }
}

}  // namespace

std::vector<StemSong> make_tiny_corpus(std::uint64_t seed, const TinyCorpusOptions& options) {
  if (options.songs < 1 || options.seconds <= 0.0) throw std::invalid_argument("make_tiny_corpus: empty corpus requested");
  const double rate = options.sample_rate;
  const auto n = static_cast<std::size_t>(options.seconds * rate);
  std::vector<StemSong> songs;
  for (int s = 0; s < options.songs; ++s) {
    Rng rng = make_rng(seed, "tiny-song", {static_cast<std::uint64_t>(s)});
    StemSong song;
    char id[32];
    std::snprintf(id, sizeof id, "tiny%03d", s);
    song.id = id;
    for (int k = 0; k < kStemCount; ++k) song.stems.emplace_back(1, n, options.sample_rate);

    // vocals: 300-600 Hz melody with four harmonics and vibrato
    {
      const double amps[] = {1.0, 0.5, 0.33, 0.25};
      harmonic_line(song.stems[0].channel(0), rng, rate, 300.0, 600.0, 0.2, 0.45, amps, 0.006);
      scale_to_rms(song.stems[0].channel(0), uniform(rng, 0.08, 0.12));
    }
    // drums: gated band-pass noise bursts, silent between hits
    {
      auto x = song.stems[1].channel(0);
      BandPass bp(uniform(rng, 9000.0, 11000.0), 1.5, rate);
      const double period = uniform(rng, 0.12, 0.2);
      const double burst = 0.75 * period;
      const double decay = uniform(rng, 0.03, 0.05);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double local = std::fmod(t, period);
        const double noise = bp(2.0 * uniform01(rng) - 1.0);
        x[i] = local < burst ? noise * std::exp(-local / decay) : 0.0;
      }
      scale_to_rms(x, uniform(rng, 0.06, 0.09));
    }
    // bass: 55-110 Hz line, three harmonics
    {
      const double amps[] = {1.0, 0.5, 0.25};
      harmonic_line(song.stems[2].channel(0), rng, rate, 55.0, 110.0, 0.3, 0.6, amps, 0.0);
      scale_to_rms(song.stems[2].channel(0), uniform(rng, 0.08, 0.12));
    }
    // other: band-pass noise around 4-6 kHz with slow tremolo
    {
      auto x = song.stems[3].channel(0);
      BandPass bp(uniform(rng, 4000.0, 6000.0), 2.0, rate);
      const double trem = uniform(rng, 0.3, 0.8);
      const double trem_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        x[i] = bp(2.0 * uniform01(rng) - 1.0) * (0.7 + 0.3 * std::sin(2.0 * std::numbers::pi * trem * t + trem_phase));
      }
      scale_to_rms(x, uniform(rng, 0.05, 0.08));
    }
    songs.push_back(std::move(song));
  }
  return songs;
}

// ---------------------------------------------------------------------------
// Examples

PanningConfig sample_panning_config(Rng& rng, int stems) {
  PanningConfig cfg;
  for (int k = 0; k < stems; ++k) cfg.direction_deg.push_back(normalize_degrees(360.0 * uniform01(rng)));
  return cfg;
}

TrainingExample synthesize_example(const StemSong& song, SampleRange segment, const PanningConfig& r,
                                   const PanningConfig& a, const AnalysisProfile& profile, bool allow_equal_panning,
                                   std::size_t segment_index, const SpeakerLayout& layout) {
  song.validate();
  if (r == a && !allow_equal_panning) {
    throw std::invalid_argument("synthesize_example: panning conditions r and a must differ");
  }
  if (segment.count != profile.segment_samples) {
    throw std::invalid_argument("synthesize_example: segment length does not match the analysis profile");
  }
  const auto stems = song.segment(segment);
  TrainingExample ex;
  ex.enc_input = magnitude(stft(render_stems(stems, r, layout), profile.stft));
  ex.dec_stereo = magnitude(stft(downmix(render_stems(stems, a, layout)), profile.stft));
  ex.meta = {song.id, segment_index, segment, r, a};
  return ex;
}

namespace {

std::vector<float> to_float(const MagnitudeSpectrogram& m) {
  const auto v = m.values();
  return {v.begin(), v.end()};
}

MagnitudeSpectrogram from_record(const TensorRecord& rec) {
  if (rec.shape.size() != 3) throw FormatError("tensor '" + rec.name + "' must be 3-D");
  MagnitudeSpectrogram m(rec.shape[0], rec.shape[1], rec.shape[2]);
  std::copy(rec.data.begin(), rec.data.end(), m.values().begin());
  return m;
}

json panning_json(const PanningConfig& p) { return p.direction_deg; }
PanningConfig panning_from(const json& j) { return {j.get<std::vector<double>>()}; }

json profile_json(const AnalysisProfile& p) {
  return {{"name", p.name},
          {"fft_size", p.stft.fft_size},
          {"hop", p.stft.hop},
          {"centered", p.stft.centered},
          {"segment_samples", p.segment_samples}};
}

AnalysisProfile profile_from(const json& j) {
  AnalysisProfile p;
  p.name = j.at("name").get<std::string>();
  p.stft.fft_size = j.at("fft_size").get<int>();
  p.stft.hop = j.at("hop").get<int>();
  p.stft.centered = j.at("centered").get<bool>();
  p.segment_samples = j.at("segment_samples").get<std::size_t>();
  p.validate();
  return p;
}

}  // namespace

void write_example(const std::filesystem::path& path, const TrainingExample& example) {
  const json meta = {{"song_id", example.meta.song_id},
                     {"segment_index", example.meta.segment_index},
                     {"begin", example.meta.range.begin},
                     {"count", example.meta.range.count},
                     {"r", panning_json(example.meta.r)},
                     {"a", panning_json(example.meta.a)}};
  TensorFile file;
  file.meta_json = meta.dump();
  const auto& e = example.enc_input;
  const auto& d = example.dec_stereo;
  file.tensors.push_back({"enc_input", {e.channels(), e.bins(), e.frames()}, to_float(e)});
  file.tensors.push_back({"dec_stereo", {d.channels(), d.bins(), d.frames()}, to_float(d)});
  write_tensor_file(path, kExampleMagic, file);
}

TrainingExample read_example(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path, kExampleMagic);
  const json meta = json::parse(file.meta_json);
  TrainingExample ex;
  ex.enc_input = from_record(file.get("enc_input"));
  ex.dec_stereo = from_record(file.get("dec_stereo"));
  ex.meta.song_id = meta.at("song_id").get<std::string>();
  ex.meta.segment_index = meta.at("segment_index").get<std::size_t>();
  ex.meta.range = {meta.at("begin").get<std::size_t>(), meta.at("count").get<std::size_t>()};
  ex.meta.r = panning_from(meta.at("r"));
  ex.meta.a = panning_from(meta.at("a"));
  return ex;
}

// ---------------------------------------------------------------------------
// Corpus

SplitFractions SplitFractions::parse(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed split '" + text + "'");
    }
    if (used != item.size()) throw std::invalid_argument("malformed split '" + text + "'");
    parts.push_back(v);
  }
  if (parts.size() != 3) throw std::invalid_argument("split needs three comma-separated fractions: '" + text + "'");
  SplitFractions f{parts[0], parts[1], parts[2]};
  f.validate();
  return f;
}

void SplitFractions::validate() const {
  if (train < 0 || val < 0 || test < 0) throw std::invalid_argument("split fractions must be nonnegative");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
}

std::array<std::size_t, 3> split_counts(std::size_t songs, const SplitFractions& fractions) {
  fractions.validate();
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  const auto required = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](double x) { return x > 0; }));
  if (songs < required) {
    throw std::invalid_argument("build_corpus: " + std::to_string(songs) + " songs cannot fill " +
                                std::to_string(required) + " non-empty splits");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = f[static_cast<std::size_t>(i)] * static_cast<double>(songs);
    counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[static_cast<std::size_t>(i)] = q - static_cast<double>(counts[static_cast<std::size_t>(i)]);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)]; });
  for (std::size_t k = 0; assigned < songs; ++k, ++assigned) counts[static_cast<std::size_t>(order[k % 3])] += 1;
  for (std::size_t i = 0; i < 3; ++i) {
    if (f[i] > 0 && counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      counts[donor] -= 1;
      counts[i] = 1;
    }
  }
  return counts;
}

std::vector<std::string> CorpusManifest::songs_in(const std::string& split_name) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split_name && std::find(out.begin(), out.end(), e.song_id) == out.end()) out.push_back(e.song_id);
  }
  return out;
}

std::string CorpusManifest::to_json() const {
  json j;
  j["format"] = "upmix-corpus-v1";
  j["profile"] = profile_json(profile);
  j["seed"] = seed;
  j["split"] = {split.train, split.val, split.test};
  j["segments_per_song"] = segments_per_song;
  j["silence_floor_db"] = silence_floor_db;
  auto& list = j["entries"] = json::array();
  for (const auto& e : entries) {
    list.push_back({{"split", e.split},
                    {"song_id", e.song_id},
                    {"song_index", e.song_index},
                    {"segment_index", e.segment_index},
                    {"begin", e.range.begin},
                    {"count", e.range.count},
                    {"r", panning_json(e.r)},
                    {"a", panning_json(e.a)},
                    {"file", e.file}});
  }
  return j.dump(1);
}

CorpusManifest CorpusManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  CorpusManifest m;
  m.profile = profile_from(j.at("profile"));
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto s = j.at("split").get<std::vector<double>>();
  m.split = {s.at(0), s.at(1), s.at(2)};
  m.segments_per_song = j.at("segments_per_song").get<std::size_t>();
  m.silence_floor_db = j.at("silence_floor_db").get<double>();
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.split = e.at("split").get<std::string>();
    me.song_id = e.at("song_id").get<std::string>();
    me.song_index = e.at("song_index").get<std::size_t>();
    me.segment_index = e.at("segment_index").get<std::size_t>();
    me.range = {e.at("begin").get<std::size_t>(), e.at("count").get<std::size_t>()};
    me.r = panning_from(e.at("r"));
    me.a = panning_from(e.at("a"));
    me.file = e.at("file").get<std::string>();
    m.entries.push_back(std::move(me));
  }
  return m;
}

CorpusManifest plan_corpus(const std::vector<StemSong>& songs, const CorpusOptions& options) {
  if (songs.empty()) throw std::invalid_argument("build_corpus: empty song list");
  options.profile.validate();
  const auto counts = split_counts(songs.size(), options.split);

  std::vector<std::size_t> order(songs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = make_rng(options.seed, "split");
  shuffle_in_place(order, split_rng);

  static const std::array<const char*, 3> kSplitNames{"train", "val", "test"};
  std::vector<std::string> split_of(songs.size());
  std::size_t k = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < counts[s]; ++i) split_of[order[k++]] = kSplitNames[s];
  }

  CorpusManifest m;
  m.profile = options.profile;
  m.seed = options.seed;
  m.split = options.split;
  m.segments_per_song = options.segments_per_song;
  m.silence_floor_db = options.silence_floor_db;

  const std::size_t seg = options.profile.segment_samples;
  for (const char* split_name : kSplitNames) {
    for (std::size_t si = 0; si < songs.size(); ++si) {
      if (split_of[si] != split_name) continue;
      const StemSong& song = songs[si];
      song.validate();
      auto valid = extract_segments(song.mix(), seg, song.stems, options.silence_floor_db);
      Rng seg_rng = make_rng(options.seed, "segments", {si});
      shuffle_in_place(valid, seg_rng);
      if (valid.size() > options.segments_per_song) valid.resize(options.segments_per_song);
      std::sort(valid.begin(), valid.end(), [](const SampleRange& a, const SampleRange& b) { return a.begin < b.begin; });
      for (const auto& range : valid) {
        ManifestEntry e;
        e.split = split_name;
        e.song_id = song.id;
        e.song_index = si;
        e.segment_index = range.begin / seg;
        e.range = range;
        Rng pan_rng = make_rng(options.seed, "panning", {si, e.segment_index});
        e.r = sample_panning_config(pan_rng);
        e.a = sample_panning_config(pan_rng);
        char name[64];
        std::snprintf(name, sizeof name, "_%05zu.upx", e.segment_index);
        e.file = std::string(split_name) + "/" + song.id + name;
        m.entries.push_back(std::move(e));
      }
    }
  }
  return m;
}

TrainingExample materialize_entry(const ManifestEntry& entry, const std::vector<StemSong>& songs,
                                  const AnalysisProfile& profile) {
  if (entry.song_index >= songs.size() || songs[entry.song_index].id != entry.song_id) {
    throw std::invalid_argument("manifest entry refers to an unknown song: " + entry.song_id);
  }
  return synthesize_example(songs[entry.song_index], entry.range, entry.r, entry.a, profile, false,
                            entry.segment_index);
}

CorpusManifest build_corpus(const std::vector<StemSong>& songs, const CorpusOptions& options,
                            const std::filesystem::path& out_dir) {
  CorpusManifest m = plan_corpus(songs, options);
  for (const char* d : {"train", "val", "test"}) std::filesystem::create_directories(out_dir / d);
  parallel_for(m.entries.size(), options.threads, [&](std::size_t i) {
    write_example(out_dir / m.entries[i].file, materialize_entry(m.entries[i], songs, m.profile));
  });
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << m.to_json() << '\n';
  return m;
}

CorpusManifest read_manifest(const std::filesystem::path& corpus_dir) {
  std::ifstream in(corpus_dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + corpus_dir.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return CorpusManifest::from_json(ss.str());
}

Corpus load_corpus(const std::filesystem::path& corpus_dir, const std::string& split) {
  const CorpusManifest m = read_manifest(corpus_dir);
  Corpus c;
  c.profile = m.profile;
  for (const auto& e : m.entries) {
    if (e.split == split) c.examples.push_back(read_example(corpus_dir / e.file));
  }
  return c;
}

}  // namespace upmix
