#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "upmix/audio_io.hpp"
#include "upmix/dsp.hpp"
#include "upmix/rng.hpp"
#include "upmix/vbap.hpp"

namespace upmix {

inline constexpr int kStemCount = 4;
inline constexpr std::array<const char*, kStemCount> kStemNames{"vocals", "drums", "bass", "other"};

/// Four mono stems in the order vocals, drums, bass, other.
struct StemSong {
  std::string id;
  std::vector<MultichannelAudio> stems;

  int sample_rate() const { return stems.empty() ? 0 : stems.front().sample_rate(); }
  std::size_t samples() const { return stems.empty() ? 0 : stems.front().samples(); }
  /// Mono sum of the stems.
  MultichannelAudio mix() const;
  /// Stems restricted to one segment.
  std::vector<MultichannelAudio> segment(SampleRange range) const;
  void validate() const;
};

/// Reads <dir>/{vocals,drums,bass,other}.wav; stereo stems are averaged to mono.
StemSong load_stem_song(const std::filesystem::path& dir);
/// Every subdirectory of `root`, sorted by name.
std::vector<StemSong> load_stem_songs(const std::filesystem::path& root);

struct TinyCorpusOptions {
  int songs = 4;
  double seconds = 10.0;
  int sample_rate = kCanonicalSampleRate;
};

/// Procedural stand-in for a stem dataset: a tonal band-limited "vocals"
/// line, gated noise-burst "drums", a low harmonic "bass" and a band-pass
/// noise "other", with per-song melody, tempo and levels drawn from `seed`.
std::vector<StemSong> make_tiny_corpus(std::uint64_t seed, const TinyCorpusOptions& options = {});

/// Four directions i.i.d. uniform on [0, 360).
PanningConfig sample_panning_config(Rng& rng, int stems = kStemCount);

struct ExampleMeta {
  std::string song_id;
  std::size_t segment_index = 0;
  SampleRange range;
  PanningConfig r;  // encoder-side panning
  PanningConfig a;  // panning behind the decoder's stereo input
};

/// One training triple. The reconstruction target is the encoder input itself.
struct TrainingExample {
  MagnitudeSpectrogram enc_input;   // 5 x F x T, panned with r
  MagnitudeSpectrogram dec_stereo;  // 2 x F x T, downmix of the stems panned with a
  ExampleMeta meta;

  const MagnitudeSpectrogram& target() const { return enc_input; }
};

/// render -> (downmix) -> stft -> magnitude for both panning conditions.
/// Identical r and a are rejected unless `allow_equal_panning` is set.
TrainingExample synthesize_example(const StemSong& song, SampleRange segment, const PanningConfig& r,
                                   const PanningConfig& a, const AnalysisProfile& profile,
                                   bool allow_equal_panning = false, std::size_t segment_index = 0,
                                   const SpeakerLayout& layout = {});

void write_example(const std::filesystem::path& path, const TrainingExample& example);
TrainingExample read_example(const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  /// "0.7,0.1,0.2"
  static SplitFractions parse(const std::string& text);
  void validate() const;
};

/// Song counts per split using largest remainders; every split with a
/// positive fraction receives at least one song.
std::array<std::size_t, 3> split_counts(std::size_t songs, const SplitFractions& fractions);

struct CorpusOptions {
  AnalysisProfile profile = AnalysisProfile::full();
  SplitFractions split;
  std::size_t segments_per_song = 8;
  std::uint64_t seed = 0;
  double silence_floor_db = kDefaultSilenceFloorDb;
  int threads = 1;
};

struct ManifestEntry {
  std::string split;  // "train", "val" or "test"
  std::string song_id;
  std::size_t song_index = 0;  // position in the song list given to build_corpus
  std::size_t segment_index = 0;
  SampleRange range;
  PanningConfig r;
  PanningConfig a;
  std::string file;  // relative to the corpus directory
};

struct CorpusManifest {
  AnalysisProfile profile;
  std::uint64_t seed = 0;
  SplitFractions split;
  std::size_t segments_per_song = 0;
  double silence_floor_db = kDefaultSilenceFloorDb;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> songs_in(const std::string& split) const;
  std::string to_json() const;
  static CorpusManifest from_json(const std::string& text);
};

/// Deterministic plan: song split, segment choice and (r, a) per segment.
CorpusManifest plan_corpus(const std::vector<StemSong>& songs, const CorpusOptions& options);

/// Recomputes one manifest entry from its song.
TrainingExample materialize_entry(const ManifestEntry& entry, const std::vector<StemSong>& songs,
                                  const AnalysisProfile& profile);

/// Plans the corpus, writes one example file per entry plus manifest.json.
CorpusManifest build_corpus(const std::vector<StemSong>& songs, const CorpusOptions& options,
                            const std::filesystem::path& out_dir);

CorpusManifest read_manifest(const std::filesystem::path& corpus_dir);

/// In-memory examples of one split.
struct Corpus {
  AnalysisProfile profile;
  std::vector<TrainingExample> examples;
};

Corpus load_corpus(const std::filesystem::path& corpus_dir, const std::string& split);

}  // namespace upmix
