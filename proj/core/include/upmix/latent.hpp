#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "upmix/dataset.hpp"
#include "upmix/vae.hpp"

namespace upmix {

struct LatentRecord {
  std::vector<double> mu;
  std::string song_id;
  std::string panning_id;
  std::size_t segment_index = 0;
};

/// Pearson correlation across latent dimensions. Throws for J < 2 or a
/// constant vector.
double latent_correlation(std::span<const double> a, std::span<const double> b);

struct PcaResult {
  std::vector<double> mean;
  /// Unit principal axes, largest variance first; each axis is signed so its
  /// largest-magnitude entry is positive.
  std::vector<std::vector<double>> components;
  std::vector<double> explained_ratio;
  /// coords[i][d]: projection of record i on component d.
  std::vector<std::vector<double>> coords;
};

PcaResult pca_project(const std::vector<LatentRecord>& records, int dims = 2);
PcaResult pca_project(const std::vector<std::vector<double>>& points, int dims = 2);

enum class Grouping { BySong, ByPanning };

struct SpreadResult {
  double mean = 0.0;
  std::size_t groups = 0;
  std::vector<std::string> skipped;  // singleton groups
};

/// Per group: RMS distance of its points to the group centroid; averaged
/// over groups with at least two members.
SpreadResult cluster_spread(const std::vector<LatentRecord>& records, const std::vector<std::vector<double>>& coords,
                            Grouping grouping);

/// Grid of songs x pannings x segments encoded with one model. Every song is
/// rendered with the same panning set.
struct StudyConfig {
  int songs = 5;
  int pannings = 5;
  int segments_per_cell = 1;
  std::uint64_t seed = 0;
  std::filesystem::path stems_dir;  // empty: procedural tiny corpus
  double tiny_seconds = 10.0;

  void validate() const;
  static StudyConfig from_json_text(const std::string& text);
  static StudyConfig from_json_file(const std::filesystem::path& path);
};

struct StudyResult {
  std::vector<LatentRecord> records;
  std::vector<PanningConfig> pannings;
  PcaResult pca;
  SpreadResult by_song;
  SpreadResult by_panning;
  double mean_abs_r_same_panning = 0.0;  // pairs sharing a panning, different songs
  double mean_abs_r_same_song = 0.0;     // pairs sharing a song and segment, different pannings

  double spread_ratio() const { return by_song.mean / by_panning.mean; }
};

/// Uses the first `config.songs` songs; segments are the first non-silent ones.
StudyResult run_study(const UpmixModel& model, const std::vector<StemSong>& songs, const StudyConfig& config,
                      int threads = 1);

/// PCA, spreads and correlations of already encoded records.
StudyResult summarize_study(std::vector<LatentRecord> records);

/// activations_same_song.csv, activations_same_panning.csv, scatter.csv and
/// spread_summary.csv.
void export_plot_data(const StudyResult& study, const std::filesystem::path& dir);

}  // namespace upmix
