#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "upmix/audio_io.hpp"
#include "upmix/dataset.hpp"
#include "upmix/dsp.hpp"
#include "upmix/vbap.hpp"

namespace upmix {

// ---------------------------------------------------------------------------
// SD-SDR

/// Stand-in for +/- infinity (perfect or fully orthogonal estimates).
inline constexpr double kSdSdrCapDb = 300.0;

/// alpha = <est, ref> / |ref|^2; 10 log10(|alpha ref|^2 / |est - ref|^2),
/// clamped to +/- kSdSdrCapDb.
double sd_sdr(std::span<const double> est, std::span<const double> ref);
/// Channels are concatenated before the single-signal formula.
double sd_sdr(const MultichannelAudio& est, const MultichannelAudio& ref);

// ---------------------------------------------------------------------------
// ILD and WILD

inline constexpr int kIldPairCount = 10;
/// (i, j) with i < j over [FL, RL, C, FR, RR], in lexicographic order.
inline constexpr std::array<std::pair<int, int>, kIldPairCount> kIldPairs{{
    {0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}}};

/// 10 x F x T interchannel level differences in dB.
struct IldTensor {
  int bins = 0;
  int frames = 0;
  std::vector<double> data;

  std::size_t plane_size() const { return static_cast<std::size_t>(bins) * frames; }
  std::span<const double> plane(int pair) const { return {data.data() + pair * plane_size(), plane_size()}; }
};

/// 1e-8 times the largest magnitude (or the smallest normal double when silent).
double ild_floor(const MagnitudeSpectrogram& spec5);

IldTensor ild_tensor(const MagnitudeSpectrogram& spec5, double floor_eps);

struct HistogramSpec {
  int bins = 120;
  double lo_db = -60.0;
  double hi_db = 60.0;

  double width() const { return (hi_db - lo_db) / bins; }
  void validate() const;
  /// Recorded in reports; WILD values are only comparable under one spec.
  std::string describe() const;
};

/// Mass-normalized histogram; out-of-range values land in the end bins.
std::vector<double> histogram(std::span<const double> values, const HistogramSpec& spec);

/// W1 between two normalized histograms on a shared uniform grid:
/// bin_width * sum |CDF_p - CDF_q|.
double wasserstein_1d(std::span<const double> p, std::span<const double> q, double bin_width);

/// Sum over the ten channel pairs of W1 between ILD histograms.
double wild(const MagnitudeSpectrogram& ref5, const MagnitudeSpectrogram& est5, const HistogramSpec& spec = {});

// ---------------------------------------------------------------------------
// Stem decomposition and direction error

struct Decomposition {
  /// gains[c][k]: least-squares weight of stem k in channel c, clamped at 0.
  std::array<std::array<double, kStemCount>, kSurroundChannels> gains{};
  std::array<std::array<double, kStemCount>, kSurroundChannels> raw_gains{};
  std::array<bool, kStemCount> stem_present{};
  /// Set when the stem Gram matrix is numerically singular (e.g. duplicated stems).
  std::array<bool, kSurroundChannels> rank_deficient{};

  bool any_rank_deficient() const;
  GainVector column(int stem) const;
};

/// Damped normal equations (lambda = 1e-8 * trace / K) per channel. All-zero
/// stems are left out and keep zero gains.
Decomposition decompose_channels(const MultichannelAudio& mix5, std::span<const MultichannelAudio> stems,
                                 const SpeakerLayout& layout = {});

struct AngleReport {
  std::array<std::optional<double>, kStemCount> estimated_deg;
  std::array<std::optional<double>, kStemCount> diff_deg;  // null for absent stems
  std::optional<double> mean_diff_deg;
  bool rank_deficient = false;
};

AngleReport angle_difference_report(const PanningConfig& ref_config, const MultichannelAudio& mix5,
                                    std::span<const MultichannelAudio> stems, const SpeakerLayout& layout = {});

/// Directions estimated from a decomposition (null where a stem is absent or
/// its gains vanish).
std::array<std::optional<double>, kStemCount> estimate_directions(const Decomposition& d,
                                                                  const SpeakerLayout& layout = {});

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string id;
  std::string ref_file;
  std::string est_file;
  std::optional<double> sd_sdr_db;
  std::optional<double> wild;
  std::optional<double> mean_angle_diff_deg;
  std::array<std::optional<double>, kStemCount> per_stem_angle_diff;
  bool rank_deficient = false;
  std::string histogram;

  std::string to_json() const;
};

std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);

struct EvalOptions {
  StftParams stft;
  HistogramSpec histogram;
  SpeakerLayout layout;
};

/// SD-SDR and WILD always; angle differences when stems are given. Without
/// `ref_config` the reference directions are estimated from `ref5` itself.
MetricReport evaluate(const std::string& id, const MultichannelAudio& ref5, const MultichannelAudio& est5,
                      const std::vector<MultichannelAudio>* stems = nullptr, const PanningConfig* ref_config = nullptr,
                      const EvalOptions& options = {});

}  // namespace upmix
