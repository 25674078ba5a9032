#include "upmix/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#include "upmix/parallel.hpp"

namespace upmix {

double latent_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("latent_correlation: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("latent_correlation: need at least two dimensions");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("latent_correlation: zero-variance vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

PcaResult pca_project(const std::vector<std::vector<double>>& points, int dims) {
  if (dims < 1) throw std::invalid_argument("pca_project: dims must be positive");
  if (points.size() < 3 || points.size() <= static_cast<std::size_t>(dims)) {
    throw std::invalid_argument("pca_project: need at least 3 points and more points than dims");
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto J = static_cast<Eigen::Index>(points.front().size());
  if (J < dims) throw std::invalid_argument("pca_project: fewer latent dimensions than requested components");
  Eigen::MatrixXd X(n, J);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(points[static_cast<std::size_t>(i)].size()) != J) {
      throw std::invalid_argument("pca_project: inconsistent dimensions");
    }
    for (Eigen::Index j = 0; j < J; ++j) X(i, j) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::VectorXd mean = X.colwise().mean();
  X.rowwise() -= mean.transpose();
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double total = std::max(0.0, eig.eigenvalues().sum());

  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + J);
  Eigen::MatrixXd axes(J, dims);
  for (int d = 0; d < dims; ++d) {
    // eigenvalues ascend
    const Eigen::Index col = J - 1 - d;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(d) = v;
    r.components.emplace_back(v.data(), v.data() + J);
    r.explained_ratio.push_back(total > 0.0 ? std::max(0.0, eig.eigenvalues()(col)) / total : 0.0);
  }
  const Eigen::MatrixXd proj = X * axes;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> c(static_cast<std::size_t>(dims));
    for (int d = 0; d < dims; ++d) c[static_cast<std::size_t>(d)] = proj(i, d);
    r.coords.push_back(std::move(c));
  }
  return r;
}

PcaResult pca_project(const std::vector<LatentRecord>& records, int dims) {
  std::vector<std::vector<double>> points;
  points.reserve(records.size());
  for (const auto& r : records) points.push_back(r.mu);
  return pca_project(points, dims);
}

SpreadResult cluster_spread(const std::vector<LatentRecord>& records, const std::vector<std::vector<double>>& coords,
                            Grouping grouping) {
  if (records.size() != coords.size()) throw std::invalid_argument("cluster_spread: records and coordinates differ in count");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    groups[grouping == Grouping::BySong ? records[i].song_id : records[i].panning_id].push_back(i);
  }
  SpreadResult r;
  double sum = 0.0;
  for (const auto& [key, members] : groups) {
    if (members.size() < 2) {
      r.skipped.push_back(key);
      continue;
    }
    const std::size_t dims = coords[members.front()].size();
    std::vector<double> centroid(dims, 0.0);
    for (std::size_t i : members) {
      for (std::size_t d = 0; d < dims; ++d) centroid[d] += coords[i][d];
    }
    for (double& c : centroid) c /= static_cast<double>(members.size());
    double sq = 0.0;
    for (std::size_t i : members) {
      for (std::size_t d = 0; d < dims; ++d) sq += (coords[i][d] - centroid[d]) * (coords[i][d] - centroid[d]);
    }
    sum += std::sqrt(sq / static_cast<double>(members.size()));
    ++r.groups;
  }
  if (r.groups == 0) throw std::invalid_argument("cluster_spread: every group has a single member");
  r.mean = sum / static_cast<double>(r.groups);
  return r;
}

// ---------------------------------------------------------------------------

void StudyConfig::validate() const {
  if (songs < 2 || pannings < 2 || segments_per_cell < 1) {
    throw std::invalid_argument("study needs at least 2 songs, 2 pannings and 1 segment per cell");
  }
}

StudyConfig StudyConfig::from_json_text(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  StudyConfig c;
  c.songs = j.value("songs", c.songs);
  c.pannings = j.value("pannings", c.pannings);
  c.segments_per_cell = j.value("segments_per_cell", c.segments_per_cell);
  c.seed = j.value("seed", c.seed);
  c.tiny_seconds = j.value("tiny_seconds", c.tiny_seconds);
  if (j.contains("stems_dir")) c.stems_dir = j.at("stems_dir").get<std::string>();
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"songs", "pannings", "segments_per_cell", "seed", "tiny_seconds", "stems_dir"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
      throw std::invalid_argument("study config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

StudyConfig StudyConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open study config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

namespace {

std::string panning_label(int p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "pan%02d", p);
  return buf;
}

double mean_abs_correlation(const std::vector<LatentRecord>& recs, bool same_song) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t k = i + 1; k < recs.size(); ++k) {
      const auto& a = recs[i];
      const auto& b = recs[k];
      const bool want = same_song
                            ? (a.song_id == b.song_id && a.segment_index == b.segment_index && a.panning_id != b.panning_id)
                            : (a.panning_id == b.panning_id && a.song_id != b.song_id);
      if (!want) continue;
      sum += std::abs(latent_correlation(a.mu, b.mu));
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

StudyResult summarize_study(std::vector<LatentRecord> records) {
  if (records.empty()) throw std::invalid_argument("latent study is empty");
  StudyResult s;
  s.records = std::move(records);
  s.pca = pca_project(s.records, 2);
  s.by_song = cluster_spread(s.records, s.pca.coords, Grouping::BySong);
  s.by_panning = cluster_spread(s.records, s.pca.coords, Grouping::ByPanning);
  s.mean_abs_r_same_panning = mean_abs_correlation(s.records, false);
  s.mean_abs_r_same_song = mean_abs_correlation(s.records, true);
  return s;
}

StudyResult run_study(const UpmixModel& model, const std::vector<StemSong>& songs, const StudyConfig& config,
                      int threads) {
  config.validate();
  if (songs.size() < static_cast<std::size_t>(config.songs)) {
    throw std::invalid_argument("latent study needs " + std::to_string(config.songs) + " songs, got " +
                                std::to_string(songs.size()));
  }
  std::vector<PanningConfig> pannings;
  for (int p = 0; p < config.pannings; ++p) {
    Rng rng = make_rng(config.seed, "study-panning", {static_cast<std::uint64_t>(p)});
    pannings.push_back(sample_panning_config(rng));
  }

  struct Cell {
    std::size_t song;
    SampleRange range;
    int panning;
  };
  std::vector<Cell> cells;
  const std::size_t seg = model.profile.segment_samples;
  for (int s = 0; s < config.songs; ++s) {
    const StemSong& song = songs[static_cast<std::size_t>(s)];
    const auto ranges = extract_segments(song.mix(), seg, song.stems);
    if (ranges.size() < static_cast<std::size_t>(config.segments_per_cell)) {
      throw std::invalid_argument("song " + song.id + " has too few non-silent segments for the study");
    }
    for (int k = 0; k < config.segments_per_cell; ++k) {
      for (int p = 0; p < config.pannings; ++p) cells.push_back({static_cast<std::size_t>(s), ranges[static_cast<std::size_t>(k)], p});
    }
  }

  std::vector<LatentRecord> records(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    const Cell& c = cells[i];
    const StemSong& song = songs[c.song];
    const auto x5 = magnitude(stft(render_stems(song.segment(c.range), pannings[static_cast<std::size_t>(c.panning)]),
                                   model.profile.stft));
    records[i] = {encode(model.params, x5).mu, song.id, panning_label(c.panning), c.range.begin / seg};
  });
  StudyResult r = summarize_study(std::move(records));
  r.pannings = std::move(pannings);
  return r;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// One column per record in `cols`, one row per latent dimension.
std::string activation_table(const std::vector<const LatentRecord*>& cols, bool label_by_song) {
  std::string out = "dim";
  for (const auto* r : cols) out += "," + (label_by_song ? r->song_id : r->panning_id);
  out += "\n";
  const std::size_t J = cols.empty() ? 0 : cols.front()->mu.size();
  for (std::size_t j = 0; j < J; ++j) {
    out += std::to_string(j);
    for (const auto* r : cols) out += "," + num(r->mu[j]);
    out += "\n";
  }
  return out;
}

}  // namespace

void export_plot_data(const StudyResult& study, const std::filesystem::path& dir) {
  if (study.records.empty()) throw std::invalid_argument("export_plot_data: empty study");
  std::filesystem::create_directories(dir);
  const LatentRecord& first = study.records.front();

  std::vector<const LatentRecord*> same_song, same_panning;
  for (const auto& r : study.records) {
    if (r.song_id == first.song_id && r.segment_index == first.segment_index) same_song.push_back(&r);
    if (r.panning_id == first.panning_id && r.segment_index == first.segment_index) same_panning.push_back(&r);
  }
  write_file(dir / "activations_same_song.csv", activation_table(same_song, false));
  write_file(dir / "activations_same_panning.csv", activation_table(same_panning, true));

  std::string scatter = "x,y,song_id,panning_id\n";
  for (std::size_t i = 0; i < study.records.size(); ++i) {
    scatter += num(study.pca.coords[i][0]) + "," + num(study.pca.coords[i][1]) + "," + study.records[i].song_id + "," +
               study.records[i].panning_id + "\n";
  }
  write_file(dir / "scatter.csv", scatter);

  std::string summary = "metric,value\n";
  summary += "by_song," + num(study.by_song.mean) + "\n";
  summary += "by_panning," + num(study.by_panning.mean) + "\n";
  summary += "ratio," + num(study.spread_ratio()) + "\n";
  summary += "mean_abs_r_same_panning," + num(study.mean_abs_r_same_panning) + "\n";
  summary += "mean_abs_r_same_song," + num(study.mean_abs_r_same_song) + "\n";
  summary += "explained_variance_pc1," + num(study.pca.explained_ratio[0]) + "\n";
  summary += "explained_variance_pc2," + num(study.pca.explained_ratio[1]) + "\n";
  write_file(dir / "spread_summary.csv", summary);
}

}  // namespace upmix
