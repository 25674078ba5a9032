#include "upmix/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

namespace upmix {

double sd_sdr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw std::invalid_argument("sd_sdr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    er += est[i] * ref[i];
  }
  if (rr == 0.0) throw std::invalid_argument("sd_sdr: reference is all zeros");
  const double alpha = er / rr;
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = est[i] - ref[i];
    err += d * d;
  }
  const double signal = alpha * alpha * rr;
  if (err == 0.0) return kSdSdrCapDb;
  if (signal == 0.0) return -kSdSdrCapDb;
  return std::clamp(10.0 * std::log10(signal / err), -kSdSdrCapDb, kSdSdrCapDb);
}

namespace {

std::vector<double> flatten(const MultichannelAudio& a) {
  std::vector<double> out;
  out.reserve(a.samples() * static_cast<std::size_t>(a.channels()));
  for (int c = 0; c < a.channels(); ++c) {
    const auto x = a.channel(c);
    out.insert(out.end(), x.begin(), x.end());
  }
  return out;
}

}  // namespace

double sd_sdr(const MultichannelAudio& est, const MultichannelAudio& ref) {
  if (est.channels() != ref.channels() || est.samples() != ref.samples()) {
    throw std::invalid_argument("sd_sdr: shape mismatch");
  }
  return sd_sdr(flatten(est), flatten(ref));
}

// ---------------------------------------------------------------------------

double ild_floor(const MagnitudeSpectrogram& spec5) {
  double peak = 0.0;
  for (double v : spec5.values()) peak = std::max(peak, v);
  return std::max(1e-8 * peak, DBL_MIN);
}

IldTensor ild_tensor(const MagnitudeSpectrogram& spec5, double floor_eps) {
  if (spec5.channels() != kSurroundChannels) throw std::invalid_argument("ild_tensor: 5-channel spectrogram required");
  if (!(floor_eps > 0.0)) throw std::invalid_argument("ild_tensor: floor must be positive");
  IldTensor out;
  out.bins = spec5.bins();
  out.frames = spec5.frames();
  out.data.resize(kIldPairCount * out.plane_size());
  for (int k = 0; k < kIldPairCount; ++k) {
    const auto zi = spec5.plane(kIldPairs[static_cast<std::size_t>(k)].first);
    const auto zj = spec5.plane(kIldPairs[static_cast<std::size_t>(k)].second);
    double* dst = out.data.data() + k * out.plane_size();
    for (std::size_t n = 0; n < zi.size(); ++n) {
      if (zi[n] < 0.0 || zj[n] < 0.0) throw std::invalid_argument("ild_tensor: negative magnitude");
      dst[n] = 20.0 * std::log10(std::max(zi[n], floor_eps) / std::max(zj[n], floor_eps));
    }
  }
  return out;
}

void HistogramSpec::validate() const {
  if (bins < 1 || !(hi_db > lo_db) || !std::isfinite(lo_db) || !std::isfinite(hi_db)) {
    throw std::invalid_argument("histogram spec needs at least one bin and a finite, non-empty range");
  }
}

std::string HistogramSpec::describe() const {
  std::ostringstream os;
  os << "uniform/" << bins << "/[" << lo_db << "," << hi_db << "]dB/clamped/normalized";
  return os.str();
}

std::vector<double> histogram(std::span<const double> values, const HistogramSpec& spec) {
  spec.validate();
  if (values.empty()) throw std::invalid_argument("histogram: no values");
  std::vector<double> h(static_cast<std::size_t>(spec.bins), 0.0);
  const double w = spec.width();
  for (double v : values) {
    const double pos = std::floor((v - spec.lo_db) / w);
    const auto idx = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(spec.bins - 1)));
    h[idx] += 1.0;
  }
  for (double& x : h) x /= static_cast<double>(values.size());
  return h;
}

double wasserstein_1d(std::span<const double> p, std::span<const double> q, double bin_width) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("wasserstein_1d: histograms must share their bins");
  double cp = 0.0, cq = 0.0, sum = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
    sum += std::abs(cp - cq);
  }
  return bin_width * sum;
}

double wild(const MagnitudeSpectrogram& ref5, const MagnitudeSpectrogram& est5, const HistogramSpec& spec) {
  if (!ref5.same_shape(est5)) throw std::invalid_argument("wild: shape mismatch");
  spec.validate();
  const IldTensor a = ild_tensor(ref5, ild_floor(ref5));
  const IldTensor b = ild_tensor(est5, ild_floor(est5));
  double total = 0.0;
  for (int k = 0; k < kIldPairCount; ++k) {
    total += wasserstein_1d(histogram(a.plane(k), spec), histogram(b.plane(k), spec), spec.width());
  }
  return total;
}

// ---------------------------------------------------------------------------

bool Decomposition::any_rank_deficient() const {
  return std::any_of(rank_deficient.begin(), rank_deficient.end(), [](bool b) { return b; });
}

GainVector Decomposition::column(int stem) const {
  GainVector g{};
  for (int c = 0; c < kSurroundChannels; ++c) g[static_cast<std::size_t>(c)] = gains[static_cast<std::size_t>(c)][static_cast<std::size_t>(stem)];
  return g;
}

Decomposition decompose_channels(const MultichannelAudio& mix5, std::span<const MultichannelAudio> stems,
                                 const SpeakerLayout& layout) {
  layout.validate();
  if (mix5.channels() != kSurroundChannels) throw std::invalid_argument("decompose_channels: 5-channel mix required");
  if (stems.size() != kStemCount) throw std::invalid_argument("decompose_channels: 4 stems required");
  const std::size_t n = mix5.samples();
  Decomposition d;
  std::vector<int> present;
  for (int k = 0; k < kStemCount; ++k) {
    const auto& s = stems[static_cast<std::size_t>(k)];
    if (s.channels() != 1 || s.samples() != n) throw std::invalid_argument("decompose_channels: stems must be mono and match the mix length");
    const auto x = s.channel(0);
    const bool any = std::any_of(x.begin(), x.end(), [](double v) { return v != 0.0; });
    d.stem_present[static_cast<std::size_t>(k)] = any;
    if (any) present.push_back(k);
  }
  if (present.empty()) throw std::invalid_argument("decompose_channels: all stems are silent");

  const auto m = static_cast<Eigen::Index>(present.size());
  Eigen::MatrixXd S(static_cast<Eigen::Index>(n), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto x = stems[static_cast<std::size_t>(present[static_cast<std::size_t>(k)])].channel(0);
    for (std::size_t i = 0; i < n; ++i) S(static_cast<Eigen::Index>(i), k) = x[i];
  }
  const Eigen::MatrixXd G = S.transpose() * S;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const bool singular = eig.eigenvalues().minCoeff() < 1e-10 * lmax;
  const double lambda = 1e-8 * G.trace() / static_cast<double>(m);
  const Eigen::LDLT<Eigen::MatrixXd> solver(G + lambda * Eigen::MatrixXd::Identity(m, m));

  for (int c = 0; c < kSurroundChannels; ++c) {
    const auto y = mix5.channel(c);
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd a = solver.solve(S.transpose() * yv);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto stem = static_cast<std::size_t>(present[static_cast<std::size_t>(k)]);
      d.raw_gains[static_cast<std::size_t>(c)][stem] = a(k);
      d.gains[static_cast<std::size_t>(c)][stem] = std::max(0.0, a(k));
    }
    d.rank_deficient[static_cast<std::size_t>(c)] = singular;
  }
  return d;
}

std::array<std::optional<double>, kStemCount> estimate_directions(const Decomposition& d, const SpeakerLayout& layout) {
  std::array<std::optional<double>, kStemCount> out;
  for (int k = 0; k < kStemCount; ++k) {
    if (!d.stem_present[static_cast<std::size_t>(k)]) continue;
    const GainVector g = d.column(k);
    try {
      out[static_cast<std::size_t>(k)] = estimate_direction_from_gains(g, layout);
    } catch (const std::domain_error&) {
      // the stem is not audible in any channel; no direction to report
    }
  }
  return out;
}

AngleReport angle_difference_report(const PanningConfig& ref_config, const MultichannelAudio& mix5,
                                    std::span<const MultichannelAudio> stems, const SpeakerLayout& layout) {
  if (ref_config.size() != kStemCount) throw std::invalid_argument("angle_difference_report: 4 reference directions required");
  const Decomposition d = decompose_channels(mix5, stems, layout);
  AngleReport r;
  r.rank_deficient = d.any_rank_deficient();
  r.estimated_deg = estimate_directions(d, layout);
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < kStemCount; ++k) {
    if (!d.stem_present[k]) continue;
    // A present stem that vanished from the estimate counts as maximally wrong.
    const double diff = r.estimated_deg[k] ? circular_distance_degrees(*r.estimated_deg[k], ref_config.direction_deg[k]) : 180.0;
    r.diff_deg[k] = diff;
    sum += diff;
    ++count;
  }
  if (count > 0) r.mean_diff_deg = sum / count;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::json per_stem;
  for (std::size_t k = 0; k < kStemCount; ++k) per_stem[kStemNames[k]] = opt(per_stem_angle_diff[k]);
  const nlohmann::json j = {{"id", id},
                            {"ref", ref_file},
                            {"est", est_file},
                            {"sd_sdr_db", opt(sd_sdr_db)},
                            {"wild", opt(wild)},
                            {"mean_angle_diff_deg", opt(mean_angle_diff_deg)},
                            {"per_stem_angle_diff", per_stem},
                            {"rank_deficient", rank_deficient},
                            {"histogram", histogram}};
  return j.dump();
}

std::string metric_csv_header() {
  std::string h = "id,sd_sdr_db,wild,mean_angle_diff_deg";
  for (const char* s : kStemNames) h += std::string(",angle_diff_") + s;
  return h;
}

std::string metric_csv_row(const MetricReport& r) {
  std::string row = r.id + "," + csv_number(r.sd_sdr_db) + "," + csv_number(r.wild) + "," +
                    csv_number(r.mean_angle_diff_deg);
  for (const auto& v : r.per_stem_angle_diff) row += "," + csv_number(v);
  return row;
}

MetricReport evaluate(const std::string& id, const MultichannelAudio& ref5, const MultichannelAudio& est5,
                      const std::vector<MultichannelAudio>* stems, const PanningConfig* ref_config,
                      const EvalOptions& options) {
  if (ref5.channels() != kSurroundChannels || est5.channels() != kSurroundChannels) {
    throw std::invalid_argument("evaluate: reference and estimate must both have 5 channels");
  }
  if (ref5.samples() != est5.samples()) throw std::invalid_argument("evaluate: reference and estimate lengths differ");
  MetricReport r;
  r.id = id;
  r.histogram = options.histogram.describe();
  r.sd_sdr_db = sd_sdr(est5, ref5);
  r.wild = wild(magnitude(stft(ref5, options.stft)), magnitude(stft(est5, options.stft)), options.histogram);
  if (stems != nullptr) {
    PanningConfig truth;
    if (ref_config != nullptr) {
      truth = *ref_config;
    } else {
      const auto dirs = estimate_directions(decompose_channels(ref5, *stems, options.layout), options.layout);
      for (const auto& d : dirs) truth.direction_deg.push_back(d.value_or(0.0));
    }
    const AngleReport a = angle_difference_report(truth, est5, *stems, options.layout);
    r.mean_angle_diff_deg = a.mean_diff_deg;
    r.per_stem_angle_diff = a.diff_deg;
    r.rank_deficient = a.rank_deficient;
  }
  return r;
}

}  // namespace upmix
