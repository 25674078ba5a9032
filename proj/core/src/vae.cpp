#include "upmix/vae.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "upmix/tensor_io.hpp"

namespace upmix {

using nn::Tensor3;

// ---------------------------------------------------------------------------
// Architecture

void ArchConfig::validate() const {
  if (latent_dims < 1) throw std::invalid_argument("ArchConfig: latent_dims (J) must be >= 1");
  if (growth < 1 || dense_blocks < 1 || layers_per_block < 1 || encoder_stride < 1 || transition_channels < 0) {
    throw std::invalid_argument("ArchConfig: layer counts must be positive");
  }
  if (freq_bins < 1 || frames < 1) throw std::invalid_argument("ArchConfig: input extent must be positive");
}

std::string ArchConfig::fingerprint() const {
  std::ostringstream os;
  os << "vae-dense/J" << latent_dims << "/C" << growth << "/B" << dense_blocks << "x" << layers_per_block << "/S"
     << encoder_stride << "/T" << transition_out() << "/" << freq_bins << "x" << frames;
  return os.str();
}

ArchConfig ArchConfig::full() { return ArchConfig{}; }

ArchConfig ArchConfig::toy(int freq_bins, int frames, int latent_dims, int growth) {
  ArchConfig a;
  a.freq_bins = freq_bins;
  a.frames = frames;
  a.latent_dims = latent_dims;
  a.growth = growth;
  a.validate();
  return a;
}

namespace {

constexpr int kEncoderChannels = 5;
constexpr int kStereoChannels = 2;

struct ConvSpec {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
};

struct Stack {
  std::vector<std::vector<ConvSpec>> blocks;
  std::vector<ConvSpec> transitions;
  std::vector<int> block_inputs;  // channels entering each block
  int out_channels = 0;           // channels leaving the last block
};

struct NetLayout {
  Stack encoder;
  int head_weight = -1;
  int head_bias = -1;
  ConvSpec dec_input;
  Stack decoder;
  ConvSpec dec_output;
  std::vector<std::pair<std::string, std::vector<int>>> tensors;

  ConvSpec add_conv(const std::string& name, int in, int out, int kernel, int stride) {
    ConvSpec c{static_cast<int>(tensors.size()), static_cast<int>(tensors.size()) + 1, in, out, kernel, stride};
    tensors.push_back({name + ".weight", {out, in, kernel, kernel}});
    tensors.push_back({name + ".bias", {out}});
    return c;
  }

  Stack add_stack(const std::string& prefix, const ArchConfig& a, int in, int stride) {
    Stack s;
    for (int b = 0; b < a.dense_blocks; ++b) {
      s.block_inputs.push_back(in);
      std::vector<ConvSpec> layers;
      for (int l = 0; l < a.layers_per_block; ++l) {
        layers.push_back(add_conv(prefix + ".block" + std::to_string(b) + ".layer" + std::to_string(l),
                                  in + l * a.growth, a.growth, 3, 1));
      }
      s.blocks.push_back(std::move(layers));
      const int block_out = in + a.layers_per_block * a.growth;
      if (b + 1 < a.dense_blocks) {
        s.transitions.push_back(add_conv(prefix + ".trans" + std::to_string(b), block_out, a.transition_out(), 3, stride));
        in = a.transition_out();
      } else {
        s.out_channels = block_out;
      }
    }
    return s;
  }
};

NetLayout make_layout(const ArchConfig& a) {
  a.validate();
  NetLayout n;
  n.encoder = n.add_stack("enc", a, kEncoderChannels, a.encoder_stride);
  n.head_weight = static_cast<int>(n.tensors.size());
  n.tensors.push_back({"enc.head.weight", {2 * a.latent_dims, n.encoder.out_channels}});
  n.head_bias = static_cast<int>(n.tensors.size());
  n.tensors.push_back({"enc.head.bias", {2 * a.latent_dims}});
  n.dec_input = n.add_conv("dec.input", kStereoChannels, kStereoChannels, 3, 1);
  n.decoder = n.add_stack("dec", a, kStereoChannels + a.latent_dims, 1);
  n.dec_output = n.add_conv("dec.output", n.decoder.out_channels, kEncoderChannels, 1, 1);
  return n;
}

template <typename T>
std::span<const T> values(const ModelParams<T>& p, int index) {
  return p.tensors[static_cast<std::size_t>(index)].values;
}
template <typename T>
std::span<T> values(ModelParams<T>& p, int index) {
  return p.tensors[static_cast<std::size_t>(index)].values;
}

template <typename T>
void conv_forward(const ModelParams<T>& p, const ConvSpec& c, const Tensor3<T>& in, Tensor3<T>& out) {
  nn::conv2d_forward(in, c.in, values(p, c.weight), values(p, c.bias), c.out, c.kernel, c.stride, out);
}

template <typename T>
void conv_backward(const ModelParams<T>& p, const ConvSpec& c, const Tensor3<T>& in, const Tensor3<T>& dout,
                   Tensor3<T>* din, ModelParams<T>& g) {
  nn::conv2d_backward(in, c.in, values(p, c.weight), c.out, c.kernel, c.stride, dout, din, values(g, c.weight),
                      values(g, c.bias));
}

// Applies ELU to `pre` and stores it in channels [offset, offset + pre.channels) of `dst`.
template <typename T>
void elu_into(const Tensor3<T>& pre, Tensor3<T>& dst, int offset) {
  T* out = dst.channel(offset);
  for (std::size_t i = 0; i < pre.data.size(); ++i) out[i] = nn::elu(pre.data[i]);
}

// Gradient through ELU for channels [offset, offset + count) given the activation outputs.
template <typename T>
Tensor3<T> elu_backward(const Tensor3<T>& activations, const Tensor3<T>& dact, int offset, int count) {
  Tensor3<T> d(count, activations.height, activations.width);
  const T* y = activations.channel(offset);
  const T* dy = dact.channel(offset);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = dy[i] * nn::elu_grad_from_output(y[i]);
  return d;
}

// Runs a dense stack on `feat`, whose first block_inputs[0] channels hold the input.
template <typename T>
Tensor3<T> stack_forward(const ModelParams<T>& p, const ArchConfig& a, const Stack& s, Tensor3<T> feat,
                         std::vector<Tensor3<T>>* trace) {
  Tensor3<T> pre;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    for (std::size_t l = 0; l < s.blocks[b].size(); ++l) {
      const ConvSpec& c = s.blocks[b][l];
      conv_forward(p, c, feat, pre);
      elu_into(pre, feat, c.in);
    }
    if (b + 1 == s.blocks.size()) break;
    const ConvSpec& t = s.transitions[b];
    conv_forward(p, t, feat, pre);
    Tensor3<T> next(t.out + a.layers_per_block * a.growth, pre.height, pre.width);
    elu_into(pre, next, 0);
    if (trace != nullptr) trace->push_back(std::move(feat));
    feat = std::move(next);
  }
  if (trace != nullptr) {
    trace->push_back(feat);
    return trace->back();
  }
  return feat;
}

// Back-propagates through a dense stack; returns the gradient w.r.t. the
// first block's full feature tensor (its input channels included).
template <typename T>
Tensor3<T> stack_backward(const ModelParams<T>& p, const Stack& s, const std::vector<Tensor3<T>>& feats,
                          Tensor3<T> dfeat, ModelParams<T>& g) {
  for (std::size_t bi = s.blocks.size(); bi-- > 0;) {
    const Tensor3<T>& feat = feats[bi];
    for (std::size_t l = s.blocks[bi].size(); l-- > 0;) {
      const ConvSpec& c = s.blocks[bi][l];
      const Tensor3<T> dpre = elu_backward(feat, dfeat, c.in, c.out);
      conv_backward(p, c, feat, dpre, &dfeat, g);
    }
    if (bi == 0) break;
    const ConvSpec& t = s.transitions[bi - 1];
    const Tensor3<T> dpre = elu_backward(feat, dfeat, 0, t.out);
    Tensor3<T> dprev(feats[bi - 1].channels, feats[bi - 1].height, feats[bi - 1].width);
    conv_backward(p, t, feats[bi - 1], dpre, &dprev, g);
    dfeat = std::move(dprev);
  }
  return dfeat;
}

void check_shape(const char* what, int channels, int h, int w, int want_c, const ArchConfig& a) {
  if (channels != want_c || h != a.freq_bins || w != a.frames) {
    std::ostringstream os;
    os << what << ": expected " << want_c << "x" << a.freq_bins << "x" << a.frames << ", got " << channels << "x" << h
       << "x" << w;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams out;
  out.arch = arch;
  for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, std::vector<T>(t.values.size(), T(0))});
  return out;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), T(0));
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& t : tensors) {
    for (T v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
const NamedTensor<T>* ModelParams<T>::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
ModelParams<T> init_params(const ArchConfig& arch, Rng& rng) {
  const NetLayout layout = make_layout(arch);
  ModelParams<T> p;
  p.arch = arch;
  for (const auto& [name, shape] : layout.tensors) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    NamedTensor<T> t{name, shape, std::vector<T>(count, T(0))};
    if (shape.size() > 1) {
      const std::size_t fan_in = count / static_cast<std::size_t>(shape[0]);
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.values) v = static_cast<T>(stddev * standard_normal(rng));
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
Tensor3<T> compress(const MagnitudeSpectrogram& m) {
  Tensor3<T> t(m.channels(), m.bins(), m.frames());
  const auto src = m.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] >= 0.0)) throw std::invalid_argument("compress: magnitudes must be nonnegative");
    t.data[i] = static_cast<T>(compress_magnitude(src[i]));
  }
  return t;
}

template <typename T>
static MagnitudeSpectrogram expand_impl(const Tensor3<T>& t) {
  MagnitudeSpectrogram m(t.channels, t.height, t.width);
  auto dst = m.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(0.0, expand_magnitude(static_cast<double>(t.data[i])));
  return m;
}

MagnitudeSpectrogram expand(const Tensor3<float>& t) { return expand_impl(t); }
MagnitudeSpectrogram expand(const Tensor3<double>& t) { return expand_impl(t); }

template <typename T>
LatentParams<T> encoder_forward(const ModelParams<T>& p, const Tensor3<T>& x5, EncoderTrace<T>* trace) {
  const ArchConfig& a = p.arch;
  check_shape("encode", x5.channels, x5.height, x5.width, kEncoderChannels, a);
  const NetLayout layout = make_layout(a);

  Tensor3<T> feat(kEncoderChannels + a.layers_per_block * a.growth, x5.height, x5.width);
  std::copy(x5.data.begin(), x5.data.end(), feat.data.begin());
  const Tensor3<T> last = stack_forward(p, a, layout.encoder, std::move(feat), trace ? &trace->block_features : nullptr);

  const int channels = layout.encoder.out_channels;
  std::vector<T> pooled(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const T* x = last.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < last.plane(); ++i) sum += x[i];
    pooled[static_cast<std::size_t>(c)] = static_cast<T>(sum / static_cast<double>(last.plane()));
  }

  const auto w = values(p, layout.head_weight);
  const auto bias = values(p, layout.head_bias);
  const int J = a.latent_dims;
  LatentParams<T> out{std::vector<T>(static_cast<std::size_t>(J)), std::vector<T>(static_cast<std::size_t>(J))};
  for (int o = 0; o < 2 * J; ++o) {
    T acc = bias[static_cast<std::size_t>(o)];
    for (int c = 0; c < channels; ++c) {
      acc += w[static_cast<std::size_t>(o) * channels + c] * pooled[static_cast<std::size_t>(c)];
    }
    (o < J ? out.mu[static_cast<std::size_t>(o)] : out.logvar[static_cast<std::size_t>(o - J)]) = acc;
  }
  if (trace != nullptr) trace->pooled = std::move(pooled);
  return out;
}

template <typename T>
void encoder_backward(const ModelParams<T>& p, const EncoderTrace<T>& trace, std::span<const T> dmu,
                      std::span<const T> dlogvar, ModelParams<T>& g) {
  const ArchConfig& a = p.arch;
  const NetLayout layout = make_layout(a);
  const int J = a.latent_dims;
  const int channels = layout.encoder.out_channels;
  const auto w = values(p, layout.head_weight);
  auto gw = values(g, layout.head_weight);
  auto gb = values(g, layout.head_bias);

  std::vector<T> dpooled(static_cast<std::size_t>(channels), T(0));
  for (int o = 0; o < 2 * J; ++o) {
    const T d = o < J ? dmu[static_cast<std::size_t>(o)] : dlogvar[static_cast<std::size_t>(o - J)];
    gb[static_cast<std::size_t>(o)] += d;
    for (int c = 0; c < channels; ++c) {
      gw[static_cast<std::size_t>(o) * channels + c] += d * trace.pooled[static_cast<std::size_t>(c)];
      dpooled[static_cast<std::size_t>(c)] += d * w[static_cast<std::size_t>(o) * channels + c];
    }
  }
  const Tensor3<T>& last = trace.block_features.back();
  Tensor3<T> dfeat(last.channels, last.height, last.width);
  const T inv = T(1) / static_cast<T>(last.plane());
  for (int c = 0; c < channels; ++c) std::fill_n(dfeat.channel(c), last.plane(), dpooled[static_cast<std::size_t>(c)] * inv);
  stack_backward(p, layout.encoder, trace.block_features, std::move(dfeat), g);
}

template <typename T>
Tensor3<T> decoder_forward(const ModelParams<T>& p, const Tensor3<T>& stereo, std::span<const T> h,
                           DecoderTrace<T>* trace) {
  const ArchConfig& a = p.arch;
  check_shape("decode", stereo.channels, stereo.height, stereo.width, kStereoChannels, a);
  if (h.size() != static_cast<std::size_t>(a.latent_dims)) throw std::invalid_argument("decode: latent size mismatch");
  const NetLayout layout = make_layout(a);

  Tensor3<T> pre;
  conv_forward(p, layout.dec_input, stereo, pre);
  Tensor3<T> feat(kStereoChannels + a.latent_dims + a.layers_per_block * a.growth, stereo.height, stereo.width);
  elu_into(pre, feat, 0);
  for (int j = 0; j < a.latent_dims; ++j) std::fill_n(feat.channel(kStereoChannels + j), feat.plane(), h[static_cast<std::size_t>(j)]);

  const Tensor3<T> last = stack_forward(p, a, layout.decoder, std::move(feat), trace ? &trace->block_features : nullptr);
  Tensor3<T> out_pre;
  conv_forward(p, layout.dec_output, last, out_pre);
  Tensor3<T> out(out_pre.channels, out_pre.height, out_pre.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = nn::softplus(out_pre.data[i]);
  if (trace != nullptr) {
    trace->stereo_in = stereo;
    trace->output_pre = std::move(out_pre);
  }
  return out;
}

template <typename T>
void decoder_backward(const ModelParams<T>& p, const DecoderTrace<T>& trace, const Tensor3<T>& dout,
                      ModelParams<T>& g, std::span<T> dh) {
  const ArchConfig& a = p.arch;
  const NetLayout layout = make_layout(a);
  if (!dout.same_shape(trace.output_pre)) throw std::invalid_argument("decoder_backward: gradient shape mismatch");

  Tensor3<T> dpre(dout.channels, dout.height, dout.width);
  for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] = dout.data[i] * nn::sigmoid(trace.output_pre.data[i]);
  const Tensor3<T>& last = trace.block_features.back();
  Tensor3<T> dlast(last.channels, last.height, last.width);
  conv_backward(p, layout.dec_output, last, dpre, &dlast, g);

  const Tensor3<T> dfirst = stack_backward(p, layout.decoder, trace.block_features, std::move(dlast), g);
  const Tensor3<T>& first = trace.block_features.front();
  for (int j = 0; j < a.latent_dims; ++j) {
    const T* d = dfirst.channel(kStereoChannels + j);
    double sum = 0.0;
    for (std::size_t i = 0; i < dfirst.plane(); ++i) sum += d[i];
    dh[static_cast<std::size_t>(j)] = static_cast<T>(sum);
  }
  const Tensor3<T> dstereo_pre = elu_backward(first, dfirst, 0, kStereoChannels);
  conv_backward(p, layout.dec_input, trace.stereo_in, dstereo_pre, static_cast<Tensor3<T>*>(nullptr), g);
}

template <typename T>
LossBreakdown elbo_network_loss(const ModelParams<T>& p, const Tensor3<T>& enc_input, const Tensor3<T>& dec_stereo,
                                std::span<const T> eps, double beta, ModelParams<T>* grads, LatentParams<T>* latent) {
  const int J = p.arch.latent_dims;
  if (eps.size() != static_cast<std::size_t>(J)) throw std::invalid_argument("elbo: eps size mismatch");
  EncoderTrace<T> etrace;
  DecoderTrace<T> dtrace;
  const bool need_grad = grads != nullptr;
  const LatentParams<T> lat = encoder_forward(p, enc_input, need_grad ? &etrace : nullptr);

  std::vector<T> h(static_cast<std::size_t>(J));
  std::vector<T> sigma(static_cast<std::size_t>(J));
  double kl = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    sigma[j] = std::exp(lat.logvar[j] / T(2));
    h[j] = lat.mu[j] + sigma[j] * eps[j];
    const double m = lat.mu[j], lv = lat.logvar[j];
    kl += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  const Tensor3<T> out = decoder_forward(p, dec_stereo, std::span<const T>(h), need_grad ? &dtrace : nullptr);

  double sq = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) - static_cast<double>(enc_input.data[i]);
    sq += d * d;
  }
  const double n = static_cast<double>(out.data.size());
  LossBreakdown loss{sq / n + beta * kl, sq / n, kl};

  if (need_grad) {
    Tensor3<T> dout(out.channels, out.height, out.width);
    const T scale = static_cast<T>(2.0 / n);
    for (std::size_t i = 0; i < out.data.size(); ++i) dout.data[i] = scale * (out.data[i] - enc_input.data[i]);
    std::vector<T> dh(static_cast<std::size_t>(J));
    decoder_backward(p, dtrace, dout, *grads, std::span<T>(dh));
    std::vector<T> dmu(static_cast<std::size_t>(J));
    std::vector<T> dlogvar(static_cast<std::size_t>(J));
    const T b = static_cast<T>(beta);
    for (std::size_t j = 0; j < dh.size(); ++j) {
      dmu[j] = dh[j] + b * lat.mu[j];
      dlogvar[j] = dh[j] * eps[j] * sigma[j] / T(2) + b * (std::exp(lat.logvar[j]) - T(1)) / T(2);
    }
    encoder_backward(p, etrace, std::span<const T>(dmu), std::span<const T>(dlogvar), *grads);
  }
  if (latent != nullptr) *latent = lat;
  return loss;
}

// ---------------------------------------------------------------------------
// Magnitude-domain API

template <typename T>
LatentDistribution encode(const ModelParams<T>& params, const MagnitudeSpectrogram& x5) {
  const auto lat = encoder_forward(params, compress<T>(x5));
  return {std::vector<double>(lat.mu.begin(), lat.mu.end()), std::vector<double>(lat.logvar.begin(), lat.logvar.end())};
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size()) throw std::invalid_argument("reparameterize: length mismatch");
  std::vector<double> h(mu.size());
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = mu[j] + std::exp(logvar[j] / 2.0) * eps[j];
  return h;
}

template <typename T>
MagnitudeSpectrogram decode(const ModelParams<T>& params, const MagnitudeSpectrogram& stereo, std::span<const double> h) {
  const std::vector<T> ht(h.begin(), h.end());
  return expand(decoder_forward(params, compress<T>(stereo), std::span<const T>(ht)));
}

double kl_divergence(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) kl += -0.5 * (1.0 + logvar[j] - mu[j] * mu[j] - std::exp(logvar[j]));
  return kl;
}

double recon_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw std::invalid_argument("recon_loss: shape mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sq += d * d;
  }
  return sq / static_cast<double>(pred.size());
}

double recon_loss(const MagnitudeSpectrogram& pred, const MagnitudeSpectrogram& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("recon_loss: shape mismatch");
  return recon_loss(pred.values(), target.values());
}

template <typename T>
ElboResult elbo_loss(const ModelParams<T>& params, const TrainingExample& example, double beta, Rng& rng) {
  if (beta < 0.0) throw std::invalid_argument("elbo_loss: beta must be nonnegative");
  std::vector<T> eps(static_cast<std::size_t>(params.arch.latent_dims));
  for (auto& e : eps) e = static_cast<T>(standard_normal(rng));
  LatentParams<T> lat;
  ElboResult r;
  r.loss = elbo_network_loss(params, compress<T>(example.enc_input), compress<T>(example.dec_stereo),
                             std::span<const T>(eps), beta, static_cast<ModelParams<T>*>(nullptr), &lat);
  r.latent.mu.assign(lat.mu.begin(), lat.mu.end());
  r.latent.logvar.assign(lat.logvar.begin(), lat.logvar.end());
  const std::vector<double> epsd(eps.begin(), eps.end());
  r.latent.h = reparameterize(r.latent.mu, r.latent.logvar, epsd);
  return r;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

nlohmann::json arch_json(const ArchConfig& a) {
  return {{"latent_dims", a.latent_dims},       {"growth", a.growth},
          {"dense_blocks", a.dense_blocks},     {"layers_per_block", a.layers_per_block},
          {"encoder_stride", a.encoder_stride}, {"transition_channels", a.transition_channels},
          {"freq_bins", a.freq_bins},           {"frames", a.frames}};
}

}  // namespace

TensorFile model_tensor_file(const UpmixModel& model) {
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["arch"] = arch_json(model.params.arch);
  meta["fingerprint"] = model.params.arch.fingerprint();
  meta["profile"] = {{"name", model.profile.name},
                     {"fft_size", model.profile.stft.fft_size},
                     {"hop", model.profile.stft.hop},
                     {"centered", model.profile.stft.centered},
                     {"segment_samples", model.profile.segment_samples}};
  TensorFile file;
  file.meta_json = meta.dump();
  for (const auto& t : model.params.tensors) file.tensors.push_back({t.name, t.shape, t.values});
  return file;
}

UpmixModel model_from_tensor_file(const TensorFile& file, const std::string& origin) {
  const auto meta = nlohmann::json::parse(file.meta_json);
  UpmixModel m;
  const auto& a = meta.at("arch");
  ArchConfig arch;
  arch.latent_dims = a.at("latent_dims").get<int>();
  arch.growth = a.at("growth").get<int>();
  arch.dense_blocks = a.at("dense_blocks").get<int>();
  arch.layers_per_block = a.at("layers_per_block").get<int>();
  arch.encoder_stride = a.at("encoder_stride").get<int>();
  arch.transition_channels = a.at("transition_channels").get<int>();
  arch.freq_bins = a.at("freq_bins").get<int>();
  arch.frames = a.at("frames").get<int>();
  arch.validate();
  if (meta.at("fingerprint").get<std::string>() != arch.fingerprint()) {
    throw FormatError(origin + ": architecture fingerprint mismatch");
  }
  const auto& pj = meta.at("profile");
  m.profile.name = pj.at("name").get<std::string>();
  m.profile.stft.fft_size = pj.at("fft_size").get<int>();
  m.profile.stft.hop = pj.at("hop").get<int>();
  m.profile.stft.centered = pj.at("centered").get<bool>();
  m.profile.segment_samples = pj.at("segment_samples").get<std::size_t>();
  m.profile.validate();

  const NetLayout layout = make_layout(arch);
  m.params.arch = arch;
  for (const auto& [name, shape] : layout.tensors) {
    const TensorRecord& rec = file.get(name);
    if (rec.shape != shape) throw FormatError(origin + ": tensor '" + name + "' has the wrong shape");
    m.params.tensors.push_back({name, shape, rec.data});
  }
  return m;
}

void save_model(const std::filesystem::path& path, const UpmixModel& model) {
  write_tensor_file(path, kCheckpointMagic, model_tensor_file(model));
}

UpmixModel load_model(const std::filesystem::path& path) {
  return model_from_tensor_file(read_tensor_file(path, kCheckpointMagic), path.string());
}

#define UPMIX_INSTANTIATE_VAE(T)                                                                                     \
  template struct ModelParams<T>;                                                                                    \
  template ModelParams<T> init_params<T>(const ArchConfig&, Rng&);                                                  \
  template Tensor3<T> compress<T>(const MagnitudeSpectrogram&);                                                     \
  template LatentParams<T> encoder_forward<T>(const ModelParams<T>&, const Tensor3<T>&, EncoderTrace<T>*);          \
  template void encoder_backward<T>(const ModelParams<T>&, const EncoderTrace<T>&, std::span<const T>,              \
                                    std::span<const T>, ModelParams<T>&);                                           \
  template Tensor3<T> decoder_forward<T>(const ModelParams<T>&, const Tensor3<T>&, std::span<const T>,              \
                                         DecoderTrace<T>*);                                                         \
  template void decoder_backward<T>(const ModelParams<T>&, const DecoderTrace<T>&, const Tensor3<T>&,               \
                                    ModelParams<T>&, std::span<T>);                                                 \
  template LossBreakdown elbo_network_loss<T>(const ModelParams<T>&, const Tensor3<T>&, const Tensor3<T>&,          \
                                              std::span<const T>, double, ModelParams<T>*, LatentParams<T>*);       \
  template LatentDistribution encode<T>(const ModelParams<T>&, const MagnitudeSpectrogram&);                        \
  template MagnitudeSpectrogram decode<T>(const ModelParams<T>&, const MagnitudeSpectrogram&,                       \
                                          std::span<const double>);                                                 \
  template ElboResult elbo_loss<T>(const ModelParams<T>&, const TrainingExample&, double, Rng&);

UPMIX_INSTANTIATE_VAE(float)
UPMIX_INSTANTIATE_VAE(double)

#undef UPMIX_INSTANTIATE_VAE

}  // namespace upmix
