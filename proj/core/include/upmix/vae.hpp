#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "upmix/dataset.hpp"
#include "upmix/dsp.hpp"
#include "upmix/nn.hpp"
#include "upmix/rng.hpp"

namespace upmix {

// Magnitudes enter the network as log(1 + x / eps) and leave through the inverse.
inline constexpr double kCompressionEps = 1e-3;
inline double compress_magnitude(double x) { return std::log1p(x / kCompressionEps); }
inline double expand_magnitude(double y) { return kCompressionEps * std::expm1(y); }

/// Architecture of the stereo-conditioned VAE.
///
/// Encoder: 5-channel input -> [dense block -> strided transition] x 4 ->
/// dense block -> global average pool -> affine to (mu, logvar).
/// Decoder: stereo -> size-preserving input transition, concatenated with h
/// repeated over every bin -> the same block/transition stack at stride 1 ->
/// 1x1 projection to 5 channels -> softplus.
struct ArchConfig {
  int latent_dims = 50;         // J
  int growth = 20;              // C: channels produced by each dense-block conv
  int dense_blocks = 5;
  int layers_per_block = 5;
  int encoder_stride = 2;
  int transition_channels = 0;  // 0 means 2 * growth
  int freq_bins = 513;
  int frames = 384;

  int transitions() const { return dense_blocks - 1; }
  int transition_out() const { return transition_channels > 0 ? transition_channels : 2 * growth; }
  void validate() const;
  /// Stable textual summary stored in checkpoints and compared on load.
  std::string fingerprint() const;

  static ArchConfig full();
  /// Small configuration used in tests and desk-scale runs.
  static ArchConfig toy(int freq_bins, int frames, int latent_dims, int growth);
  bool operator==(const ArchConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
};

/// Encoder and decoder weights in a fixed order determined by ArchConfig.
template <typename T>
struct ModelParams {
  ArchConfig arch;
  std::vector<NamedTensor<T>> tensors;

  std::size_t scalar_count() const;
  ModelParams zeros_like() const;
  void set_zero();
  bool all_finite() const;
  const NamedTensor<T>* find(std::string_view name) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.arch = arch;
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end())});
    return out;
  }
};

/// He-normal weights (variance 2 / fan_in), zero biases.
template <typename T>
ModelParams<T> init_params(const ArchConfig& arch, Rng& rng);

template <typename T>
struct LatentParams {
  std::vector<T> mu;
  std::vector<T> logvar;
};

/// mu, log sigma^2 and the sample h = mu + exp(logvar / 2) * eps.
struct LatentCode {
  std::vector<double> mu;
  std::vector<double> logvar;
  std::vector<double> h;
};

// ---------------------------------------------------------------------------
// Network-domain API: tensors are already compressed. Used by training and
// by gradient checks.

template <typename T>
struct EncoderTrace {
  std::vector<nn::Tensor3<T>> block_features;
  std::vector<T> pooled;
};

template <typename T>
struct DecoderTrace {
  nn::Tensor3<T> stereo_in;
  std::vector<nn::Tensor3<T>> block_features;
  nn::Tensor3<T> output_pre;
};

template <typename T>
nn::Tensor3<T> compress(const MagnitudeSpectrogram& m);
MagnitudeSpectrogram expand(const nn::Tensor3<float>& t);
MagnitudeSpectrogram expand(const nn::Tensor3<double>& t);

template <typename T>
LatentParams<T> encoder_forward(const ModelParams<T>& params, const nn::Tensor3<T>& x5, EncoderTrace<T>* trace = nullptr);

template <typename T>
void encoder_backward(const ModelParams<T>& params, const EncoderTrace<T>& trace, std::span<const T> dmu,
                      std::span<const T> dlogvar, ModelParams<T>& grads);

template <typename T>
nn::Tensor3<T> decoder_forward(const ModelParams<T>& params, const nn::Tensor3<T>& stereo, std::span<const T> h,
                               DecoderTrace<T>* trace = nullptr);

/// Accumulates parameter gradients; `dh` (length J) is overwritten.
template <typename T>
void decoder_backward(const ModelParams<T>& params, const DecoderTrace<T>& trace, const nn::Tensor3<T>& dout,
                      ModelParams<T>& grads, std::span<T> dh);

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// Negative ELBO for one example with fixed noise `eps`:
/// mean squared error between the decoder output and the compressed target
/// plus beta * KL. Gradients are accumulated into `grads` when non-null.
template <typename T>
LossBreakdown elbo_network_loss(const ModelParams<T>& params, const nn::Tensor3<T>& enc_input,
                                const nn::Tensor3<T>& dec_stereo, std::span<const T> eps, double beta,
                                ModelParams<T>* grads = nullptr, LatentParams<T>* latent = nullptr);

// ---------------------------------------------------------------------------
// Magnitude-domain API.

struct LatentDistribution {
  std::vector<double> mu;
  std::vector<double> logvar;
};

template <typename T>
LatentDistribution encode(const ModelParams<T>& params, const MagnitudeSpectrogram& x5);

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps);

/// Returns nonnegative 5-channel magnitudes.
template <typename T>
MagnitudeSpectrogram decode(const ModelParams<T>& params, const MagnitudeSpectrogram& stereo, std::span<const double> h);

/// sum_j -0.5 (1 + logvar_j - mu_j^2 - exp(logvar_j))
double kl_divergence(std::span<const double> mu, std::span<const double> logvar);

/// Mean over all bins of (pred - target)^2.
double recon_loss(std::span<const double> pred, std::span<const double> target);
double recon_loss(const MagnitudeSpectrogram& pred, const MagnitudeSpectrogram& target);

struct ElboResult {
  LossBreakdown loss;
  LatentCode latent;
};

/// Draws eps from `rng` and evaluates the loss of one training example.
template <typename T>
ElboResult elbo_loss(const ModelParams<T>& params, const TrainingExample& example, double beta, Rng& rng);

// ---------------------------------------------------------------------------
// Inference bundle: weights plus the analysis settings they were trained on.

struct UpmixModel {
  AnalysisProfile profile;
  ModelParams<float> params;
};

struct TensorFile;
/// Weights under their tensor names; meta holds the arch, its fingerprint and the profile.
TensorFile model_tensor_file(const UpmixModel& model);
UpmixModel model_from_tensor_file(const TensorFile& file, const std::string& origin);

void save_model(const std::filesystem::path& path, const UpmixModel& model);
/// Loads the weights of a model or training checkpoint.
UpmixModel load_model(const std::filesystem::path& path);

}  // namespace upmix
