#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "upmix/dataset.hpp"
#include "upmix/vae.hpp"

namespace upmix {

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class LrSchedule { Constant, Cosine };

LrSchedule lr_schedule_from_name(const std::string& name);
std::string lr_schedule_name(LrSchedule schedule);

struct TrainConfig {
  AdamConfig adam;  // adam.lr is the initial (peak) rate
  LrSchedule schedule = LrSchedule::Constant;
  int warmup_steps = 0;         // linear ramp from lr/warmup to lr
  double final_lr_fraction = 0.0;  // cosine floor as a fraction of lr
  int epochs = 50;
  int batch_size = 8;
  double beta = 1.0;
  int patience = 10;  // epochs without val improvement before stopping; 0 disables
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global L2 norm clip, 0 disables
  int threads = 1;
  std::filesystem::path checkpoint;  // written after every epoch when non-empty
  std::function<void(const std::string&)> log;
};

/// Network-ready example: compressed encoder input and decoder stereo.
struct NetExample {
  nn::Tensor3<float> enc_input;
  nn::Tensor3<float> dec_stereo;
};

NetExample to_net_example(const TrainingExample& example);
std::vector<NetExample> to_net_examples(const std::vector<TrainingExample>& examples);

struct AdamState {
  ModelParams<float> m;
  ModelParams<float> v;
  std::int64_t step = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_recon = 0.0;
  double train_kl = 0.0;
  std::optional<double> val_loss;
};

struct TrainState {
  ModelParams<float> params;
  AdamState adam;
  int next_epoch = 0;
  ModelParams<float> best;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
};

TrainState start_training(ModelParams<float> params);

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Learning rate for optimizer step `step` (1-based) out of `total_steps`.
double scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

void adam_update(ModelParams<float>& params, const ModelParams<float>& grads, AdamState& state, const AdamConfig& cfg);

/// Mean loss and gradient over `batch` with per-example noise from `noise_seed`.
/// The reduction order is fixed, so the result does not depend on `threads`.
LossBreakdown batch_gradient(const ModelParams<float>& params, const std::vector<const NetExample*>& batch,
                             double beta, std::uint64_t noise_seed, int threads, ModelParams<float>& grads);

/// Mean loss with eps = 0 (the posterior mean is decoded).
double evaluate_loss(const ModelParams<float>& params, const std::vector<NetExample>& examples, double beta, int threads);

/// Runs epochs [state.next_epoch, cfg.epochs). Shuffling and noise depend only
/// on (seed, epoch), so resuming from a checkpoint reproduces an uninterrupted
/// run. Throws TrainingDiverged on a non-finite loss or parameter.
void train(TrainState& state, const std::vector<NetExample>& train_set, const std::vector<NetExample>& val_set,
           const TrainConfig& cfg, const AnalysisProfile& profile);

/// Full-batch steps on a fixed set of examples; returns the loss of every step.
std::vector<LossBreakdown> train_steps(TrainState& state, const std::vector<NetExample>& examples, int steps,
                                       const TrainConfig& cfg);

/// Checkpoint: best weights under their plain names (loadable by load_model),
/// plus the current weights, Adam moments and loop state for resuming.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const AnalysisProfile& profile);
TrainState load_checkpoint(const std::filesystem::path& path, AnalysisProfile* profile = nullptr);

}  // namespace upmix
