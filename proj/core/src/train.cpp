#include "upmix/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "upmix/parallel.hpp"
#include "upmix/tensor_io.hpp"

namespace upmix {

using nlohmann::json;

NetExample to_net_example(const TrainingExample& example) {
  return {compress<float>(example.enc_input), compress<float>(example.dec_stereo)};
}

std::vector<NetExample> to_net_examples(const std::vector<TrainingExample>& examples) {
  std::vector<NetExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(to_net_example(e));
  return out;
}

TrainState start_training(ModelParams<float> params) {
  TrainState s;
  s.adam.m = params.zeros_like();
  s.adam.v = params.zeros_like();
  s.best = params;
  s.params = std::move(params);
  return s;
}

void adam_update(ModelParams<float>& params, const ModelParams<float>& grads, AdamState& state, const AdamConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k].values;
    const auto& g = grads.tensors[k].values;
    auto& m = state.m.tensors[k].values;
    auto& v = state.v.tensors[k].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

namespace {

void add_into(ModelParams<float>& dst, const ModelParams<float>& src, float scale) {
  for (std::size_t k = 0; k < dst.tensors.size(); ++k) {
    auto& d = dst.tensors[k].values;
    const auto& s = src.tensors[k].values;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
  }
}

double grad_norm(const ModelParams<float>& g) {
  double sum = 0.0;
  for (const auto& t : g.tensors) {
    for (float v : t.values) sum += static_cast<double>(v) * v;
  }
  return std::sqrt(sum);
}

std::vector<float> noise(std::uint64_t seed, int dims) {
  Rng rng(seed);
  std::vector<float> eps(static_cast<std::size_t>(dims));
  for (auto& e : eps) e = static_cast<float>(standard_normal(rng));
  return eps;
}

void require_finite(const LossBreakdown& loss, const std::string& where) {
  if (!std::isfinite(loss.total)) {
    std::ostringstream os;
    os << "training diverged at " << where << ": loss is " << loss.total << " (recon " << loss.recon << ", kl "
       << loss.kl << "); try a lower learning rate or beta";
    throw TrainingDiverged(os.str());
  }
}

void log_line(const TrainConfig& cfg, const std::string& msg) {
  if (cfg.log) cfg.log(msg);
}

}  // namespace

LossBreakdown batch_gradient(const ModelParams<float>& params, const std::vector<const NetExample*>& batch,
                             double beta, std::uint64_t noise_seed, int threads, ModelParams<float>& grads) {
  const std::size_t n = batch.size();
  std::vector<ModelParams<float>> per(n);
  std::vector<LossBreakdown> losses(n);
  parallel_for(n, threads, [&](std::size_t i) {
    per[i] = params.zeros_like();
    const auto eps = noise(derive_seed(noise_seed, "eps", {i}), params.arch.latent_dims);
    losses[i] = elbo_network_loss(params, batch[i]->enc_input, batch[i]->dec_stereo, std::span<const float>(eps), beta,
                                  &per[i]);
  });
  grads.set_zero();
  LossBreakdown mean;
  const float inv = 1.0f / static_cast<float>(n);
  for (std::size_t i = 0; i < n; ++i) {
    add_into(grads, per[i], inv);
    mean.total += losses[i].total / static_cast<double>(n);
    mean.recon += losses[i].recon / static_cast<double>(n);
    mean.kl += losses[i].kl / static_cast<double>(n);
  }
  return mean;
}

double evaluate_loss(const ModelParams<float>& params, const std::vector<NetExample>& examples, double beta,
                     int threads) {
  if (examples.empty()) throw std::invalid_argument("evaluate_loss: no examples");
  std::vector<double> losses(examples.size());
  const std::vector<float> zero(static_cast<std::size_t>(params.arch.latent_dims), 0.0f);
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    losses[i] = elbo_network_loss(params, examples[i].enc_input, examples[i].dec_stereo, std::span<const float>(zero),
                                  beta)
                    .total;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

LrSchedule lr_schedule_from_name(const std::string& name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  throw std::invalid_argument("unknown learning-rate schedule '" + name + "'");
}

std::string lr_schedule_name(LrSchedule schedule) { return schedule == LrSchedule::Cosine ? "cosine" : "constant"; }

double scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  const double lr = cfg.adam.lr;
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == LrSchedule::Constant) return lr;
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - cfg.warmup_steps));
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  const double f = cfg.final_lr_fraction;
  return lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

namespace {

void apply_step(TrainState& state, ModelParams<float>& grads, const TrainConfig& cfg, std::int64_t total_steps) {
  if (cfg.grad_clip > 0.0) {
    const double norm = grad_norm(grads);
    if (norm > cfg.grad_clip) {
      const auto scale = static_cast<float>(cfg.grad_clip / norm);
      for (auto& t : grads.tensors) {
        for (auto& v : t.values) v *= scale;
      }
    }
  }
  AdamConfig adam = cfg.adam;
  adam.lr = scheduled_lr(cfg, state.adam.step + 1, total_steps);
  adam_update(state.params, grads, state.adam, adam);
}

}  // namespace

void train(TrainState& state, const std::vector<NetExample>& train_set, const std::vector<NetExample>& val_set,
           const TrainConfig& cfg, const AnalysisProfile& profile) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  ModelParams<float> grads = state.params.zeros_like();
  const auto per_epoch = static_cast<std::int64_t>((train_set.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                                   static_cast<std::size_t>(cfg.batch_size));
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  while (state.next_epoch < cfg.epochs && !state.stopped_early) {
    const int epoch = state.next_epoch;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", {static_cast<std::uint64_t>(epoch)});
    shuffle_in_place(order, shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const NetExample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        batch.push_back(&train_set[order[i]]);
      }
      const auto seed = derive_seed(cfg.seed, "batch", {static_cast<std::uint64_t>(epoch), batches});
      const LossBreakdown loss = batch_gradient(state.params, batch, cfg.beta, seed, cfg.threads, grads);
      require_finite(loss, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
      apply_step(state, grads, cfg, total_steps);
      if (!state.params.all_finite()) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": non-finite parameters");
      }
      rec.train_loss += loss.total;
      rec.train_recon += loss.recon;
      rec.train_kl += loss.kl;
      ++batches;
    }
    rec.train_loss /= static_cast<double>(batches);
    rec.train_recon /= static_cast<double>(batches);
    rec.train_kl /= static_cast<double>(batches);

    if (!val_set.empty()) {
      const double val = evaluate_loss(state.params, val_set, cfg.beta, cfg.threads);
      if (!std::isfinite(val)) throw TrainingDiverged("validation loss is not finite at epoch " + std::to_string(epoch));
      rec.val_loss = val;
      if (val < state.best_val) {
        state.best_val = val;
        state.best = state.params;
        state.epochs_since_best = 0;
      } else {
        state.epochs_since_best += 1;
        if (cfg.patience > 0 && state.epochs_since_best >= cfg.patience) state.stopped_early = true;
      }
    } else {
      state.best = state.params;
    }
    state.history.push_back(rec);
    state.next_epoch = epoch + 1;

    std::ostringstream os;
    os << "epoch " << epoch << " train " << rec.train_loss << " (recon " << rec.train_recon << ", kl " << rec.train_kl
       << ")";
    if (rec.val_loss) os << " val " << *rec.val_loss;
    if (state.stopped_early) os << " [early stop]";
    log_line(cfg, os.str());
    if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, state, profile);
  }
}

std::vector<LossBreakdown> train_steps(TrainState& state, const std::vector<NetExample>& examples, int steps,
                                       const TrainConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("train_steps: no examples");
  std::vector<const NetExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);
  ModelParams<float> grads = state.params.zeros_like();
  std::vector<LossBreakdown> history;
  const std::int64_t total_steps = state.adam.step + steps;
  for (int s = 0; s < steps; ++s) {
    const auto seed = derive_seed(cfg.seed, "step", {static_cast<std::uint64_t>(state.adam.step)});
    const LossBreakdown loss = batch_gradient(state.params, batch, cfg.beta, seed, cfg.threads, grads);
    require_finite(loss, "step " + std::to_string(s));
    apply_step(state, grads, cfg, total_steps);
    history.push_back(loss);
  }
  state.best = state.params;
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append(TensorFile& file, const std::string& prefix, const ModelParams<float>& p) {
  for (const auto& t : p.tensors) file.tensors.push_back({prefix + t.name, t.shape, t.values});
}

ModelParams<float> extract(const TensorFile& file, const std::string& prefix, const ModelParams<float>& like) {
  ModelParams<float> out = like;
  for (auto& t : out.tensors) {
    const TensorRecord& rec = file.get(prefix + t.name);
    if (rec.shape != t.shape) throw FormatError("checkpoint tensor '" + prefix + t.name + "' has the wrong shape");
    t.values = rec.data;
  }
  return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const AnalysisProfile& profile) {
  TensorFile file = model_tensor_file(UpmixModel{profile, state.best});
  append(file, "current.", state.params);
  append(file, "adam.m.", state.adam.m);
  append(file, "adam.v.", state.adam.v);

  json meta = json::parse(file.meta_json);
  meta["kind"] = "checkpoint";
  json history = json::array();
  for (const auto& r : state.history) {
    history.push_back({{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"train_recon", r.train_recon},
                       {"train_kl", r.train_kl},
                       {"val_loss", optional_number(r.val_loss)}});
  }
  meta["training"] = {{"adam_step", state.adam.step},
                      {"next_epoch", state.next_epoch},
                      {"best_val", std::isfinite(state.best_val) ? json(state.best_val) : json(nullptr)},
                      {"epochs_since_best", state.epochs_since_best},
                      {"stopped_early", state.stopped_early},
                      {"history", history}};
  file.meta_json = meta.dump();

  // Write next to the target and rename so an interrupted save never leaves a torn checkpoint.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_tensor_file(tmp, kCheckpointMagic, file);
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, AnalysisProfile* profile) {
  const TensorFile file = read_tensor_file(path, kCheckpointMagic);
  UpmixModel model = model_from_tensor_file(file, path.string());
  const json meta = json::parse(file.meta_json);
  if (!meta.contains("training")) throw FormatError(path.string() + ": model file has no training state to resume");
  const json& tr = meta.at("training");

  TrainState s;
  s.best = model.params;
  s.params = extract(file, "current.", model.params);
  s.adam.m = extract(file, "adam.m.", model.params);
  s.adam.v = extract(file, "adam.v.", model.params);
  s.adam.step = tr.at("adam_step").get<std::int64_t>();
  s.next_epoch = tr.at("next_epoch").get<int>();
  s.best_val = tr.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : tr.at("best_val").get<double>();
  s.epochs_since_best = tr.at("epochs_since_best").get<int>();
  s.stopped_early = tr.at("stopped_early").get<bool>();
  for (const auto& r : tr.at("history")) {
    EpochRecord rec;
    rec.epoch = r.at("epoch").get<int>();
    rec.train_loss = r.at("train_loss").get<double>();
    rec.train_recon = r.at("train_recon").get<double>();
    rec.train_kl = r.at("train_kl").get<double>();
    if (!r.at("val_loss").is_null()) rec.val_loss = r.at("val_loss").get<double>();
    s.history.push_back(rec);
  }
  if (profile != nullptr) *profile = model.profile;
  return s;
}

}  // namespace upmix
