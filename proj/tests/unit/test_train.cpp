#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "upmix/train.hpp"

using namespace upmix;
using testing_util::TempDir;

namespace {

const AnalysisProfile kProfile = AnalysisProfile::toy();

std::vector<NetExample> examples(int count, std::uint64_t seed = 2) {
  const auto songs = make_tiny_corpus(seed, {1, 1.0, kCanonicalSampleRate});
  Rng rng = make_rng(seed, "pan");
  std::vector<TrainingExample> out;
  for (int i = 0; i < count; ++i) {
    const SampleRange seg{static_cast<std::size_t>(i % 40) * kProfile.segment_samples, kProfile.segment_samples};
    const auto r = sample_panning_config(rng), a = sample_panning_config(rng);
    out.push_back(synthesize_example(songs[0], seg, r, a, kProfile));
  }
  return to_net_examples(out);
}

ModelParams<float> fresh_params(std::uint64_t seed = 1) {
  Rng rng(seed);
  return init_params<float>(ArchConfig::toy(kProfile.bins(), kProfile.frames(), 4, 4), rng);
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.adam.lr = 0.001;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.beta = 0.01;
  cfg.seed = 3;
  return cfg;
}

void expect_same(const ModelParams<float>& a, const ModelParams<float>& b) {
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i].values, b.tensors[i].values) << a.tensors[i].name;
}

}  // namespace

TEST(Train, AdamFirstStepIsSignScaled) {
  auto params = fresh_params();
  const auto before = params;
  auto grads = params.zeros_like();
  Rng rng(5);
  for (auto& t : grads.tensors) {
    for (float& g : t.values) g = static_cast<float>(standard_normal(rng));
  }
  AdamState st{params.zeros_like(), params.zeros_like(), 0};
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  adam_update(params, grads, st, cfg);
  EXPECT_EQ(st.step, 1);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    for (std::size_t i = 0; i < params.tensors[t].values.size(); ++i) {
      const double g = grads.tensors[t].values[i];
      const double expect = before.tensors[t].values[i] - 0.01 * g / (std::abs(g) + 1e-8);
      ASSERT_NEAR(params.tensors[t].values[i], expect, 1e-6);
    }
  }
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto data = examples(4);
  auto state = start_training(fresh_params());
  auto cfg = quick_config();
  cfg.adam.lr = 0.0;
  train(state, data, {}, cfg, kProfile);
  expect_same(state.params, fresh_params());
  EXPECT_EQ(state.history.size(), 2u);
  EXPECT_EQ(state.next_epoch, 2);
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  const auto data = examples(4);
  auto a = start_training(fresh_params()), b = start_training(fresh_params());
  auto cfg = quick_config();
  train(a, data, {}, cfg, kProfile);
  cfg.threads = 3;
  train(b, data, {}, cfg, kProfile);
  expect_same(a.params, b.params);
  EXPECT_EQ(a.history.back().train_loss, b.history.back().train_loss);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  TempDir dir("train");
  const auto data = examples(4);
  const auto val = examples(2, 9);
  auto cfg = quick_config();
  cfg.epochs = 3;

  auto full = start_training(fresh_params());
  train(full, data, val, cfg, kProfile);

  auto part = start_training(fresh_params());
  auto first = cfg;
  first.epochs = 1;
  first.checkpoint = dir / "c.ckpt";
  train(part, data, val, first, kProfile);
  AnalysisProfile profile;
  auto resumed = load_checkpoint(dir / "c.ckpt", &profile);
  EXPECT_EQ(profile, kProfile);
  EXPECT_EQ(resumed.next_epoch, 1);
  train(resumed, data, val, cfg, kProfile);

  expect_same(full.params, resumed.params);
  expect_same(full.best, resumed.best);
  ASSERT_EQ(full.history.size(), resumed.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    EXPECT_EQ(full.history[i].train_loss, resumed.history[i].train_loss);
    EXPECT_EQ(full.history[i].val_loss, resumed.history[i].val_loss);
  }
}

TEST(Train, CheckpointHoldsBestWeightsForInference) {
  TempDir dir("train");
  const auto data = examples(4);
  auto cfg = quick_config();
  cfg.checkpoint = dir / "c.ckpt";
  auto state = start_training(fresh_params());
  train(state, data, examples(2, 9), cfg, kProfile);
  const auto model = load_model(dir / "c.ckpt");
  expect_same(model.params, state.best);
  EXPECT_EQ(model.profile, kProfile);
  const auto back = load_checkpoint(dir / "c.ckpt");
  expect_same(back.params, state.params);
  expect_same(back.adam.m, state.adam.m);
  expect_same(back.adam.v, state.adam.v);
  EXPECT_EQ(back.adam.step, state.adam.step);
  EXPECT_EQ(back.best_val, state.best_val);
}

TEST(Train, EarlyStoppingOnFlatValidation) {
  const auto data = examples(2);
  auto cfg = quick_config();
  cfg.adam.lr = 0.0;
  cfg.epochs = 10;
  cfg.patience = 2;
  auto state = start_training(fresh_params());
  train(state, data, examples(1, 9), cfg, kProfile);
  EXPECT_TRUE(state.stopped_early);
  EXPECT_EQ(state.history.size(), 3u);
}

TEST(Train, NonFiniteWeightsAbort) {
  const auto data = examples(2);
  auto params = fresh_params();
  params.tensors[0].values[0] = std::nanf("");
  auto state = start_training(params);
  EXPECT_THROW(train(state, data, {}, quick_config(), kProfile), TrainingDiverged);
}

TEST(Train, FullBatchStepsReduceLoss) {
  const auto data = examples(1);
  auto cfg = quick_config();
  auto state = start_training(fresh_params());
  const auto losses = train_steps(state, data, 40, cfg);
  ASSERT_EQ(losses.size(), 40u);
  EXPECT_LT(losses.back().recon, 0.5 * losses.front().recon);
}

TEST(Train, BatchGradientIsMeanOfExamples) {
  const auto data = examples(2);
  const auto params = fresh_params();
  auto g01 = params.zeros_like();
  const auto both = batch_gradient(params, {&data[0], &data[1]}, 0.5, 42, 1, g01);
  const auto again = batch_gradient(params, {&data[0], &data[1]}, 0.5, 42, 2, g01);
  EXPECT_EQ(both.total, again.total);
  const double eval = evaluate_loss(params, data, 0.5, 1);
  EXPECT_TRUE(std::isfinite(eval));
  EXPECT_GT(eval, 0.0);
}

TEST(Train, LearningRateSchedule) {
  TrainConfig cfg;
  cfg.adam.lr = 0.01;
  EXPECT_EQ(scheduled_lr(cfg, 1, 100), 0.01);
  EXPECT_EQ(scheduled_lr(cfg, 100, 100), 0.01);
  cfg.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 1, 100), 0.001);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 10, 100), 0.01);
  EXPECT_EQ(scheduled_lr(cfg, 50, 100), 0.01);
  cfg.schedule = LrSchedule::Cosine;
  cfg.final_lr_fraction = 0.1;
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 10, 110), 0.01);
  EXPECT_NEAR(scheduled_lr(cfg, 60, 110), 0.01 * (0.1 + 0.9 * 0.5), 1e-15);
  EXPECT_NEAR(scheduled_lr(cfg, 110, 110), 0.001, 1e-15);
  EXPECT_NEAR(scheduled_lr(cfg, 500, 110), 0.001, 1e-15);
  for (std::int64_t s = 11; s < 110; ++s) EXPECT_LT(scheduled_lr(cfg, s + 1, 110), scheduled_lr(cfg, s, 110));
  EXPECT_EQ(lr_schedule_from_name("cosine"), LrSchedule::Cosine);
  EXPECT_EQ(lr_schedule_name(LrSchedule::Constant), "constant");
  EXPECT_THROW(lr_schedule_from_name("step"), std::invalid_argument);
}

TEST(Train, ResumeFollowsTheSameSchedule) {
  TempDir dir("train");
  const auto data = examples(4);
  auto cfg = quick_config();
  cfg.epochs = 3;
  cfg.schedule = LrSchedule::Cosine;
  cfg.warmup_steps = 1;

  auto full = start_training(fresh_params());
  train(full, data, {}, cfg, kProfile);

  // interrupt during the second epoch's logging, after the first checkpoint
  auto part = start_training(fresh_params());
  auto interrupted = cfg;
  interrupted.checkpoint = dir / "c.ckpt";
  interrupted.log = [](const std::string& line) {
    if (line.rfind("epoch 1 ", 0) == 0) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(train(part, data, {}, interrupted, kProfile), std::runtime_error);
  auto resumed = load_checkpoint(dir / "c.ckpt");
  EXPECT_EQ(resumed.next_epoch, 1);
  train(resumed, data, {}, cfg, kProfile);
  expect_same(full.params, resumed.params);
}
