// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <iterator>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "kgfp/synthetic.hpp"
#include "kgfp/trainer.hpp"

namespace kgfp {
namespace {

PyramidSpec tiny_spec() { return PyramidSpec::from_extents({{2, 4, 4}, {3, 2, 2}}); }
constexpr std::uint32_t kTinyWk = 3;

ArchConfig tiny_arch() {
  ArchConfig a;
  a.common_channels = 4;
  a.patch_size = 2;
  a.heads = 2;
  a.n_self_blocks = 1;
  a.n_cross_blocks = 1;
  a.embed_dim = 4;
  a.token_dim = 4;
  a.prefusion_dim = 4;
  a.wk_hidden = {6, 5};
  a.mlp_head_hidden = 3;
  return a;
}

TrainConfig sgd_like() {
  TrainConfig c;
  c.momentum = 0;
  c.weight_decay = 0;
  return c;
}

TEST(Lars, SingleScalarStepMatchesHandValue) {
  TrainConfig c = sgd_like();
  c.lars_eta = 0.001;
  TensorD w = TensorD::from({1}, {2.0});
  TensorD m({1});
  lars_update(w, TensorD::from({1}, {1.0}), m, ParamKind::kWeight, 1.0, c);
  // 0.001 * (2 / 1) * 1 * 1; the 1e-9 stabilizer shifts it by ~2e-12.
  EXPECT_NEAR(2.0 - w[0], 0.002, 1e-11);
  EXPECT_NEAR(m[0], 0.002, 1e-11);
}

TEST(Lars, TwoStepMomentumScript) {
  TrainConfig c;
  c.momentum = 0.9;
  c.weight_decay = 0.01;
  c.lars_eta = 0.5;
  const double lr = 0.1;
  TensorD w = TensorD::from({2}, {3.0, 4.0});
  TensorD m({2});
  const TensorD g1 = TensorD::from({2}, {0.5, -1.0});
  const TensorD g2 = TensorD::from({2}, {-0.2, 0.3});

  // Scripted by hand, step by step.
  double w0 = 3.0, w1 = 4.0, m0 = 0, m1 = 0;
  auto step = [&](double a, double b) {
    const double ga = a + 0.01 * w0, gb = b + 0.01 * w1;
    const double trust = 0.5 * std::hypot(w0, w1) / (std::hypot(ga, gb) + 1e-9);
    m0 = 0.9 * m0 + trust * lr * ga;
    m1 = 0.9 * m1 + trust * lr * gb;
    w0 -= m0;
    w1 -= m1;
  };
  lars_update(w, g1, m, ParamKind::kWeight, lr, c);
  step(0.5, -1.0);
  EXPECT_NEAR(w[0], w0, 1e-12);
  EXPECT_NEAR(w[1], w1, 1e-12);
  lars_update(w, g2, m, ParamKind::kWeight, lr, c);
  step(-0.2, 0.3);
  EXPECT_NEAR(w[0], w0, 1e-12);
  EXPECT_NEAR(w[1], w1, 1e-12);
  EXPECT_NEAR(m[0], m0, 1e-12);
  EXPECT_NEAR(m[1], m1, 1e-12);
}

TEST(Lars, ReducesToSgdWhenTrustIsOne) {
  // trust = eta |w| / |g| = 1 when eta = |g| / |w|.
  TensorD w = TensorD::from({3}, {1.0, -2.0, 2.0});   // |w| = 3
  const TensorD g = TensorD::from({3}, {0.6, 0.0, -0.8});  // |g| = 1
  TrainConfig c = sgd_like();
  c.lars_eta = 1.0 / 3.0;
  TensorD m({3});
  const TensorD before = w;
  lars_update(w, g, m, ParamKind::kWeight, 0.05, c);
  // Exact up to the 1e-9 stabilizer in the trust denominator.
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], before[i] - 0.05 * g[i], 1e-10);
}

TEST(Lars, BiasAndNormSkipTrustRatio) {
  TrainConfig c = sgd_like();
  for (ParamKind kind : {ParamKind::kBias, ParamKind::kNorm}) {
    TensorD w = TensorD::from({1}, {5.0});
    TensorD m({1});
    lars_update(w, TensorD::from({1}, {2.0}), m, kind, 0.1, c);
    EXPECT_NEAR(w[0], 5.0 - 0.2, 1e-12);
  }
}

TEST(Lars, ZeroGradientLeavesWeightsUnchanged) {
  TrainConfig c = sgd_like();
  TensorD w = TensorD::from({2}, {1.5, -0.5});
  TensorD m({2});
  lars_update(w, TensorD({2}), m, ParamKind::kWeight, 1.0, c);
  EXPECT_EQ(w[0], 1.5);
  EXPECT_EQ(w[1], -0.5);
}

TEST(Lars, ZeroWeightUsesUnitTrust) {
  TrainConfig c = sgd_like();
  TensorD w({2});
  TensorD m({2});
  lars_update(w, TensorD::from({2}, {1.0, 2.0}), m, ParamKind::kWeight, 0.1, c);
  EXPECT_NEAR(w[0], -0.1, 1e-12);
  EXPECT_NEAR(w[1], -0.2, 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig c = sgd_like();
  TensorD w = TensorD::from({2}, {1.0, 1.0});
  TensorD m({2}), v({2});
  adam_update(w, TensorD::from({2}, {3.0, -0.01}), m, v, 1, 0.01, c);
  // Bias-corrected first step is lr * sign(g) up to eps.
  EXPECT_NEAR(w[0], 0.99, 1e-6);
  EXPECT_NEAR(w[1], 1.01, 1e-5);
}

TEST(Adam, ConvergesOnQuadratic) {
  TrainConfig c = sgd_like();
  TensorD w = TensorD::from({2}, {4.0, -3.0});
  TensorD m({2}), v({2});
  for (std::uint64_t t = 1; t <= 3000; ++t) {
    TensorD g = TensorD::from({2}, {2.0 * (w[0] - 1.0), 2.0 * (w[1] + 2.0)});
    adam_update(w, g, m, v, t, 0.01, c);
  }
  EXPECT_NEAR(w[0], 1.0, 1e-2);
  EXPECT_NEAR(w[1], -2.0, 1e-2);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), 0.00095);
  EXPECT_NEAR(cosine_lr(60, c), 5e-7, 1e-18);
  EXPECT_NEAR(cosine_lr(30, c), (0.00095 + 5e-7) / 2, 1e-15);
  EXPECT_NEAR(cosine_lr(500, c), 5e-7, 1e-18);
  EXPECT_THROW(cosine_lr(-1, c), std::invalid_argument);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  const TrainConfig c;
  for (int e = 1; e <= 60; ++e) EXPECT_LE(cosine_lr(e, c), cosine_lr(e - 1, c));
}

TEST(Clip, RescalesAboveThresholdOnly) {
  std::vector<TensorD> g{TensorD::from({2}, {3.0, 0.0}), TensorD::from({1}, {4.0})};
  EXPECT_NEAR(clip_gradients(std::span<TensorD>(g), 10.0), 5.0, 1e-12);
  EXPECT_EQ(g[0][0], 3.0);

  EXPECT_NEAR(clip_gradients(std::span<TensorD>(g), 2.0), 5.0, 1e-12);
  EXPECT_NEAR(g[0][0], 1.2, 1e-12);
  EXPECT_NEAR(g[1][0], 1.6, 1e-12);

  std::vector<TensorD> h{TensorD::from({2}, {0.3, -0.4})};
  clip_gradients(std::span<TensorD>(h), 0.25);
  EXPECT_NEAR(std::hypot(h[0][0], h[0][1]), 0.25, 1e-12);
  EXPECT_NEAR(h[0][0] / h[0][1], -0.75, 1e-12);
}

TEST(Clip, NonFiniteThrows) {
  std::vector<TensorD> g{TensorD::from({1}, {std::nan("")})};
  EXPECT_THROW(clip_gradients(std::span<TensorD>(g), 1.0), NumericError);
}

TEST(Bce, MatchesClosedForm) {
  ad::Tape<double> tape;
  auto p = tape.constant(TensorD::scalar(0.8));
  EXPECT_NEAR(ad::bce(p, 1).value()[0], -std::log(0.8), 1e-9);
  EXPECT_NEAR(ad::bce(p, 0).value()[0], -std::log(0.2), 1e-9);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.split_fraction = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::kAdam);
  EXPECT_THROW(parse_optimizer("sgd"), std::invalid_argument);
}

TEST(EpochLog, IsOneJsonLine) {
  EpochLog l{3, 0.25, 0.5, 1e-4, false};
  const std::string s = format_epoch_log(l);
  EXPECT_EQ(s.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(s);
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_DOUBLE_EQ(j["loss"].get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(j["mean_cos"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["lr"].get<double>(), 1e-4);
  EXPECT_FALSE(j["collapse_warning"].get<bool>());
}

std::vector<FeatureRecord> tiny_records(std::size_t n, double hardness, std::uint64_t seed) {
  return generate_synthetic(tiny_spec(), kTinyWk, n, 0.5, hardness, seed);
}

TEST(TrainStep, LossDecreasesOnFrozenBatch) {
  const auto recs = tiny_records(6, 0.0, 3);
  std::vector<const FeatureRecord*> batch;
  for (const auto& r : recs) batch.push_back(&r);
  TrainConfig c;
  c.optimizer = OptimizerKind::kAdam;
  FusionModel<float> model(tiny_arch(), tiny_spec(), kTinyWk, 11);
  TrainState s = init_train_state(model, c);
  std::vector<double> losses;
  for (int i = 0; i < 6; ++i) losses.push_back(train_step(model, s, batch, 0.01, c).loss);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << i;
  EXPECT_EQ(s.step, 6u);
}

TEST(TrainStep, LarsLossDecreasesOnFrozenBatch) {
  const auto recs = tiny_records(6, 0.0, 4);
  std::vector<const FeatureRecord*> batch;
  for (const auto& r : recs) batch.push_back(&r);
  TrainConfig c;
  FusionModel<float> model(tiny_arch(), tiny_spec(), kTinyWk, 12);
  TrainState s = init_train_state(model, c);
  const double first = train_step(model, s, batch, 0.5, c).loss;
  double last = first;
  for (int i = 0; i < 5; ++i) last = train_step(model, s, batch, 0.5, c).loss;
  EXPECT_LT(last, first);
}

TEST(TrainStep, NonFiniteInputThrows) {
  auto recs = tiny_records(2, 0.0, 5);
  recs[0].wk_embedding[0] = std::numeric_limits<float>::infinity();
  std::vector<const FeatureRecord*> batch{&recs[0]};
  TrainConfig c;
  FusionModel<float> model(tiny_arch(), tiny_spec(), kTinyWk, 1);
  TrainState s = init_train_state(model, c);
  EXPECT_THROW(train_step(model, s, batch, 0.01, c), NumericError);
}

TEST(Train, LearnsSeparableData) {
  const auto recs = tiny_records(120, 0.0, 7);
  TrainConfig c;
  c.optimizer = OptimizerKind::kAdam;
  c.lr = 0.01;
  c.epochs = 25;
  c.t_max = 25;
  c.seed = 2;
  std::vector<EpochLog> seen;
  const TrainResult r =
      train(recs, c, tiny_arch(), tiny_spec(), kTinyWk, [&](const EpochLog& l) { seen.push_back(l); });
  ASSERT_EQ(seen.size(), 25u);
  ASSERT_EQ(r.state.loss_history.size(), 25u);
  EXPECT_LT(r.state.loss_history.back(), 0.1);
  EXPECT_LT(r.state.loss_history.back(), r.state.loss_history.front());
  EXPECT_DOUBLE_EQ(seen.front().lr, 0.01);
  // 120 records in batches of 6 is 20 steps per epoch.
  EXPECT_EQ(r.state.step, 25u * 20u);
}

TEST(Train, PartialLastBatchIsKept) {
  const auto recs = tiny_records(13, 0.0, 8);
  TrainConfig c;
  c.epochs = 2;
  const TrainResult r = train(recs, c, tiny_arch(), tiny_spec(), kTinyWk);
  EXPECT_EQ(r.state.step, 2u * 3u);
}

TEST(Train, PreconditionsThrow) {
  TrainConfig c;
  c.epochs = 1;
  EXPECT_THROW(train(tiny_records(11, 0.0, 1), c, tiny_arch(), tiny_spec(), kTinyWk),
               std::invalid_argument);
  auto recs = tiny_records(20, 0.0, 1);
  for (auto& r : recs) {
    r.label = 0;
    r.matched_count = r.gt_count;
  }
  EXPECT_THROW(train(recs, c, tiny_arch(), tiny_spec(), kTinyWk), std::invalid_argument);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const auto recs = tiny_records(30, 0.5, 9);
  TrainConfig c;
  c.epochs = 3;
  c.seed = 42;
  const auto dir = std::filesystem::temp_directory_path() / "kgfp_trainer_det";
  std::filesystem::create_directories(dir);
  for (int i = 0; i < 2; ++i) {
    const TrainResult r = train(recs, c, tiny_arch(), tiny_spec(), kTinyWk);
    save_model((dir / ("m" + std::to_string(i))).string(), r.model);
  }
  c.seed = 43;
  save_model((dir / "m2").string(), train(recs, c, tiny_arch(), tiny_spec(), kTinyWk).model);
  EXPECT_EQ(slurp(dir / "m0"), slurp(dir / "m1"));
  EXPECT_NE(slurp(dir / "m0"), slurp(dir / "m2"));
  std::filesystem::remove_all(dir);
}

TEST(Split, DeterministicPartition) {
  const auto recs = tiny_records(50, 0.0, 10);
  auto [a, b] = split_train_val(recs, 0.9, 5);
  EXPECT_EQ(a.size(), 45u);
  EXPECT_EQ(b.size(), 5u);
  auto [a2, b2] = split_train_val(recs, 0.9, 5);
  EXPECT_EQ(a, a2);
  std::vector<std::string> ids;
  for (const auto& r : a) ids.push_back(r.record_id);
  for (const auto& r : b) ids.push_back(r.record_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
  EXPECT_THROW(split_train_val(recs, 1.0, 5), std::invalid_argument);
}

}  // namespace
}  // namespace kgfp
