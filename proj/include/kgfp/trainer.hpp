// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgfp/feature_cache.hpp"
#include "kgfp/fusion_net.hpp"

namespace kgfp {

enum class OptimizerKind { kLars, kAdam };

const char* optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  double lr = 0.00095;
  double momentum = 0.9;
  double weight_decay = 0.0009;
  double lars_eta = 0.001;
  std::uint32_t epochs = 60;
  double t_max = 60;
  double eta_min = 5e-7;
  double clip_norm = 1.0;
  std::uint32_t batch_size = 6;
  OptimizerKind optimizer = OptimizerKind::kLars;
  double split_fraction = 0.9;
  std::uint64_t seed = 0;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct EpochLog {
  std::uint32_t epoch = 0;
  double loss = 0;
  double mean_cos = 0;
  double lr = 0;
  bool collapse_warning = false;
};

/// Mean cosine above this is flagged as possible embedding collapse.
inline constexpr double kCollapseCosine = 0.98;

/// One JSON object per line: {"epoch":..,"loss":..,"mean_cos":..,"lr":..,"collapse_warning":..}
std::string format_epoch_log(const EpochLog& log);

struct TrainState {
  /// LARS momentum or Adam first moment, one per parameter.
  std::vector<TensorF> m;
  /// Adam second moment (empty for LARS).
  std::vector<TensorF> v;
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  std::vector<double> loss_history;
  std::vector<double> mean_cos_history;
  std::vector<EpochLog> log;
};

/// lr_t = eta_min + (lr - eta_min) (1 + cos(pi epoch / T_max)) / 2, with
/// epoch clamped to T_max.
double cosine_lr(double epoch, const TrainConfig& cfg);

/// Rescales every gradient by max_norm / norm when the global L2 norm
/// exceeds max_norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(std::span<Tensor<T>> grads, double max_norm);

/// One LARS update of a single tensor:
///   g <- grad + wd w
///   trust = eta |w| / (|g| + 1e-9) if |w| > 0 and |g| > 0 (and the tensor
///           is a weight), else 1
///   m <- momentum m + trust lr g
///   w <- w - m
template <typename T>
void lars_update(Tensor<T>& w, const Tensor<T>& grad, Tensor<T>& m, ParamKind kind,
                 double lr, const TrainConfig& cfg);

/// Adam with coupled weight decay; `step` counts from 1.
template <typename T>
void adam_update(Tensor<T>& w, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, double lr, const TrainConfig& cfg);

TrainState init_train_state(const FusionModel<float>& model, const TrainConfig& cfg);

struct StepResult {
  double loss = 0;      // mean BCE over the batch
  double mean_cos = 0;  // mean angular similarity over the batch
  double grad_norm = 0; // before clipping
};

/// Forward/backward over the batch (gradients averaged), clip, then one
/// optimizer update at learning rate lr. Throws NumericError on NaN/Inf.
StepResult train_step(FusionModel<float>& model, TrainState& state,
                      std::span<const FeatureRecord* const> batch, double lr,
                      const TrainConfig& cfg);

struct TrainResult {
  FusionModel<float> model;
  TrainState state;
};

/// Seeded end-to-end training. Each epoch reshuffles, keeps the last partial
/// batch, and appends an EpochLog (also passed to on_epoch when set).
/// Throws std::invalid_argument for fewer than 2 * batch_size records or a
/// single-class set.
TrainResult train(std::span<const FeatureRecord> records, const TrainConfig& cfg,
                  const ArchConfig& arch, const PyramidSpec& spec, std::uint32_t d_wk,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Seeded shuffle, then the first round(fraction * n) records train.
std::pair<std::vector<FeatureRecord>, std::vector<FeatureRecord>> split_train_val(
    std::vector<FeatureRecord> records, double fraction, std::uint64_t seed);

}  // namespace kgfp
