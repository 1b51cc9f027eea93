// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "kgfp/rng.hpp"

namespace kgfp {

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kLars ? "lars" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "lars") return OptimizerKind::kLars;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (lars|adam)");
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + " must be positive");
    }
  };
  positive(lr, "lr");
  positive(t_max, "t_max");
  positive(eta_min, "eta_min");
  positive(clip_norm, "clip_norm");
  positive(lars_eta, "lars_eta");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw std::invalid_argument("split_fraction must lie in (0, 1)");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
}

std::string format_epoch_log(const EpochLog& log) {
  const nlohmann::ordered_json j{{"epoch", log.epoch},
                                 {"loss", log.loss},
                                 {"mean_cos", log.mean_cos},
                                 {"lr", log.lr},
                                 {"collapse_warning", log.collapse_warning}};
  return j.dump();
}

double cosine_lr(double epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  const double e = std::min(epoch, cfg.t_max);
  return cfg.eta_min +
         0.5 * (cfg.lr - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * e / cfg.t_max));
}

namespace {

template <typename T>
double norm(const Tensor<T>& t) {
  double acc = 0;
  for (T v : t.values()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace

template <typename T>
double clip_gradients(std::span<Tensor<T>> grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) {
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double total = std::sqrt(sq);
  if (!std::isfinite(total)) throw NumericError("gradient norm is not finite");
  if (total > max_norm) {
    const T factor = static_cast<T>(max_norm / total);
    for (auto& g : grads) {
      for (T& v : g.values()) v *= factor;
    }
  }
  return total;
}

template <typename T>
void lars_update(Tensor<T>& w, const Tensor<T>& grad, Tensor<T>& m, ParamKind kind,
                 double lr, const TrainConfig& cfg) {
  const std::size_t n = w.size();
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = static_cast<double>(grad[i]) + cfg.weight_decay * static_cast<double>(w[i]);
  }
  double trust = 1.0;
  if (kind == ParamKind::kWeight) {
    const double w_norm = norm(w);
    double g_norm = 0;
    for (double v : g) g_norm += v * v;
    g_norm = std::sqrt(g_norm);
    if (w_norm > 0 && g_norm > 0) trust = cfg.lars_eta * w_norm / (g_norm + 1e-9);
  }
  const double scale = trust * lr;
  for (std::size_t i = 0; i < n; ++i) {
    const double mi = cfg.momentum * static_cast<double>(m[i]) + scale * g[i];
    m[i] = static_cast<T>(mi);
    w[i] = static_cast<T>(static_cast<double>(w[i]) - mi);
  }
}

template <typename T>
void adam_update(Tensor<T>& w, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, double lr, const TrainConfig& cfg) {
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wi = static_cast<double>(w[i]);
    const double g = static_cast<double>(grad[i]) + cfg.weight_decay * wi;
    const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w[i] = static_cast<T>(wi - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps));
  }
}

template double clip_gradients(std::span<TensorF>, double);
template double clip_gradients(std::span<TensorD>, double);
template void lars_update(TensorF&, const TensorF&, TensorF&, ParamKind, double,
                          const TrainConfig&);
template void lars_update(TensorD&, const TensorD&, TensorD&, ParamKind, double,
                          const TrainConfig&);
template void adam_update(TensorF&, const TensorF&, TensorF&, TensorF&, std::uint64_t, double,
                          const TrainConfig&);
template void adam_update(TensorD&, const TensorD&, TensorD&, TensorD&, std::uint64_t, double,
                          const TrainConfig&);

TrainState init_train_state(const FusionModel<float>& model, const TrainConfig& cfg) {
  TrainState s;
  for (const auto& p : model.params()) {
    s.m.emplace_back(p.value.shape(), 0.0f);
    if (cfg.optimizer == OptimizerKind::kAdam) s.v.emplace_back(p.value.shape(), 0.0f);
  }
  return s;
}

StepResult train_step(FusionModel<float>& model, TrainState& state,
                      std::span<const FeatureRecord* const> batch, double lr,
                      const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  auto& params = model.params();
  std::vector<TensorF> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.value.shape(), 0.0f);

  const float inv_b = 1.0f / static_cast<float>(batch.size());
  StepResult r;
  ad::Tape<float> tape;
  for (const FeatureRecord* rec : batch) {
    check_record_finite(*rec);
    tape.clear();
    const Bound<float> b = model.bind(tape);
    const ForwardResult<float> f = model.forward(b, *rec);
    const ad::Var<float> loss = ad::bce(f.p_unsafe, rec->label);
    const double l = loss.value()[0];
    if (!std::isfinite(l)) {
      throw NumericError("non-finite loss on record '" + rec->record_id + "'");
    }
    r.loss += l;
    r.mean_cos += f.cosine.value()[0];
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const TensorF* g = tape.grad(b.vars[i]);
      if (g == nullptr) continue;
      float* dst = grads[i].data();
      const float* src = g->data();
      for (std::size_t k = 0; k < grads[i].size(); ++k) dst[k] += src[k] * inv_b;
    }
  }
  r.loss /= static_cast<double>(batch.size());
  r.mean_cos /= static_cast<double>(batch.size());
  r.grad_norm = clip_gradients(std::span<TensorF>(grads), cfg.clip_norm);

  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (cfg.optimizer == OptimizerKind::kLars) {
      lars_update(params[i].value, grads[i], state.m[i], params[i].kind, lr, cfg);
    } else {
      adam_update(params[i].value, grads[i], state.m[i], state.v[i], state.step, lr, cfg);
    }
  }
  return r;
}

TrainResult train(std::span<const FeatureRecord> records, const TrainConfig& cfg,
                  const ArchConfig& arch, const PyramidSpec& spec, std::uint32_t d_wk,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (records.size() < 2 * std::size_t{cfg.batch_size}) {
    throw std::invalid_argument("training needs at least 2 * batch_size = " +
                                std::to_string(2 * cfg.batch_size) + " records, got " +
                                std::to_string(records.size()));
  }
  std::size_t unsafe = 0;
  for (const auto& r : records) unsafe += r.label;
  if (unsafe == 0 || unsafe == records.size()) {
    throw std::invalid_argument("training set contains a single class");
  }

  const Rng root(cfg.seed);
  TrainResult out{FusionModel<float>(arch, spec, d_wk, root.split(1).next_u64()), {}};
  out.state = init_train_state(out.model, cfg);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const FeatureRecord*> batch;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    Rng shuffle_rng = root.split(1000 + epoch);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0, cos_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&records[order[i]]);
      const StepResult s = train_step(out.model, out.state, batch, lr, cfg);
      loss_sum += s.loss * static_cast<double>(batch.size());
      cos_sum += s.mean_cos * static_cast<double>(batch.size());
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(records.size());
    log.mean_cos = cos_sum / static_cast<double>(records.size());
    log.lr = lr;
    log.collapse_warning = log.mean_cos > kCollapseCosine;
    out.state.epoch = epoch + 1;
    out.state.loss_history.push_back(log.loss);
    out.state.mean_cos_history.push_back(log.mean_cos);
    out.state.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return out;
}

std::pair<std::vector<FeatureRecord>, std::vector<FeatureRecord>> split_train_val(
    std::vector<FeatureRecord> records, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(seed).split(77).shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(records.size())));
  std::pair<std::vector<FeatureRecord>, std::vector<FeatureRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(std::move(records[order[i]]));
  }
  return out;
}

}  // namespace kgfp
