// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace kgfp {

using nlohmann::json;

PyramidSpec RunConfig::spec() const {
  return preset == "paper" ? PyramidSpec::paper_scale() : PyramidSpec::desk_scale();
}

std::uint32_t RunConfig::d_wk() const { return preset == "paper" ? kPaperWkDim : kDeskWkDim; }

namespace {

using Setter = std::function<void(const json&)>;

struct TypeMismatch {
  const char* expected;
};

void apply(const json& obj, const std::string& where, const std::map<std::string, Setter>& keys) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown config key '" + where + "." + key + "'");
    const std::string name = "config key '" + where + "." + key + "'";
    try {
      it->second(value);
    } catch (const TypeMismatch& t) {
      throw ConfigError(name + ": expected " + t.expected);
    } catch (const json::exception&) {
      throw ConfigError(name + " has the wrong type");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw TypeMismatch{"a boolean"};
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw TypeMismatch{"a number"};
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_float() || v.get<double>() < 0) {
          throw TypeMismatch{"a non-negative integer"};
        }
      }
    }
    field = v.get<T>();
  };
}

void apply_arch(ArchConfig& a, const json& j) {
  apply(j, "arch",
        {{"common_channels", set(a.common_channels)},
         {"patch_size", set(a.patch_size)},
         {"heads", set(a.heads)},
         {"n_self_blocks", set(a.n_self_blocks)},
         {"n_cross_blocks", set(a.n_cross_blocks)},
         {"embed_dim", set(a.embed_dim)},
         {"token_dim", set(a.token_dim)},
         {"prefusion_dim", set(a.prefusion_dim)},
         {"ff_mult", set(a.ff_mult)},
         {"wk_hidden", set(a.wk_hidden)},
         {"mlp_head_hidden", set(a.mlp_head_hidden)},
         {"use_pre_fusion_attn", set(a.use_pre_fusion_attn)},
         {"use_post_self_attn", set(a.use_post_self_attn)},
         {"use_post_cross_attn", set(a.use_post_cross_attn)},
         {"head_kind", [&a](const json& v) {
            a.head_kind = parse_head_kind(v.get<std::string>());
          }}});
}

void apply_train(TrainConfig& t, const json& j) {
  apply(j, "train",
        {{"lr", set(t.lr)},
         {"momentum", set(t.momentum)},
         {"weight_decay", set(t.weight_decay)},
         {"lars_eta", set(t.lars_eta)},
         {"epochs", set(t.epochs)},
         {"t_max", set(t.t_max)},
         {"eta_min", set(t.eta_min)},
         {"clip_norm", set(t.clip_norm)},
         {"batch_size", set(t.batch_size)},
         {"optimizer", [&t](const json& v) {
            t.optimizer = parse_optimizer(v.get<std::string>());
          }},
         {"split_fraction", set(t.split_fraction)},
         {"seed", set(t.seed)},
         {"adam_beta1", set(t.adam_beta1)},
         {"adam_beta2", set(t.adam_beta2)},
         {"adam_eps", set(t.adam_eps)}});
}

void apply_label(LabelConfig& l, const json& j) {
  apply(j, "label",
        {{"iou_threshold", set(l.iou_threshold)},
         {"confidence_threshold", set(l.confidence_threshold)},
         {"safety_class_ids", set(l.safety_class_ids)}});
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  // The preset decides the defaults the other sections overlay.
  if (j.is_object() && j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("config key 'preset' must be a string");
    c.preset = j["preset"].get<std::string>();
    if (c.preset != "desk" && c.preset != "paper") {
      throw ConfigError("preset must be 'desk' or 'paper'");
    }
    c.arch = c.preset == "paper" ? ArchConfig::paper_scale() : ArchConfig::desk_scale();
  }
  {
    apply(j, "config",
          {{"preset", [](const json&) {}},
           {"seed", set(c.seed)},
           {"target_fpr", set(c.target_fpr)},
           {"arch", [&c](const json& v) { apply_arch(c.arch, v); }},
           {"train", [&c](const json& v) { apply_train(c.train, v); }},
           {"label", [&c](const json& v) { apply_label(c.label, v); }}});
  }
  try {
    c.train.validate();
    c.label.validate();
    c.arch.validate(c.spec());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.target_fpr >= 0 && c.target_fpr <= 1)) throw ConfigError("target_fpr must lie in [0, 1]");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& a = c.arch;
  const auto& t = c.train;
  nlohmann::ordered_json j{
      {"preset", c.preset},
      {"seed", c.seed},
      {"target_fpr", c.target_fpr},
      {"arch",
       {{"common_channels", a.common_channels},
        {"patch_size", a.patch_size},
        {"heads", a.heads},
        {"n_self_blocks", a.n_self_blocks},
        {"n_cross_blocks", a.n_cross_blocks},
        {"embed_dim", a.embed_dim},
        {"token_dim", a.token_dim},
        {"prefusion_dim", a.prefusion_dim},
        {"ff_mult", a.ff_mult},
        {"wk_hidden", a.wk_hidden},
        {"mlp_head_hidden", a.mlp_head_hidden},
        {"use_pre_fusion_attn", a.use_pre_fusion_attn},
        {"use_post_self_attn", a.use_post_self_attn},
        {"use_post_cross_attn", a.use_post_cross_attn},
        {"head_kind", head_kind_name(a.head_kind)}}},
      {"train",
       {{"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"lars_eta", t.lars_eta},
        {"epochs", t.epochs},
        {"t_max", t.t_max},
        {"eta_min", t.eta_min},
        {"clip_norm", t.clip_norm},
        {"batch_size", t.batch_size},
        {"optimizer", optimizer_name(t.optimizer)},
        {"split_fraction", t.split_fraction},
        {"seed", t.seed},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps}}},
      {"label",
       {{"iou_threshold", c.label.iou_threshold},
        {"confidence_threshold", c.label.confidence_threshold},
        {"safety_class_ids", c.label.safety_class_ids}}}};
  return j.dump(2) + "\n";
}

}  // namespace kgfp
