// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kgfp/autodiff.hpp"
#include "kgfp/feature_cache.hpp"

namespace kgfp {

enum class HeadKind { kCosine, kMlp };

const char* head_kind_name(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct ArchConfig {
  std::uint32_t common_channels = 256;
  std::uint32_t patch_size = 4;
  std::uint32_t heads = 8;
  std::uint32_t n_self_blocks = 2;
  std::uint32_t n_cross_blocks = 2;
  std::uint32_t embed_dim = 64;
  /// Width of patch tokens after the patch embedding.
  std::uint32_t token_dim = 16;
  /// Inner width of the cross-scale attention among level tokens.
  std::uint32_t prefusion_dim = 32;
  std::uint32_t ff_mult = 4;
  std::vector<std::uint32_t> wk_hidden{1024, 768, 640, 512};
  std::uint32_t mlp_head_hidden = 64;
  bool use_pre_fusion_attn = true;
  bool use_post_self_attn = true;
  bool use_post_cross_attn = true;
  HeadKind head_kind = HeadKind::kCosine;

  static ArchConfig paper_scale();
  static ArchConfig desk_scale();

  /// Throws std::invalid_argument when the config cannot run on `spec`.
  void validate(const PyramidSpec& spec) const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Parameters that LARS leaves at trust ratio 1.
enum class ParamKind { kWeight, kBias, kNorm };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  ParamKind kind = ParamKind::kWeight;
};

/// Nodes produced by one forward pass.
template <typename T>
struct ForwardResult {
  ad::Var<T> e_pr;       // [d]
  ad::Var<T> e_wk;       // [d]
  ad::Var<T> cosine;     // [1], always the angular similarity
  ad::Var<T> p_unsafe;   // [1]
  ad::Var<T> s_safety;   // [1], higher = safer; 1 - 2 p_unsafe
};

/// Tape leaves for every parameter, in parameter order.
template <typename T>
struct Bound {
  ad::Tape<T>* tape = nullptr;
  std::vector<ad::Var<T>> vars;
};

template <typename T>
class FusionModel {
 public:
  FusionModel() = default;
  /// Fresh parameters drawn from `seed`.
  FusionModel(const ArchConfig& arch, const PyramidSpec& spec, std::uint32_t d_wk,
              std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  const PyramidSpec& spec() const { return spec_; }
  std::uint32_t d_wk() const { return d_wk_; }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  std::size_t parameter_count() const;

  Bound<T> bind(ad::Tape<T>& tape, bool requires_grad = true) const;

  ForwardResult<T> forward(const Bound<T>& b, const FeatureRecord& record) const;

  // Stages, exposed for tests. Inputs and outputs live on b.tape.
  std::vector<ad::Var<T>> project(const Bound<T>& b,
                                  const std::vector<ad::Var<T>>& pyramid) const;
  std::vector<ad::Var<T>> pre_fusion_attention(const Bound<T>& b,
                                               const std::vector<ad::Var<T>>& levels) const;
  ad::Var<T> fuse(const std::vector<ad::Var<T>>& levels) const;
  ad::Var<T> tokens(const Bound<T>& b, ad::Var<T> fused) const;
  ad::Var<T> encode_pr(const Bound<T>& b, ad::Var<T> tokens) const;
  ad::Var<T> encode_wk(const Bound<T>& b, ad::Var<T> wk) const;
  ad::Var<T> mlp_head(const Bound<T>& b, ad::Var<T> e_pr, ad::Var<T> e_wk) const;

  /// Plain evaluation of one record without keeping gradients.
  struct Scores {
    double s_safety = 0;
    double p_unsafe = 0;
    double cosine = 0;
  };
  Scores score(const FeatureRecord& record) const;

  template <typename U>
  FusionModel<U> cast() const;

 private:
  template <typename U>
  friend class FusionModel;

  void add(const std::string& name, Tensor<T> value, ParamKind kind);
  std::size_t index(const std::string& name) const;
  ad::Var<T> v(const Bound<T>& b, const std::string& name) const {
    return b.vars[index(name)];
  }
  ad::Var<T> block(const Bound<T>& b, const std::string& prefix, ad::Var<T> x,
                   ad::Var<T> kv, bool cross) const;
  ad::AttentionWeights<T> attention(const Bound<T>& b, const std::string& prefix) const;

  ArchConfig arch_;
  PyramidSpec spec_;
  std::uint32_t d_wk_ = 0;
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

extern template class FusionModel<float>;
extern template class FusionModel<double>;

/// p_unsafe = (1 - s) / 2.
double score_to_probability(double s);
template <typename T>
ad::Var<T> score_to_probability(ad::Var<T> s);

/// Checkpoint IO (KGFPMDL1). Round trip is exact.
void save_model(const std::string& path, const FusionModel<float>& model);
FusionModel<float> load_model(const std::string& path);

/// Parameter count of a model built from these settings.
std::size_t count_parameters(const ArchConfig& arch, const PyramidSpec& spec,
                             std::uint32_t d_wk);

}  // namespace kgfp
