// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

// Comparison scorers. Every score is oriented so that higher means safer.
// The unsupervised fits accept safe records only and throw on anything else.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kgfp/feature_cache.hpp"

namespace kgfp {

inline constexpr int kGramMaxOrder = 5;
inline constexpr double kGramEps = 1e-6;

/// Per level and order p, elementwise bounds of the upper triangle (with
/// diagonal) of G_p = F^p (F^p)^T / (H W), where F^p = sign(F) |F|^p.
struct GramStats {
  std::vector<std::uint32_t> channels;           // per level
  std::vector<std::vector<TensorF>> min, max;    // [level][order - 1], length C(C+1)/2
};

/// Upper-triangle Gram features of one level map [C,H,W] at order p, in
/// row-major (i <= j) order.
std::vector<double> gram_features(const TensorF& level, int order);

GramStats gram_fit(std::span<const FeatureRecord> safe);
/// -(sum over levels, orders and elements of max(0, min - g, g - max) /
/// (|violated bound| + kGramEps)).
double gram_score(const GramStats& stats, const FeatureRecord& record);

struct KnnIndex {
  std::uint32_t k = 5;
  std::vector<TensorF> bank;  // per level [n, C], rows L2-normalized
};

/// Spatial mean of a [C,H,W] map, L2-normalized (zero stays zero).
std::vector<double> pooled_unit(const TensorF& level);

KnnIndex knn_fit(std::span<const FeatureRecord> safe, std::uint32_t k = 5);
/// -(mean over levels of the distance to the k-th nearest stored row).
double knn_score(const KnnIndex& index, const FeatureRecord& record);

/// PCA residual model over one vector space.
struct VimSpace {
  TensorF mean;        // [dim]
  TensorF principal;   // [dim, q], orthonormal columns
};

struct VimModel {
  /// Pyramid levels (spatially mean-pooled) or the single wk space.
  bool on_wk = false;
  std::vector<VimSpace> spaces;
};

/// Fits mean and the top min(q, dim - 1) covariance eigenvectors. Directions
/// with eigenvalue below 1e-10 of the largest are dropped.
VimSpace vim_fit_space(std::span<const std::vector<double>> rows, std::uint32_t q);
double vim_residual(const VimSpace& space, std::span<const double> x);

VimModel vim_fit(std::span<const FeatureRecord> safe, std::uint32_t q = 100);
VimModel dino_vim_fit(std::span<const FeatureRecord> safe, std::uint32_t q = 100);
/// -(sum over spaces of the residual norm).
double vim_score(const VimModel& model, const FeatureRecord& record);

struct MlpMember {
  TensorF w1, b1, w2, b2;  // [D,h], [h], [h,1], [1]
};

struct MlpEnsembleConfig {
  std::uint32_t members = 5;
  std::uint32_t hidden = 64;
  std::uint32_t epochs = 40;
  std::uint32_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0;
  std::uint64_t seed = 0;
};

struct MlpEnsemble {
  std::vector<MlpMember> members;
};

/// One member trained with BCE and Adam on the wk embeddings.
MlpMember dino_mlp_fit_member(std::span<const FeatureRecord> labeled,
                              const MlpEnsembleConfig& cfg, std::uint64_t seed);
MlpEnsemble dino_mlp_fit(std::span<const FeatureRecord> labeled, const MlpEnsembleConfig& cfg);
double mlp_member_probability(const MlpMember& m, const TensorF& wk);
/// -(mean member p_unsafe).
double dino_mlp_score(const MlpEnsemble& ens, const FeatureRecord& record);

enum class BaselineKind { kGram, kKnn, kVim, kDinoMlp, kDinoVim };

const char* baseline_name(BaselineKind kind);
BaselineKind parse_baseline(const std::string& name);

struct BaselineConfig {
  std::uint32_t knn_k = 5;
  std::uint32_t vim_q = 100;
  MlpEnsembleConfig mlp;
};

struct Baseline {
  BaselineKind kind = BaselineKind::kKnn;
  std::variant<GramStats, KnnIndex, VimModel, MlpEnsemble> model;
};

/// Filters to safe records for the unsupervised kinds; DINO-MLP uses all.
Baseline fit_baseline(BaselineKind kind, std::span<const FeatureRecord> records,
                      const BaselineConfig& cfg = {});
double baseline_score(const Baseline& b, const FeatureRecord& record);

/// Artifact IO (KGFPBSL1 container).
void save_baseline(const std::string& path, const Baseline& b);
Baseline load_baseline(const std::string& path);

}  // namespace kgfp
