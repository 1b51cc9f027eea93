// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgfp/feature_cache.hpp"

namespace kgfp {

/// Planted generative model standing in for frozen backbones.
///
/// A "world" (fixed by world_seed) holds per-level channel loadings, spatial
/// envelopes and a world-knowledge projection. Each record draws a latent
/// u ~ N(0, I). Safe records lift u into both the pyramid and the wk
/// embedding, so the two views agree. Unsafe records lift a partially
/// independent latent rho*u + sqrt(1-rho^2)*v into wk (rho = hardness), shift
/// wk along a fixed direction by 6*(1-hardness)^2, and zero a window of the
/// finest pyramid level (the missed object).
struct SynthConfig {
  PyramidSpec spec = PyramidSpec::desk_scale();
  std::uint32_t d_wk = kDeskWkDim;
  std::size_t n = 100;
  double unsafe_fraction = 0.3;
  double hardness = 0.5;
  std::uint64_t seed = 0;

  std::uint64_t world_seed = 0x5EEDF00DULL;
  std::string domain_tag = "id";
  /// 0 = in-distribution. Larger values rescale and offset features with a
  /// pattern derived from domain_tag.
  double domain_shift = 0.0;

  std::size_t latent_dim = 16;
  double pyramid_noise = 0.5;
  double wk_noise = 0.3;
  /// Weight of the quadratic (non-linearly decodable) part of each level.
  double quadratic = 0.5;

  void validate() const;
};

std::vector<FeatureRecord> generate_synthetic(const SynthConfig& cfg);

std::vector<FeatureRecord> generate_synthetic(const PyramidSpec& spec,
                                              std::uint32_t d_wk, std::size_t n,
                                              double unsafe_fraction,
                                              double hardness,
                                              std::uint64_t seed);

/// Number of unsafe records generate_synthetic plants: round(n * fraction).
std::size_t planted_unsafe_count(std::size_t n, double unsafe_fraction);

}  // namespace kgfp
