// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "kgfp/rng.hpp"

namespace kgfp {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct LevelWorld {
  std::vector<double> loadings;   // [C, K] linear part
  std::vector<double> quad;       // [C, K] quadratic part
  std::vector<double> envelope;   // [H, W]
  std::vector<double> shift_gain; // [C]
  std::vector<double> shift_bias; // [C]
};

struct World {
  std::vector<LevelWorld> levels;
  std::vector<double> wk_proj;  // [D, K]
  std::vector<double> wk_dir;   // [D], unit
  std::vector<double> wk_shift; // [D]
};

World make_world(const SynthConfig& cfg) {
  Rng root(cfg.world_seed);
  Rng rng = root.split(1);
  Rng domain = root.split(2).split(fnv1a(cfg.domain_tag));
  const std::size_t k = cfg.latent_dim;
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  World w;
  for (const auto& level : cfg.spec.levels) {
    LevelWorld lw;
    lw.loadings.resize(level.channels * k);
    lw.quad.resize(level.channels * k);
    for (double& v : lw.loadings) v = rng.normal() * inv_sqrt_k;
    for (double& v : lw.quad) v = rng.normal() * inv_sqrt_k;
    lw.envelope.resize(static_cast<std::size_t>(level.height) * level.width);
    for (double& v : lw.envelope) v = rng.uniform(0.5, 1.5);
    lw.shift_gain.resize(level.channels);
    lw.shift_bias.resize(level.channels);
    for (double& v : lw.shift_gain) v = domain.uniform(-1.0, 1.0);
    for (double& v : lw.shift_bias) v = domain.normal();
    w.levels.push_back(std::move(lw));
  }
  w.wk_proj.resize(cfg.d_wk * k);
  for (double& v : w.wk_proj) v = rng.normal() * inv_sqrt_k;
  w.wk_dir.resize(cfg.d_wk);
  double norm = 0;
  for (double& v : w.wk_dir) {
    v = rng.normal();
    norm += v * v;
  }
  for (double& v : w.wk_dir) v /= std::sqrt(norm);
  w.wk_shift.resize(cfg.d_wk);
  for (double& v : w.wk_shift) v = domain.normal();
  return w;
}

}  // namespace

void SynthConfig::validate() const {
  spec.validate();
  if (d_wk == 0) throw std::invalid_argument("d_wk must be positive");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (!(unsafe_fraction > 0.0 && unsafe_fraction < 1.0)) {
    throw std::invalid_argument("unsafe_fraction must lie in (0, 1)");
  }
  if (!(hardness >= 0.0 && hardness <= 1.0)) {
    throw std::invalid_argument("hardness must lie in [0, 1]");
  }
  if (latent_dim == 0) throw std::invalid_argument("latent_dim must be positive");
  if (domain_shift < 0.0) throw std::invalid_argument("domain_shift must be >= 0");
}

std::size_t planted_unsafe_count(std::size_t n, double unsafe_fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * unsafe_fraction));
}

std::vector<FeatureRecord> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg);
  const std::size_t k = cfg.latent_dim;
  const double h = cfg.hardness;
  const double rho = h;
  const double shift = 6.0 * (1.0 - h) * (1.0 - h);
  const double s = cfg.domain_shift;

  Rng rng = Rng(cfg.seed).split(fnv1a(cfg.domain_tag));
  Rng label_rng = rng.split(1);
  Rng sample_rng = rng.split(2);

  std::vector<std::uint8_t> labels(cfg.n, 0);
  const std::size_t n_unsafe = std::min(planted_unsafe_count(cfg.n, cfg.unsafe_fraction), cfg.n);
  std::fill_n(labels.begin(), n_unsafe, std::uint8_t{1});
  label_rng.shuffle(std::span<std::uint8_t>(labels));

  const auto& finest = cfg.spec.levels.front();
  const auto window_side = [&](std::uint32_t extent) {
    const double side = std::round(extent * (0.5 - 0.25 * h));
    return static_cast<std::uint32_t>(std::clamp(side, 1.0, static_cast<double>(extent)));
  };
  const std::uint32_t win_h = window_side(finest.height);
  const std::uint32_t win_w = window_side(finest.width);

  std::vector<FeatureRecord> out;
  out.reserve(cfg.n);
  std::vector<double> u(k), z(k);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Rng r = sample_rng.split(i);
    FeatureRecord rec;
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%llu-%06zu", cfg.domain_tag.c_str(),
                  static_cast<unsigned long long>(cfg.seed), i);
    rec.record_id = id;
    rec.domain_tag = cfg.domain_tag;
    rec.label = labels[i];
    const bool unsafe = rec.label == 1;

    for (double& v : u) v = r.normal();
    if (unsafe) {
      const double mix = std::sqrt(1.0 - rho * rho);
      for (std::size_t j = 0; j < k; ++j) z[j] = rho * u[j] + mix * r.normal();
    } else {
      z = u;
    }

    for (std::size_t l = 0; l < cfg.spec.size(); ++l) {
      const auto& level = cfg.spec[l];
      const auto& lw = world.levels[l];
      const std::size_t area = static_cast<std::size_t>(level.height) * level.width;
      TensorF t(level.shape());
      for (std::size_t c = 0; c < level.channels; ++c) {
        double lin = 0, quad = 0;
        for (std::size_t j = 0; j < k; ++j) {
          lin += lw.loadings[c * k + j] * u[j];
          quad += lw.quad[c * k + j] * u[j];
        }
        const double amp = lin + cfg.quadratic * (quad * quad - 1.0);
        const double gain = 1.0 + s * lw.shift_gain[c];
        const double noise = cfg.pyramid_noise * (1.0 + s);
        for (std::size_t p = 0; p < area; ++p) {
          const double v = amp * lw.envelope[p] + noise * r.normal();
          t[c * area + p] = static_cast<float>(gain * v + s * lw.shift_bias[c]);
        }
      }
      rec.pyramid.push_back(std::move(t));
    }
    if (unsafe) {
      const auto y0 = static_cast<std::uint32_t>(r.below(finest.height - win_h + 1));
      const auto x0 = static_cast<std::uint32_t>(r.below(finest.width - win_w + 1));
      TensorF& t = rec.pyramid.front();
      for (std::uint32_t c = 0; c < finest.channels; ++c)
        for (std::uint32_t y = y0; y < y0 + win_h; ++y)
          for (std::uint32_t x = x0; x < x0 + win_w; ++x) t.at(c, y, x) = 0.0f;
    }

    rec.wk_embedding = TensorF({cfg.d_wk});
    for (std::size_t d = 0; d < cfg.d_wk; ++d) {
      double v = 0;
      for (std::size_t j = 0; j < k; ++j) v += world.wk_proj[d * k + j] * z[j];
      v += cfg.wk_noise * (1.0 + s) * r.normal();
      if (unsafe) v += shift * world.wk_dir[d];
      v += 0.5 * s * world.wk_shift[d];
      rec.wk_embedding[d] = static_cast<float>(v);
    }

    const auto gt = static_cast<std::uint32_t>(r.range(1, 5));
    rec.gt_count = gt;
    rec.matched_count = unsafe ? static_cast<std::uint32_t>(r.range(0, gt - 1)) : gt;
    rec.pred_count = rec.matched_count + static_cast<std::uint32_t>(r.range(0, 2));
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<FeatureRecord> generate_synthetic(const PyramidSpec& spec,
                                              std::uint32_t d_wk, std::size_t n,
                                              double unsafe_fraction,
                                              double hardness,
                                              std::uint64_t seed) {
  SynthConfig cfg;
  cfg.spec = spec;
  cfg.d_wk = d_wk;
  cfg.n = n;
  cfg.unsafe_fraction = unsafe_fraction;
  cfg.hardness = hardness;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

}  // namespace kgfp
