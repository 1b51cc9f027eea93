// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "kgfp/container.hpp"
#include "kgfp/gate_metrics.hpp"
#include "kgfp/ood_baselines.hpp"
#include "kgfp/rng.hpp"
#include "kgfp/synthetic.hpp"

namespace kgfp {
namespace {

PyramidSpec small_spec() { return PyramidSpec::from_extents({{3, 4, 4}, {5, 2, 2}}); }

FeatureRecord random_record(const PyramidSpec& spec, std::size_t d_wk, Rng& rng, int label,
                            double scale = 1.0) {
  FeatureRecord r;
  r.record_id = "r" + std::to_string(rng.below(1000000));
  for (const auto& l : spec.levels) {
    TensorF t(l.shape());
    for (float& v : t.values()) v = static_cast<float>(scale * rng.normal());
    r.pyramid.push_back(std::move(t));
  }
  r.wk_embedding = TensorF({d_wk});
  for (float& v : r.wk_embedding.values()) v = static_cast<float>(rng.normal());
  r.gt_count = 2;
  r.matched_count = label ? 1 : 2;
  r.pred_count = 2;
  r.label = static_cast<std::uint8_t>(label);
  return r;
}

std::vector<FeatureRecord> random_safe(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_record(small_spec(), 6, rng, 0));
  return out;
}

// --- GRAM -----------------------------------------------------------------

// Brute force: every Gram entry from explicit loops.
double brute_gram(const TensorF& level, int p, std::size_t i, std::size_t j) {
  const std::size_t hw = level.dim(1) * level.dim(2);
  double acc = 0;
  for (std::size_t k = 0; k < hw; ++k) {
    double a = level[i * hw + k], b = level[j * hw + k];
    a = (a < 0 ? -1 : 1) * std::pow(std::abs(a), p);
    b = (b < 0 ? -1 : 1) * std::pow(std::abs(b), p);
    acc += a * b;
  }
  return acc / static_cast<double>(hw);
}

TEST(Gram, MatchesBruteForceRecomputation) {
  const auto fit = random_safe(10, 1);
  Rng rng(2);
  const FeatureRecord probe = random_record(small_spec(), 6, rng, 0, 1.7);
  const GramStats s = gram_fit(fit);

  double expected = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t c = small_spec().levels[l].channels;
    for (int p = 1; p <= 5; ++p) {
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i; j < c; ++j) {
          double lo = 1e300, hi = -1e300;
          for (const auto& r : fit) {
            const double g = brute_gram(r.pyramid[l], p, i, j);
            lo = std::min(lo, g);
            hi = std::max(hi, g);
          }
          // Bounds are stored in single precision.
          lo = static_cast<float>(lo);
          hi = static_cast<float>(hi);
          const double g = brute_gram(probe.pyramid[l], p, i, j);
          if (g < lo) expected += (lo - g) / (std::abs(lo) + kGramEps);
          if (g > hi) expected += (g - hi) / (std::abs(hi) + kGramEps);
        }
      }
    }
  }
  EXPECT_GT(expected, 0.0);
  EXPECT_NEAR(gram_score(s, probe), -expected, 1e-9 * expected);
}

TEST(Gram, SymmetricFeaturesAndOrderedBounds) {
  const auto fit = random_safe(8, 3);
  const GramStats s = gram_fit(fit);
  for (std::size_t l = 0; l < s.min.size(); ++l) {
    ASSERT_EQ(s.min[l].size(), 5u);
    for (int p = 0; p < 5; ++p) {
      for (std::size_t i = 0; i < s.min[l][p].size(); ++i) {
        EXPECT_LE(s.min[l][p][i], s.max[l][p][i]);
      }
    }
  }
  // The stored upper triangle matches the lower one of the full matrix.
  const TensorF& lvl = fit[0].pyramid[0];
  EXPECT_NEAR(brute_gram(lvl, 3, 0, 2), brute_gram(lvl, 3, 2, 0), 1e-12);
}

TEST(Gram, TrainingRecordScoresZero) {
  const auto fit = random_safe(6, 4);
  const GramStats s = gram_fit(fit);
  for (const auto& r : fit) EXPECT_NEAR(gram_score(s, r), 0.0, 1e-3);
}

TEST(Gram, DoubledConstantMapDeviates) {
  std::vector<FeatureRecord> fit;
  Rng rng(5);
  for (int i = 0; i < 3; ++i) {
    FeatureRecord r = random_record(small_spec(), 6, rng, 0);
    for (auto& l : r.pyramid) std::fill(l.values().begin(), l.values().end(), 0.5f);
    fit.push_back(r);
  }
  const GramStats s = gram_fit(fit);
  FeatureRecord probe = fit[0];
  for (auto& l : probe.pyramid) std::fill(l.values().begin(), l.values().end(), 1.0f);
  EXPECT_EQ(gram_score(s, fit[1]), 0.0);
  EXPECT_LT(gram_score(s, probe), 0.0);
}

// --- k-NN -----------------------------------------------------------------

TEST(Knn, KthDistanceMatchesPairwiseBruteForce) {
  const auto fit = random_safe(50, 6);
  const KnnIndex idx = knn_fit(fit, 5);
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const FeatureRecord probe = random_record(small_spec(), 6, rng, 0);
    double total = 0;
    for (std::size_t l = 0; l < 2; ++l) {
      // Oracle: pool, normalize, measure all 50 distances and sort.
      const TensorF& lv = probe.pyramid[l];
      const std::size_t c = lv.dim(0), hw = lv.dim(1) * lv.dim(2);
      auto unit = [&](const TensorF& m) {
        std::vector<double> v(c, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
          for (std::size_t k = 0; k < hw; ++k) v[i] += m[i * hw + k] / hw;
        }
        double n = 0;
        for (double x : v) n += x * x;
        for (double& x : v) x /= std::sqrt(n);
        return v;
      };
      const auto u = unit(lv);
      std::vector<double> d;
      for (const auto& r : fit) {
        const auto w = unit(r.pyramid[l]);
        double acc = 0;
        for (std::size_t i = 0; i < c; ++i) acc += (u[i] - w[i]) * (u[i] - w[i]);
        d.push_back(std::sqrt(acc));
      }
      std::sort(d.begin(), d.end());
      total += d[4];
    }
    EXPECT_NEAR(knn_score(idx, probe), -total / 2, 1e-6);
  }
}

TEST(Knn, TrainingRecordWithKOneIsZeroAndDistancesBounded) {
  const auto fit = random_safe(12, 8);
  const KnnIndex idx = knn_fit(fit, 1);
  for (const auto& r : fit) EXPECT_NEAR(knn_score(idx, r), 0.0, 1e-6);
  for (const auto& b : idx.bank) {
    for (std::size_t r = 0; r < b.dim(0); ++r) {
      double n = 0;
      for (std::size_t i = 0; i < b.dim(1); ++i) n += b[r * b.dim(1) + i] * b[r * b.dim(1) + i];
      EXPECT_NEAR(n, 1.0, 1e-6);
    }
  }
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const double s = knn_score(idx, random_record(small_spec(), 6, rng, 0, 10.0));
    EXPECT_LE(-s, 2.0 + 1e-9);
    EXPECT_GE(-s, 0.0);
  }
}

TEST(Knn, FitSmallerThanKThrows) {
  EXPECT_THROW(knn_fit(random_safe(4, 1), 5), std::invalid_argument);
}

// --- ViM ------------------------------------------------------------------

TEST(Vim, ResidualMatchesDenseSvdOracle) {
  Rng rng(10);
  const std::size_t dim = 20, n = 60, q = 7;
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal() * (1.0 + static_cast<double>(i));
    rows.push_back(v);
  }
  const VimSpace s = vim_fit_space(rows, q);
  ASSERT_EQ(s.principal.dim(1), q);

  // Oracle: right singular vectors of the centered data matrix.
  Eigen::MatrixXd x(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < dim; ++i) x(r, i) = rows[r][i];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::MatrixXd p = svd.matrixV().leftCols(q);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> probe(dim);
    Eigen::VectorXd c(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      probe[i] = rng.normal() * 3;
      c(i) = probe[i] - mu(i);
    }
    const double oracle = (c - p * (p.transpose() * c)).norm();
    EXPECT_NEAR(vim_residual(s, probe), oracle, 1e-4 * std::max(1.0, oracle));
  }
}

TEST(Vim, ProjectorIsOrthonormalAndIdempotent) {
  Rng rng(11);
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 40; ++r) {
    std::vector<double> v(12);
    for (double& x : v) x = rng.normal();
    rows.push_back(v);
  }
  const VimSpace s = vim_fit_space(rows, 5);
  const std::size_t d = 12, q = 5;
  Eigen::MatrixXd p(d, q);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < q; ++j) p(i, j) = s.principal[i * q + j];
  }
  const Eigen::MatrixXd ptp = p.transpose() * p;
  EXPECT_LT((ptp - Eigen::MatrixXd::Identity(q, q)).cwiseAbs().maxCoeff(), 1e-6);
  const Eigen::MatrixXd proj = p * p.transpose();
  EXPECT_LT((proj * proj - proj).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Vim, MeanAndSubspacePointsHaveZeroResidual) {
  Rng rng(12);
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 30; ++r) {
    std::vector<double> v(8);
    for (double& x : v) x = rng.normal();
    rows.push_back(v);
  }
  const VimSpace s = vim_fit_space(rows, 3);
  std::vector<double> mean(8);
  for (std::size_t i = 0; i < 8; ++i) mean[i] = s.mean[i];
  EXPECT_NEAR(vim_residual(s, mean), 0.0, 1e-6);
  std::vector<double> inside = mean;
  for (std::size_t i = 0; i < 8; ++i) inside[i] += 2.5 * s.principal[i * 3 + 1];
  EXPECT_NEAR(vim_residual(s, inside), 0.0, 1e-6);
}

TEST(Vim, RankDeficientFitReducesComponents) {
  // Rows on a 2-dimensional plane in 6-d space.
  Rng rng(13);
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 25; ++r) {
    const double a = rng.normal(), b = rng.normal();
    rows.push_back({a, b, a + b, a - b, 0, 2 * a});
  }
  const VimSpace s = vim_fit_space(rows, 100);
  EXPECT_EQ(s.principal.dim(1), 2u);
  EXPECT_NEAR(vim_residual(s, std::vector<double>{1, 1, 2, 0, 0, 2}), 0.0, 1e-5);
}

TEST(Vim, DefaultComponentsCappedBelowDimension) {
  const auto fit = random_safe(40, 14);
  const VimModel m = vim_fit(fit);
  ASSERT_EQ(m.spaces.size(), 2u);
  EXPECT_EQ(m.spaces[0].principal.dim(1), 2u);  // 3 channels
  EXPECT_EQ(m.spaces[1].principal.dim(1), 4u);  // 5 channels
}

TEST(DinoVim, WkVectorsInFitSpanHaveZeroResidual) {
  Rng rng(15);
  std::vector<FeatureRecord> fit;
  for (int i = 0; i < 20; ++i) {
    FeatureRecord r = random_record(small_spec(), 6, rng, 0);
    const double a = rng.normal(), b = rng.normal();
    r.wk_embedding = TensorF::from({6}, {float(a), float(b), float(a + b), 0, float(b), 1});
    fit.push_back(r);
  }
  const VimModel m = dino_vim_fit(fit);
  EXPECT_TRUE(m.on_wk);
  for (const auto& r : fit) EXPECT_NEAR(vim_score(m, r), 0.0, 1e-5);
  FeatureRecord off = fit[0];
  off.wk_embedding[3] = 5;
  EXPECT_LT(vim_score(m, off), -1.0);
}

// --- DINO-MLP -------------------------------------------------------------

TEST(DinoMlp, SeparableDataGivesHighAuroc) {
  const auto train = generate_synthetic(PyramidSpec::desk_scale(), kDeskWkDim, 400, 0.3, 0.0, 1);
  const auto test = generate_synthetic(PyramidSpec::desk_scale(), kDeskWkDim, 300, 0.3, 0.0, 2);
  MlpEnsembleConfig cfg;
  cfg.members = 3;
  cfg.epochs = 20;
  const MlpEnsemble e = dino_mlp_fit(train, cfg);
  std::vector<ScoredRecord> scored;
  for (const auto& r : test) {
    const double s = dino_mlp_score(e, r);
    EXPECT_LE(s, 0.0);
    EXPECT_GE(s, -1.0);
    scored.push_back(make_scored(r, s));
  }
  EXPECT_GT(auroc(scored), 0.95);
}

TEST(DinoMlp, IdenticalMembersEqualOneMember) {
  const auto train = generate_synthetic(PyramidSpec::desk_scale(), kDeskWkDim, 60, 0.3, 0.0, 3);
  MlpEnsembleConfig cfg;
  cfg.epochs = 3;
  const MlpMember m = dino_mlp_fit_member(train, cfg, 77);
  const MlpMember again = dino_mlp_fit_member(train, cfg, 77);
  EXPECT_EQ(m.w1, again.w1);
  MlpEnsemble one{{m}}, three{{m, m, m}};
  for (const auto& r : train) EXPECT_DOUBLE_EQ(dino_mlp_score(one, r), dino_mlp_score(three, r));
}

TEST(DinoMlp, SingleClassThrows) {
  auto recs = random_safe(10, 16);
  EXPECT_THROW(dino_mlp_fit(recs, {}), std::invalid_argument);
}

// --- shared properties ----------------------------------------------------

TEST(Baselines, UnsupervisedFitsRejectUnsafeRecords) {
  auto recs = random_safe(12, 17);
  Rng rng(18);
  recs.push_back(random_record(small_spec(), 6, rng, 1));
  EXPECT_THROW(gram_fit(recs), std::invalid_argument);
  EXPECT_THROW(knn_fit(recs), std::invalid_argument);
  EXPECT_THROW(vim_fit(recs), std::invalid_argument);
  EXPECT_THROW(dino_vim_fit(recs), std::invalid_argument);
  EXPECT_THROW(gram_fit(std::span<const FeatureRecord>()), std::invalid_argument);
  // The dispatcher filters instead, and the unsafe record cannot change the fit.
  const Baseline with = fit_baseline(BaselineKind::kKnn, recs);
  recs.pop_back();
  const Baseline without = fit_baseline(BaselineKind::kKnn, recs);
  EXPECT_EQ(std::get<KnnIndex>(with.model).bank, std::get<KnnIndex>(without.model).bank);
}

// A planted anomaly far from the fit data must look less safe to every scorer.
TEST(Baselines, AnomalyGetsLowerScore) {
  Rng rng(19);
  std::vector<FeatureRecord> recs;
  for (int i = 0; i < 40; ++i) {
    FeatureRecord r = random_record(small_spec(), 6, rng, i % 4 == 0 ? 1 : 0, 0.3);
    for (auto& l : r.pyramid) {
      for (std::size_t k = 0; k < l.size(); ++k) l[k] += 1.0f;  // shared offset direction
    }
    if (r.label) r.wk_embedding[0] += 4.0f;
    recs.push_back(r);
  }
  FeatureRecord normal = recs[1];
  FeatureRecord anomaly = random_record(small_spec(), 6, rng, 1, 3.0);
  anomaly.wk_embedding = normal.wk_embedding;
  anomaly.wk_embedding[0] += 4.0f;
  anomaly.wk_embedding[5] += 6.0f;

  BaselineConfig cfg;
  cfg.vim_q = 2;
  cfg.mlp.members = 2;
  cfg.mlp.epochs = 30;
  for (BaselineKind k : {BaselineKind::kGram, BaselineKind::kKnn, BaselineKind::kVim,
                         BaselineKind::kDinoMlp, BaselineKind::kDinoVim}) {
    const Baseline b = fit_baseline(k, recs, cfg);
    EXPECT_LT(baseline_score(b, anomaly), baseline_score(b, normal)) << baseline_name(k);
  }
}

TEST(Baselines, ArtifactRoundTripIsExact) {
  const auto recs = generate_synthetic(PyramidSpec::desk_scale(), kDeskWkDim, 80, 0.3, 0.5, 4);
  const auto dir = std::filesystem::temp_directory_path() / "kgfp_baseline_io";
  std::filesystem::create_directories(dir);
  BaselineConfig cfg;
  cfg.mlp.members = 2;
  cfg.mlp.epochs = 2;
  for (BaselineKind k : {BaselineKind::kGram, BaselineKind::kKnn, BaselineKind::kVim,
                         BaselineKind::kDinoMlp, BaselineKind::kDinoVim}) {
    const Baseline b = fit_baseline(k, recs, cfg);
    const std::string path = (dir / baseline_name(k)).string();
    save_baseline(path, b);
    const Baseline back = load_baseline(path);
    EXPECT_EQ(back.kind, k);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(baseline_score(back, recs[i]), baseline_score(b, recs[i])) << baseline_name(k);
    }
  }
  EXPECT_THROW(load_baseline((dir / "missing").string()), std::exception);
  // A model checkpoint is not a baseline artifact.
  Container c;
  c.metadata = "{}";
  c.tensors.push_back({"x", TensorF({1})});
  write_container((dir / "model").string(), kModelMagic, c);
  EXPECT_THROW(load_baseline((dir / "model").string()), ContainerError);
  write_container((dir / "bad").string(), kBaselineMagic, c);
  EXPECT_THROW(load_baseline((dir / "bad").string()), ContainerError);
  std::filesystem::remove_all(dir);
  EXPECT_EQ(parse_baseline("dino-vim"), BaselineKind::kDinoVim);
  EXPECT_THROW(parse_baseline("mahalanobis"), std::invalid_argument);
}

}  // namespace
}  // namespace kgfp
