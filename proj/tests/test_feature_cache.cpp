// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "kgfp/binary_io.hpp"
#include "kgfp/feature_cache.hpp"
#include "kgfp/rng.hpp"
#include "kgfp/synthetic.hpp"

namespace kgfp {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("kgfp_cache_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<FeatureRecord> random_records(const PyramidSpec& spec, std::uint32_t d_wk,
                                          std::size_t n, Rng& rng) {
  std::vector<FeatureRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureRecord r;
    r.record_id = "rec-" + std::to_string(i) + (i % 2 ? "-\xc3\xa9" : "");
    for (const auto& level : spec.levels) {
      TensorF t(level.shape());
      for (float& v : t.values()) v = static_cast<float>(rng.normal() * 100.0);
      r.pyramid.push_back(std::move(t));
    }
    r.wk_embedding = TensorF({d_wk});
    for (float& v : r.wk_embedding.values()) v = static_cast<float>(rng.normal());
    r.gt_count = static_cast<std::uint32_t>(rng.range(0, 6));
    r.matched_count = static_cast<std::uint32_t>(rng.range(0, r.gt_count));
    r.pred_count = r.matched_count + static_cast<std::uint32_t>(rng.range(0, 3));
    r.label = r.matched_count < r.gt_count ? 1 : 0;
    r.domain_tag = i % 3 == 0 ? "weather" : "id";
    out.push_back(std::move(r));
  }
  return out;
}

TEST(PyramidSpec, PresetsValidate) {
  EXPECT_NO_THROW(PyramidSpec::paper_scale().validate());
  EXPECT_NO_THROW(PyramidSpec::desk_scale().validate());
  EXPECT_EQ(PyramidSpec::paper_scale()[0].channels, 256u);
  EXPECT_EQ(PyramidSpec::paper_scale()[2].height, 20u);
  EXPECT_EQ(PyramidSpec::desk_scale()[1].name, "P4");
}

TEST(PyramidSpec, RejectsNonDecreasingSizes) {
  EXPECT_THROW(PyramidSpec::from_extents({{4, 8, 8}, {4, 8, 8}}).validate(),
               std::invalid_argument);
  EXPECT_THROW(PyramidSpec::from_extents({{0, 8, 8}}).validate(), std::invalid_argument);
  EXPECT_THROW(PyramidSpec{}.validate(), std::invalid_argument);
}

TEST(CacheFile, RoundTripThreeRecords) {
  TempDir dir;
  Rng rng(1);
  const auto spec = PyramidSpec::desk_scale();
  const auto recs = random_records(spec, 32, 3, rng);
  write_cache(dir.file("a.kgfp"), spec, 32, recs);
  const auto back = read_cache(dir.file("a.kgfp"));
  EXPECT_EQ(back.spec, spec);
  EXPECT_EQ(back.d_wk, 32u);
  ASSERT_EQ(back.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.records[i], recs[i]);
    for (std::size_t l = 0; l < spec.size(); ++l) {
      EXPECT_EQ(0, std::memcmp(back.records[i].pyramid[l].data(), recs[i].pyramid[l].data(),
                               recs[i].pyramid[l].size() * sizeof(float)));
    }
  }
  // Re-serializing what was read gives the same bytes.
  write_cache(dir.file("b.kgfp"), back.spec, back.d_wk, back.records);
  EXPECT_EQ(slurp(dir.file("a.kgfp")), slurp(dir.file("b.kgfp")));
}

TEST(CacheFile, HeaderLayoutIsLittleEndian) {
  TempDir dir;
  const auto spec = PyramidSpec::from_extents({{2, 2, 2}});
  write_cache(dir.file("h.kgfp"), spec, 3, std::vector<FeatureRecord>{});
  const std::string b = slurp(dir.file("h.kgfp"));
  ASSERT_EQ(b.size(), 8u + 4 + 4 + 12 + 4 + 8 + 1);
  EXPECT_EQ(b.substr(0, 8), "KGFPCAC1");
  EXPECT_EQ(b[8], 1);   // version
  EXPECT_EQ(b[12], 1);  // level count
  EXPECT_EQ(b[16], 2);  // channels
  EXPECT_EQ(b[28], 3);  // d_wk
  EXPECT_EQ(b.back(), 0);
}

TEST(CacheFile, CorruptMagicIsBadMagic) {
  TempDir dir;
  Rng rng(2);
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("c.kgfp"), spec, 32, random_records(spec, 32, 2, rng));
  std::string b = slurp(dir.file("c.kgfp"));
  b[3] = 'X';
  spit(dir.file("c.kgfp"), b);
  try {
    read_cache(dir.file("c.kgfp"));
    FAIL() << "expected CacheError";
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kBadMagic);
  }
}

TEST(CacheFile, VersionMismatch) {
  TempDir dir;
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("v.kgfp"), spec, 32, std::vector<FeatureRecord>{});
  std::string b = slurp(dir.file("v.kgfp"));
  b[8] = 2;
  spit(dir.file("v.kgfp"), b);
  try {
    read_cache(dir.file("v.kgfp"));
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kVersionMismatch);
  }
}

TEST(CacheFile, DeclaredFiveButFourPresentIsTruncation) {
  TempDir dir;
  Rng rng(3);
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("t.kgfp"), spec, 32, random_records(spec, 32, 4, rng));
  std::string b = slurp(dir.file("t.kgfp"));
  // Record count lives after magic, version, level count, 3 levels, d_wk.
  const std::size_t count_at = 8 + 4 + 4 + 3 * 12 + 4;
  ASSERT_EQ(b[count_at], 4);
  b[count_at] = 5;
  spit(dir.file("t.kgfp"), b);
  try {
    read_cache(dir.file("t.kgfp"));
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kTruncated);
  }
}

TEST(CacheFile, ChoppedTailIsTruncation) {
  TempDir dir;
  Rng rng(4);
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("t.kgfp"), spec, 32, random_records(spec, 32, 2, rng));
  std::string b = slurp(dir.file("t.kgfp"));
  b.resize(b.size() - 7);
  spit(dir.file("t.kgfp"), b);
  EXPECT_THROW(read_cache(dir.file("t.kgfp")), CacheError);
}

TEST(CacheFile, TrailingBytesRejected) {
  TempDir dir;
  Rng rng(5);
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("x.kgfp"), spec, 32, random_records(spec, 32, 2, rng));
  spit(dir.file("x.kgfp"), slurp(dir.file("x.kgfp")) + "junk");
  try {
    read_cache(dir.file("x.kgfp"));
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kTrailingData);
  }
}

TEST(CacheFile, WriteRejectsShapeMismatch) {
  TempDir dir;
  Rng rng(6);
  const auto spec = PyramidSpec::desk_scale();
  auto recs = random_records(spec, 32, 1, rng);
  recs[0].pyramid[1] = TensorF({32, 4, 4});
  try {
    write_cache(dir.file("s.kgfp"), spec, 32, recs);
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kShapeMismatch);
  }
}

TEST(CacheFile, LabelInvariantCheckedOnRead) {
  TempDir dir;
  const auto spec = PyramidSpec::from_extents({{1, 2, 2}});
  FeatureRecord r;
  r.record_id = "x";
  r.pyramid.push_back(TensorF({1, 2, 2}));
  r.wk_embedding = TensorF({2});
  r.gt_count = 2;
  r.matched_count = 1;
  r.pred_count = 1;
  r.label = 1;
  write_cache(dir.file("l.kgfp"), spec, 2, std::vector<FeatureRecord>{r});
  std::string b = slurp(dir.file("l.kgfp"));
  // Flip the label byte to 0: id (2 + 1) and 4 + 2 floats follow the header.
  const std::size_t header = 8 + 4 + 4 + 12 + 4 + 8 + 1;
  const std::size_t label_at = header + 3 + 6 * 4;
  ASSERT_EQ(b[label_at], 1);
  b[label_at] = 0;
  spit(dir.file("l.kgfp"), b);
  try {
    read_cache(dir.file("l.kgfp"));
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kInvariant);
  }
}

TEST(CacheFile, InvariantRejectsSafeWithMissedObject) {
  FeatureRecord r;
  r.gt_count = 3;
  r.matched_count = 2;
  r.pred_count = 2;
  r.label = 0;
  EXPECT_THROW(check_record_invariants(r), CacheError);
  r.label = 1;
  EXPECT_NO_THROW(check_record_invariants(r));
  r.gt_count = 0;
  r.matched_count = 0;
  r.label = 0;
  EXPECT_NO_THROW(check_record_invariants(r));
}

TEST(CacheFile, PropertyRoundTripRandomSpecs) {
  TempDir dir;
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const auto n_levels = static_cast<std::size_t>(rng.range(1, 4));
    std::vector<std::array<std::uint32_t, 3>> ext;
    std::uint32_t h = static_cast<std::uint32_t>(rng.range(n_levels, 12));
    std::uint32_t w = static_cast<std::uint32_t>(rng.range(n_levels, 12));
    for (std::size_t l = 0; l < n_levels; ++l) {
      ext.push_back({static_cast<std::uint32_t>(rng.range(1, 5)), h, w});
      h -= static_cast<std::uint32_t>(rng.range(1, std::max<std::int64_t>(1, h - (n_levels - l - 1) - 1)));
      w -= static_cast<std::uint32_t>(rng.range(1, std::max<std::int64_t>(1, w - (n_levels - l - 1) - 1)));
    }
    const auto spec = PyramidSpec::from_extents(ext);
    ASSERT_NO_THROW(spec.validate());
    const auto d_wk = static_cast<std::uint32_t>(rng.range(1, 9));
    const auto recs = random_records(spec, d_wk, static_cast<std::size_t>(rng.range(0, 6)), rng);
    const std::string p = dir.file("p" + std::to_string(trial));
    write_cache(p, spec, d_wk, recs);
    const auto back = read_cache(p);
    EXPECT_EQ(back.spec, spec);
    EXPECT_EQ(back.records, recs);
  }
}

TEST(CacheReader, StreamsOneRecordAtATime) {
  TempDir dir;
  Rng rng(8);
  const auto spec = PyramidSpec::desk_scale();
  const auto recs = random_records(spec, 32, 5, rng);
  write_cache(dir.file("s.kgfp"), spec, 32, recs);
  CacheReader reader(dir.file("s.kgfp"));
  EXPECT_EQ(reader.header().record_count, 5u);
  std::size_t i = 0;
  while (auto r = reader.next()) EXPECT_EQ(*r, recs[i++]);
  EXPECT_EQ(i, 5u);
  EXPECT_FALSE(reader.next().has_value());
}

TEST(CacheReader, MissingFileIsIoError) {
  try {
    CacheReader reader("/nonexistent/kgfp.cache");
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::kIo);
  }
}

// --- synthetic generator --------------------------------------------------

TEST(Synthetic, ExactUnsafeCount) {
  const auto recs = generate_synthetic(PyramidSpec::desk_scale(), 32, 100, 0.3, 0.5, 11);
  std::size_t unsafe = 0;
  for (const auto& r : recs) unsafe += r.label;
  EXPECT_EQ(unsafe, 30u);
  EXPECT_EQ(planted_unsafe_count(7, 0.5), 4u);
}

TEST(Synthetic, RecordsSatisfyInvariantsAndShapes) {
  SynthConfig cfg;
  cfg.n = 60;
  for (const auto& r : generate_synthetic(cfg)) {
    EXPECT_NO_THROW(check_record_invariants(r));
    EXPECT_NO_THROW(check_record_shapes(r, cfg.spec, cfg.d_wk));
    EXPECT_GE(r.gt_count, 1u);
    EXPECT_TRUE(r.wk_embedding.all_finite());
  }
}

TEST(Synthetic, SameSeedGivesIdenticalCacheBytes) {
  TempDir dir;
  const auto spec = PyramidSpec::desk_scale();
  write_cache(dir.file("a"), spec, 32, generate_synthetic(spec, 32, 40, 0.3, 0.5, 99));
  write_cache(dir.file("b"), spec, 32, generate_synthetic(spec, 32, 40, 0.3, 0.5, 99));
  write_cache(dir.file("c"), spec, 32, generate_synthetic(spec, 32, 40, 0.3, 0.5, 100));
  EXPECT_EQ(slurp(dir.file("a")), slurp(dir.file("b")));
  EXPECT_NE(slurp(dir.file("a")), slurp(dir.file("c")));
}

TEST(Synthetic, UnsafeRecordsHaveZeroWindowInFinestLevel) {
  SynthConfig cfg;
  cfg.n = 20;
  for (const auto& r : generate_synthetic(cfg)) {
    std::size_t zeros = 0;
    for (float v : r.pyramid[0].values()) zeros += (v == 0.0f);
    if (r.label) {
      EXPECT_GT(zeros, 0u);
    } else {
      EXPECT_EQ(zeros, 0u);
    }
  }
}

TEST(Synthetic, DomainShiftMovesFeatures) {
  SynthConfig id_cfg;
  id_cfg.n = 200;
  SynthConfig ood_cfg = id_cfg;
  ood_cfg.domain_tag = "weather";
  ood_cfg.domain_shift = 1.0;
  double id_mean = 0, ood_mean = 0;
  for (const auto& r : generate_synthetic(id_cfg)) id_mean += std::abs(r.pyramid[2][0]);
  for (const auto& r : generate_synthetic(ood_cfg)) {
    ood_mean += std::abs(r.pyramid[2][0]);
    EXPECT_EQ(r.domain_tag, "weather");
  }
  EXPECT_NE(id_mean, ood_mean);
}

TEST(Synthetic, RejectsBadConfig) {
  const auto spec = PyramidSpec::desk_scale();
  EXPECT_THROW(generate_synthetic(spec, 32, 0, 0.3, 0.5, 1), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(spec, 32, 10, 0.0, 0.5, 1), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(spec, 32, 10, 1.0, 0.5, 1), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(spec, 32, 10, 0.3, 1.5, 1), std::invalid_argument);
}

// Least-squares probe w = argmin ||[X 1] w - y||, scored by pair counting.
double linear_probe_auroc(const std::vector<FeatureRecord>& fit,
                          const std::vector<FeatureRecord>& test) {
  const std::size_t d = fit.front().wk_embedding.size();
  Eigen::MatrixXd x(fit.size(), d + 1);
  Eigen::VectorXd y(fit.size());
  for (std::size_t i = 0; i < fit.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = fit[i].wk_embedding[j];
    x(i, d) = 1.0;
    y(i) = fit[i].label;
  }
  const Eigen::VectorXd w = x.colPivHouseholderQr().solve(y);
  std::vector<double> pos, neg;
  for (const auto& r : test) {
    double s = w(d);
    for (std::size_t j = 0; j < d; ++j) s += w(j) * r.wk_embedding[j];
    (r.label ? pos : neg).push_back(s);
  }
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * neg.size());
}

TEST(Synthetic, HardnessZeroIsLinearlySeparableOnWk) {
  const auto spec = PyramidSpec::desk_scale();
  const auto fit = generate_synthetic(spec, 32, 400, 0.3, 0.0, 21);
  const auto test = generate_synthetic(spec, 32, 400, 0.3, 0.0, 22);
  EXPECT_GT(linear_probe_auroc(fit, test), 0.99);
}

TEST(Synthetic, HardnessOneOverlapsOnWk) {
  const auto spec = PyramidSpec::desk_scale();
  const auto fit = generate_synthetic(spec, 32, 400, 0.3, 1.0, 21);
  const auto test = generate_synthetic(spec, 32, 400, 0.3, 1.0, 22);
  EXPECT_LT(linear_probe_auroc(fit, test), 0.75);
}

}  // namespace
}  // namespace kgfp
