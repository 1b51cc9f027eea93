// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/feature_cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kgfp/binary_io.hpp"

namespace kgfp {

namespace {
constexpr std::uint8_t kDtypeF32 = 0;
}

void PyramidSpec::validate() const {
  if (levels.empty()) throw std::invalid_argument("pyramid has no levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& l = levels[i];
    if (l.channels == 0 || l.height == 0 || l.width == 0) {
      throw std::invalid_argument("pyramid level " + std::to_string(i) +
                                  " has a zero extent");
    }
    if (i > 0) {
      const auto& prev = levels[i - 1];
      if (!(l.height < prev.height && l.width < prev.width)) {
        throw std::invalid_argument(
            "pyramid spatial sizes must strictly decrease (level " +
            std::to_string(i) + ")");
      }
    }
  }
}

PyramidSpec PyramidSpec::from_extents(
    const std::vector<std::array<std::uint32_t, 3>>& extents) {
  PyramidSpec spec;
  for (std::size_t i = 0; i < extents.size(); ++i) {
    spec.levels.push_back({extents[i][0], extents[i][1], extents[i][2],
                           "P" + std::to_string(3 + i)});
  }
  return spec;
}

PyramidSpec PyramidSpec::paper_scale() {
  return from_extents({{256, 80, 80}, {512, 40, 40}, {512, 20, 20}});
}

PyramidSpec PyramidSpec::desk_scale() {
  return from_extents({{16, 16, 16}, {32, 8, 8}, {32, 4, 4}});
}

CacheError::CacheError(Kind kind, const std::string& message)
    : std::runtime_error(std::string(kind_name(kind)) + ": " + message),
      kind_(kind) {}

const char* CacheError::kind_name(Kind kind) {
  switch (kind) {
    case Kind::kIo: return "io error";
    case Kind::kBadMagic: return "bad magic";
    case Kind::kVersionMismatch: return "version mismatch";
    case Kind::kTruncated: return "truncated file";
    case Kind::kShapeMismatch: return "shape mismatch";
    case Kind::kInvariant: return "label invariant violated";
    case Kind::kTrailingData: return "trailing data";
  }
  return "cache error";
}

void check_record_invariants(const FeatureRecord& r) {
  auto fail = [&](const std::string& what) {
    throw CacheError(CacheError::Kind::kInvariant,
                     "record '" + r.record_id + "': " + what);
  };
  if (r.label > 1) fail("label must be 0 or 1");
  if (r.matched_count > r.gt_count) fail("matched_count exceeds gt_count");
  if (r.matched_count > r.pred_count) fail("matched_count exceeds pred_count");
  const bool missed = r.matched_count < r.gt_count;
  if ((r.label == 1) != missed) fail("label disagrees with detection counts");
}

void check_record_shapes(const FeatureRecord& r, const PyramidSpec& spec,
                         std::uint32_t d_wk) {
  auto fail = [&](const std::string& what) {
    throw CacheError(CacheError::Kind::kShapeMismatch,
                     "record '" + r.record_id + "': " + what);
  };
  if (r.pyramid.size() != spec.size()) fail("wrong number of pyramid levels");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (r.pyramid[i].shape() != spec[i].shape()) {
      fail("level " + std::to_string(i) + " has shape " +
           shape_str(r.pyramid[i].shape()) + ", expected " +
           shape_str(spec[i].shape()));
    }
  }
  if (r.wk_embedding.shape() != Shape{d_wk}) {
    fail("wk embedding has shape " + shape_str(r.wk_embedding.shape()));
  }
}

void check_record_finite(const FeatureRecord& r) {
  auto ok = [](const TensorF& t) {
    return std::all_of(t.values().begin(), t.values().end(),
                       [](float v) { return std::isfinite(v); });
  };
  bool finite = ok(r.wk_embedding);
  for (const auto& l : r.pyramid) finite = finite && ok(l);
  if (!finite) throw NumericError("non-finite feature in record '" + r.record_id + "'");
}

void write_cache(const std::string& path, const PyramidSpec& spec,
                 std::uint32_t d_wk, std::span<const FeatureRecord> records) {
  spec.validate();
  if (d_wk == 0) throw std::invalid_argument("d_wk must be positive");
  for (const auto& r : records) {
    check_record_shapes(r, spec, d_wk);
    check_record_invariants(r);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CacheError(CacheError::Kind::kIo, "cannot open " + path);

  os.write(kCacheMagic, sizeof(kCacheMagic));
  io::put_uint<std::uint32_t>(os, kCacheVersion);
  io::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(spec.size()));
  for (const auto& l : spec.levels) {
    io::put_uint<std::uint32_t>(os, l.channels);
    io::put_uint<std::uint32_t>(os, l.height);
    io::put_uint<std::uint32_t>(os, l.width);
  }
  io::put_uint<std::uint32_t>(os, d_wk);
  io::put_uint<std::uint64_t>(os, records.size());
  io::put_uint<std::uint8_t>(os, kDtypeF32);

  for (const auto& r : records) {
    io::put_str16(os, r.record_id);
    for (const auto& t : r.pyramid) io::put_f32_array(os, t.data(), t.size());
    io::put_f32_array(os, r.wk_embedding.data(), r.wk_embedding.size());
    io::put_uint<std::uint8_t>(os, r.label);
    io::put_uint<std::uint32_t>(os, r.gt_count);
    io::put_uint<std::uint32_t>(os, r.matched_count);
    io::put_uint<std::uint32_t>(os, r.pred_count);
    io::put_str16(os, r.domain_tag);
  }
  os.flush();
  if (!os) throw CacheError(CacheError::Kind::kIo, "write failed for " + path);
}

CacheReader::CacheReader(const std::string& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw CacheError(CacheError::Kind::kIo, "cannot open " + path);
  try {
    char magic[sizeof(kCacheMagic)];
    if (!in_.read(magic, sizeof(magic)) ||
        std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
      throw CacheError(CacheError::Kind::kBadMagic,
                       path + " is not a KGFPCAC1 feature cache");
    }
    const auto version = io::get_uint<std::uint32_t>(in_);
    if (version != kCacheVersion) {
      throw CacheError(CacheError::Kind::kVersionMismatch,
                       "file version " + std::to_string(version) +
                           ", reader supports " + std::to_string(kCacheVersion));
    }
    const auto n_levels = io::get_uint<std::uint32_t>(in_);
    if (n_levels == 0 || n_levels > 64) {
      throw CacheError(CacheError::Kind::kShapeMismatch,
                       "implausible level count " + std::to_string(n_levels));
    }
    std::vector<std::array<std::uint32_t, 3>> extents(n_levels);
    for (auto& e : extents) {
      for (auto& v : e) v = io::get_uint<std::uint32_t>(in_);
    }
    header_.spec = PyramidSpec::from_extents(extents);
    try {
      header_.spec.validate();
    } catch (const std::invalid_argument& e) {
      throw CacheError(CacheError::Kind::kShapeMismatch, e.what());
    }
    header_.d_wk = io::get_uint<std::uint32_t>(in_);
    if (header_.d_wk == 0) {
      throw CacheError(CacheError::Kind::kShapeMismatch, "d_wk is zero");
    }
    header_.record_count = io::get_uint<std::uint64_t>(in_);
    const auto dtype = io::get_uint<std::uint8_t>(in_);
    if (dtype != kDtypeF32) {
      throw CacheError(CacheError::Kind::kVersionMismatch,
                       "unsupported dtype tag " + std::to_string(dtype));
    }
  } catch (const io::EndOfData&) {
    throw CacheError(CacheError::Kind::kTruncated, path + ": header incomplete");
  }
}

std::optional<FeatureRecord> CacheReader::next() {
  if (consumed_ == header_.record_count) return std::nullopt;
  FeatureRecord r;
  try {
    r.record_id = io::get_str16(in_);
    for (const auto& level : header_.spec.levels) {
      TensorF t(level.shape());
      io::get_f32_array(in_, t.data(), t.size());
      r.pyramid.push_back(std::move(t));
    }
    r.wk_embedding = TensorF({header_.d_wk});
    io::get_f32_array(in_, r.wk_embedding.data(), header_.d_wk);
    r.label = io::get_uint<std::uint8_t>(in_);
    r.gt_count = io::get_uint<std::uint32_t>(in_);
    r.matched_count = io::get_uint<std::uint32_t>(in_);
    r.pred_count = io::get_uint<std::uint32_t>(in_);
    r.domain_tag = io::get_str16(in_);
  } catch (const io::EndOfData&) {
    throw CacheError(CacheError::Kind::kTruncated,
                     path_ + ": header declares " +
                         std::to_string(header_.record_count) +
                         " records, data ends inside record " +
                         std::to_string(consumed_));
  }
  check_record_invariants(r);
  ++consumed_;
  if (consumed_ == header_.record_count && in_.peek() != std::char_traits<char>::eof()) {
    throw CacheError(CacheError::Kind::kTrailingData,
                     path_ + ": bytes after the last declared record");
  }
  return r;
}

CacheContents read_cache(const std::string& path) {
  CacheReader reader(path);
  CacheContents out;
  out.spec = reader.header().spec;
  out.d_wk = reader.header().d_wk;
  out.records.reserve(static_cast<std::size_t>(
      std::min<std::uint64_t>(reader.header().record_count, 1u << 20)));
  while (auto r = reader.next()) out.records.push_back(std::move(*r));
  return out;
}

}  // namespace kgfp
