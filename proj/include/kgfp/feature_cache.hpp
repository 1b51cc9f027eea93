// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgfp/tensor.hpp"

namespace kgfp {

struct PyramidLevel {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::string name;

  Shape shape() const { return {channels, height, width}; }
  friend bool operator==(const PyramidLevel& a, const PyramidLevel& b) {
    return a.channels == b.channels && a.height == b.height && a.width == b.width;
  }
};

/// Ordered feature-pyramid geometry, finest level first.
struct PyramidSpec {
  std::vector<PyramidLevel> levels;

  /// Throws std::invalid_argument unless there is at least one level, all
  /// extents are positive and spatial size strictly decreases.
  void validate() const;

  std::size_t size() const { return levels.size(); }
  const PyramidLevel& operator[](std::size_t i) const { return levels[i]; }
  friend bool operator==(const PyramidSpec&, const PyramidSpec&) = default;

  /// (256,80,80), (512,40,40), (512,20,20) as P3..P5.
  static PyramidSpec paper_scale();
  /// (16,16,16), (32,8,8), (32,4,4): same 2x geometry at desk size.
  static PyramidSpec desk_scale();
  /// Names levels P3, P4, ... in order.
  static PyramidSpec from_extents(
      const std::vector<std::array<std::uint32_t, 3>>& extents);
};

inline constexpr std::uint32_t kPaperWkDim = 768;
inline constexpr std::uint32_t kDeskWkDim = 32;

/// One image: cached pyramid features, world-knowledge embedding and the
/// detection outcome that defines its safety label.
struct FeatureRecord {
  std::string record_id;
  std::vector<TensorF> pyramid;
  TensorF wk_embedding;
  std::uint8_t label = 0;  // 0 safe, 1 unsafe
  std::uint32_t gt_count = 0;
  std::uint32_t matched_count = 0;
  std::uint32_t pred_count = 0;
  std::string domain_tag;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Throws CacheError(kInvariant) if counts and label disagree:
/// matched <= gt, matched <= pred, label == (matched < gt).
void check_record_invariants(const FeatureRecord& record);
/// Throws CacheError(kShapeMismatch) if tensors do not fit spec / d_wk.
void check_record_shapes(const FeatureRecord& record, const PyramidSpec& spec,
                         std::uint32_t d_wk);

/// Throws NumericError if any feature value is NaN or infinite.
void check_record_finite(const FeatureRecord& record);

class CacheError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kShapeMismatch,
    kInvariant,
    kTrailingData,
  };
  CacheError(Kind kind, const std::string& message);
  Kind kind() const { return kind_; }
  static const char* kind_name(Kind kind);

 private:
  Kind kind_;
};

inline constexpr char kCacheMagic[8] = {'K', 'G', 'F', 'P', 'C', 'A', 'C', '1'};
inline constexpr std::uint32_t kCacheVersion = 1;

struct CacheHeader {
  PyramidSpec spec;
  std::uint32_t d_wk = 0;
  std::uint64_t record_count = 0;
};

/// Streams records one at a time; concurrent readers on one file are fine.
class CacheReader {
 public:
  explicit CacheReader(const std::string& path);

  const CacheHeader& header() const { return header_; }
  /// Next record, or nullopt after the declared count. Throws on truncation
  /// and, once the last record is read, on trailing bytes.
  std::optional<FeatureRecord> next();

 private:
  std::ifstream in_;
  std::string path_;
  CacheHeader header_;
  std::uint64_t consumed_ = 0;
};

void write_cache(const std::string& path, const PyramidSpec& spec,
                 std::uint32_t d_wk, std::span<const FeatureRecord> records);

struct CacheContents {
  PyramidSpec spec;
  std::uint32_t d_wk = 0;
  std::vector<FeatureRecord> records;
};

CacheContents read_cache(const std::string& path);

}  // namespace kgfp
