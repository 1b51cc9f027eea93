// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgfp {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 1.0;
  int class_id = 0;

  /// Throws std::invalid_argument unless x2 > x1, y2 > y1, score in [0, 1].
  void validate() const;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

struct LabelConfig {
  double iou_threshold = 0.5;
  double confidence_threshold = 0.5;
  std::vector<int> safety_class_ids{0};

  void validate() const;
  bool is_safety_class(int class_id) const;
};

struct LabelResult {
  std::uint8_t label = 0;  // 1 iff some safety-critical GT box went unmatched
  std::uint32_t gt_count = 0;
  std::uint32_t matched_count = 0;
  std::uint32_t pred_count = 0;

  friend bool operator==(const LabelResult&, const LabelResult&) = default;
};

double iou(const Box& a, const Box& b);

/// Greedy one-to-one matching. Predictions of safety classes scoring at least
/// the confidence threshold are visited by descending score (ties keep input
/// order); each claims the unmatched GT box with the highest IoU (ties go to
/// the lower GT index) when that IoU reaches the threshold.
LabelResult match_and_label(const std::vector<Box>& gt,
                            const std::vector<Box>& preds,
                            const LabelConfig& cfg);

/// One image of the box interchange format (docs/box_format.md).
struct ImageBoxes {
  std::string image_id;
  std::vector<Box> gt;
  std::vector<Box> preds;
};

class BoxFormatError : public std::runtime_error {
 public:
  BoxFormatError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::vector<ImageBoxes> parse_box_file(std::istream& in);
std::string format_box_line(const ImageBoxes& image);

}  // namespace kgfp
