// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/labeling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace kgfp {

void Box::validate() const {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) {
    throw std::invalid_argument("box coordinates must be finite");
  }
  if (!(x2 > x1) || !(y2 > y1)) {
    throw std::invalid_argument("box needs x2 > x1 and y2 > y1");
  }
  if (!(score >= 0.0 && score <= 1.0)) {
    throw std::invalid_argument("box score must lie in [0, 1]");
  }
}

void LabelConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("iou_threshold must lie in (0, 1]");
  }
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) {
    throw std::invalid_argument("confidence_threshold must lie in (0, 1]");
  }
}

bool LabelConfig::is_safety_class(int class_id) const {
  return std::find(safety_class_ids.begin(), safety_class_ids.end(), class_id) !=
         safety_class_ids.end();
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

LabelResult match_and_label(const std::vector<Box>& gt,
                            const std::vector<Box>& preds,
                            const LabelConfig& cfg) {
  cfg.validate();
  std::vector<const Box*> gts;
  for (const Box& b : gt) {
    b.validate();
    if (cfg.is_safety_class(b.class_id)) gts.push_back(&b);
  }
  std::vector<const Box*> kept;
  for (const Box& b : preds) {
    b.validate();
    if (cfg.is_safety_class(b.class_id) && b.score >= cfg.confidence_threshold) {
      kept.push_back(&b);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Box* a, const Box* b) { return a->score > b->score; });

  std::vector<bool> taken(gts.size(), false);
  std::uint32_t matched = 0;
  for (const Box* p : kept) {
    double best = -1.0;
    std::size_t best_idx = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(*p, *gts[g]);
      if (v > best) {
        best = v;
        best_idx = g;
      }
    }
    if (best_idx < gts.size() && best >= cfg.iou_threshold) {
      taken[best_idx] = true;
      ++matched;
    }
  }
  LabelResult r;
  r.gt_count = static_cast<std::uint32_t>(gts.size());
  r.matched_count = matched;
  r.pred_count = static_cast<std::uint32_t>(kept.size());
  r.label = matched < r.gt_count ? 1 : 0;
  return r;
}

BoxFormatError::BoxFormatError(std::size_t line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message),
      line_(line) {}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& tok, std::size_t line) {
  const std::string t = trim(tok);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw BoxFormatError(line, "not a number: '" + t + "'");
  }
  return v;
}

int parse_class(const std::string& tok, std::size_t line) {
  const std::string t = trim(tok);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw BoxFormatError(line, "not a class id: '" + t + "'");
  }
  return v;
}

std::vector<Box> parse_boxes(const std::string& field, bool with_score,
                             std::size_t line) {
  std::vector<Box> boxes;
  if (trim(field).empty()) return boxes;
  const std::size_t arity = with_score ? 6 : 5;
  for (const std::string& item : split(field, ';')) {
    const auto nums = split(item, ',');
    if (nums.size() != arity) {
      throw BoxFormatError(line, "box '" + trim(item) + "' needs " +
                                     std::to_string(arity) + " comma-separated fields");
    }
    Box b;
    b.x1 = parse_number(nums[0], line);
    b.y1 = parse_number(nums[1], line);
    b.x2 = parse_number(nums[2], line);
    b.y2 = parse_number(nums[3], line);
    b.score = with_score ? parse_number(nums[4], line) : 1.0;
    b.class_id = parse_class(nums[arity - 1], line);
    try {
      b.validate();
    } catch (const std::invalid_argument& e) {
      throw BoxFormatError(line, e.what());
    }
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace

std::vector<ImageBoxes> parse_box_file(std::istream& in) {
  std::vector<ImageBoxes> images;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (trim(text).empty() || text.front() == '#') continue;
    const auto fields = split(text, '\t');
    if (fields.size() != 3) {
      throw BoxFormatError(line_no, "expected 3 tab-separated fields, got " +
                                        std::to_string(fields.size()));
    }
    ImageBoxes img;
    img.image_id = trim(fields[0]);
    if (img.image_id.empty()) throw BoxFormatError(line_no, "empty image id");
    img.gt = parse_boxes(fields[1], false, line_no);
    img.preds = parse_boxes(fields[2], true, line_no);
    images.push_back(std::move(img));
  }
  return images;
}

std::string format_box_line(const ImageBoxes& image) {
  std::ostringstream os;
  os.precision(17);
  os << image.image_id << '\t';
  for (std::size_t i = 0; i < image.gt.size(); ++i) {
    const Box& b = image.gt[i];
    if (i) os << ';';
    os << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ',' << b.class_id;
  }
  os << '\t';
  for (std::size_t i = 0; i < image.preds.size(); ++i) {
    const Box& b = image.preds[i];
    if (i) os << ';';
    os << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ',' << b.score << ','
       << b.class_id;
  }
  return os.str();
}

}  // namespace kgfp
