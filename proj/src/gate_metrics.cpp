// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/gate_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace kgfp {

void ScoredRecord::validate() const {
  if (!std::isfinite(score)) {
    throw std::invalid_argument("record '" + record_id + "' has a non-finite score");
  }
  if (matched_count > gt_count || matched_count > pred_count ||
      label != (matched_count < gt_count ? 1 : 0)) {
    throw std::invalid_argument("record '" + record_id + "' violates the count invariants");
  }
}

ScoredRecord make_scored(const FeatureRecord& record, double score) {
  ScoredRecord s;
  s.record_id = record.record_id;
  s.score = score;
  s.label = record.label;
  s.gt_count = record.gt_count;
  s.matched_count = record.matched_count;
  s.pred_count = record.pred_count;
  if (!record.domain_tag.empty()) s.domain_tag = record.domain_tag;
  return s;
}

namespace {

void validate_all(std::span<const ScoredRecord> scored) {
  for (const auto& r : scored) r.validate();
}

std::vector<double> safe_scores_sorted(std::span<const ScoredRecord> scored) {
  std::vector<double> safe;
  for (const auto& r : scored) {
    if (r.label == 0) safe.push_back(r.score);
  }
  std::sort(safe.begin(), safe.end());
  return safe;
}

void require_both_classes(std::span<const ScoredRecord> scored, const char* what) {
  std::size_t unsafe = 0;
  for (const auto& r : scored) unsafe += r.label;
  if (unsafe == 0 || unsafe == scored.size()) {
    throw std::invalid_argument(std::string(what) + " needs both safe and unsafe records");
  }
}

double check_target(double target_fpr) {
  if (!(target_fpr >= 0.0 && target_fpr <= 1.0)) {
    throw std::invalid_argument("target_fpr must lie in [0, 1]");
  }
  return target_fpr;
}

}  // namespace

CalibratedGate calibrate(std::span<const ScoredRecord> scored, double target_fpr) {
  check_target(target_fpr);
  validate_all(scored);
  const std::vector<double> safe = safe_scores_sorted(scored);
  if (safe.empty()) throw std::invalid_argument("calibration needs at least one safe record");
  // At most floor(target * n) safe scores may fall strictly below tau; the
  // order statistic at that index is the largest value that allows it.
  const double n = static_cast<double>(safe.size());
  auto k = static_cast<std::size_t>(std::floor(target_fpr * n + 1e-9));
  k = std::min(k, safe.size() - 1);
  CalibratedGate g;
  g.tau = safe[k];
  g.target_fpr = target_fpr;
  g.calibration_size = safe.size();
  g.achieved_fpr = fpr_at(scored, g.tau);
  return g;
}

bool gate_accepts(const CalibratedGate& g, double score) {
  return !std::isnan(score) && score >= g.tau;
}

double fpr_at(std::span<const ScoredRecord> scored, double tau) {
  std::size_t safe = 0, rejected = 0;
  for (const auto& r : scored) {
    if (r.label != 0) continue;
    ++safe;
    if (!(r.score >= tau)) ++rejected;
  }
  return safe == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(safe);
}

double auroc(std::span<const ScoredRecord> scored) {
  validate_all(scored);
  require_both_classes(scored, "auroc");
  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });
  // Mann-Whitney with midranks: a safe record outranks an unsafe one when its
  // safety score is higher.
  double safe_rank_sum = 0;
  std::size_t n_safe = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scored[order[j]].score == scored[order[i]].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (scored[order[k]].label == 0) {
        safe_rank_sum += midrank;
        ++n_safe;
      }
    }
    i = j;
  }
  const double ns = static_cast<double>(n_safe);
  const double nu = static_cast<double>(scored.size() - n_safe);
  return (safe_rank_sum - ns * (ns + 1) / 2) / (ns * nu);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredRecord> scored) {
  validate_all(scored);
  require_both_classes(scored, "roc_curve");
  std::vector<const ScoredRecord*> sorted;
  for (const auto& r : scored) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredRecord* a, const ScoredRecord* b) { return a->score < b->score; });
  double n_safe = 0, n_unsafe = 0;
  for (const auto* r : sorted) (r->label ? n_unsafe : n_safe) += 1;
  std::vector<RocPoint> out{{0.0, 0.0}};
  double fp = 0, tp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j]->score == sorted[i]->score) {
      (sorted[j]->label ? tp : fp) += 1;
      ++j;
    }
    out.push_back({fp / n_safe, tp / n_unsafe});
    i = j;
  }
  return out;
}

GateOutcome gate_outcome(std::span<const ScoredRecord> scored, double tau) {
  validate_all(scored);
  GateOutcome o;
  std::uint64_t gt = 0, matched = 0, pred = 0;
  for (const auto& r : scored) {
    if (!(r.score >= tau)) continue;
    ++o.accepted;
    gt += r.gt_count;
    matched += r.matched_count;
    pred += r.pred_count;
  }
  o.accepted_fraction =
      scored.empty() ? 0.0 : static_cast<double>(o.accepted) / static_cast<double>(scored.size());
  if (o.accepted > 0) {
    o.recall = gt == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(gt);
    o.precision = pred == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(pred);
  }
  return o;
}

GateOutcome person_recall_at_fpr(std::span<const ScoredRecord> scored, double target_fpr) {
  return gate_outcome(scored, calibrate(scored, target_fpr).tau);
}

double tpr_at(std::span<const ScoredRecord> scored, double tau) {
  std::size_t unsafe = 0, rejected = 0;
  for (const auto& r : scored) {
    if (r.label == 0) continue;
    ++unsafe;
    if (!(r.score >= tau)) ++rejected;
  }
  if (unsafe == 0) throw std::invalid_argument("tpr needs at least one unsafe record");
  return static_cast<double>(rejected) / static_cast<double>(unsafe);
}

double tpr_at_fpr(std::span<const ScoredRecord> scored, double target_fpr) {
  return tpr_at(scored, calibrate(scored, target_fpr).tau);
}

std::vector<CurvePoint> recall_precision_curve(std::span<const ScoredRecord> scored) {
  validate_all(scored);
  std::vector<const ScoredRecord*> sorted;
  for (const auto& r : scored) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredRecord* a, const ScoredRecord* b) { return a->score < b->score; });
  const std::size_t n = sorted.size();
  // Suffix sums: everything from index i on is accepted at tau = sorted[i].
  std::vector<std::uint64_t> gt(n + 1, 0), matched(n + 1, 0), pred(n + 1, 0);
  std::size_t n_safe = 0;
  for (std::size_t i = n; i-- > 0;) {
    gt[i] = gt[i + 1] + sorted[i]->gt_count;
    matched[i] = matched[i + 1] + sorted[i]->matched_count;
    pred[i] = pred[i + 1] + sorted[i]->pred_count;
    n_safe += sorted[i]->label == 0;
  }
  if (n_safe == 0) throw std::invalid_argument("curve needs at least one safe record");
  auto point = [&](std::size_t i, double fpr, double tau) {
    CurvePoint p;
    p.fpr = fpr;
    p.tau = tau;
    p.recall = gt[i] == 0 ? 1.0 : static_cast<double>(matched[i]) / static_cast<double>(gt[i]);
    p.precision =
        pred[i] == 0 ? 1.0 : static_cast<double>(matched[i]) / static_cast<double>(pred[i]);
    return p;
  };

  std::vector<CurvePoint> out{point(0, 0.0, -std::numeric_limits<double>::infinity())};
  std::size_t safe_below = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    bool has_safe = false;
    while (j < n && sorted[j]->score == sorted[i]->score) {
      has_safe |= sorted[j]->label == 0;
      ++j;
    }
    if (has_safe && safe_below > 0) {
      out.push_back(point(
          i, static_cast<double>(safe_below) / static_cast<double>(n_safe), sorted[i]->score));
    }
    for (std::size_t k = i; k < j; ++k) safe_below += sorted[k]->label == 0;
    i = j;
  }
  return out;
}

RecPrecAuc integrate_curve(std::span<const CurvePoint> curve) {
  if (curve.empty()) throw std::invalid_argument("empty curve");
  RecPrecAuc a;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double w = curve[i].fpr - curve[i - 1].fpr;
    a.rec_auc += 0.5 * w * (curve[i].recall + curve[i - 1].recall);
    a.prec_auc += 0.5 * w * (curve[i].precision + curve[i - 1].precision);
  }
  const double tail = 1.0 - curve.back().fpr;
  a.rec_auc += tail * curve.back().recall;
  a.prec_auc += tail * curve.back().precision;
  return a;
}

RecPrecAuc rec_prec_auc(std::span<const ScoredRecord> scored) {
  const auto curve = recall_precision_curve(scored);
  return integrate_curve(curve);
}

}  // namespace kgfp
