// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgfp/feature_cache.hpp"

namespace kgfp {

/// One scored image. Scores are oriented so that higher means safer.
struct ScoredRecord {
  std::string record_id;
  double score = 0;
  std::uint8_t label = 0;  // 1 = unsafe
  std::uint32_t gt_count = 0;
  std::uint32_t matched_count = 0;
  std::uint32_t pred_count = 0;
  std::string domain_tag = "id";

  void validate() const;
};

/// Copies ids, counts and domain from the record ("id" when it has none).
ScoredRecord make_scored(const FeatureRecord& record, double score);

struct CalibratedGate {
  double tau = 0;
  double target_fpr = 0.05;
  std::size_t calibration_size = 0;  // number of safe records used
  double achieved_fpr = 0;           // on the calibration set
};

/// tau is the largest safe score value with
/// #(safe score < tau) / #safe <= target_fpr. Throws std::invalid_argument
/// without safe records or with target_fpr outside [0, 1].
CalibratedGate calibrate(std::span<const ScoredRecord> scored, double target_fpr = 0.05);

/// Accept iff score >= tau. NaN is rejected.
bool gate_accepts(const CalibratedGate& g, double score);

/// Fraction of safe records rejected at tau (0 when there are none).
double fpr_at(std::span<const ScoredRecord> scored, double tau);

/// Rank-based AUROC with unsafe as the positive class and 1 - score as the
/// detection score. Ties get half credit. Throws on single-class input.
double auroc(std::span<const ScoredRecord> scored);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

/// ROC over all distinct thresholds, from (0, 0) to (1, 1). Single-class
/// input throws.
std::vector<RocPoint> roc_curve(std::span<const ScoredRecord> scored);

struct GateOutcome {
  /// Empty when the accepted set is empty.
  std::optional<double> recall;
  std::optional<double> precision;
  double accepted_fraction = 0;
  std::size_t accepted = 0;
};

/// Person recall and precision pooled over the records accepted at tau.
GateOutcome gate_outcome(std::span<const ScoredRecord> scored, double tau);

/// Same, with tau calibrated on the safe subset of `scored` itself.
GateOutcome person_recall_at_fpr(std::span<const ScoredRecord> scored, double target_fpr);

/// Unsafe records rejected at tau over all unsafe records. Throws without
/// unsafe records.
double tpr_at(std::span<const ScoredRecord> scored, double tau);
double tpr_at_fpr(std::span<const ScoredRecord> scored, double target_fpr);

struct CurvePoint {
  double fpr = 0;
  double recall = 0;
  double precision = 0;
  double tau = 0;  // -inf for the accept-all point
};

/// Recall/precision among accepted images against gate FPR. The first point
/// is accept-all at FPR 0; after that one point per distinct safe score
/// value with positive FPR. Requires at least one safe record.
std::vector<CurvePoint> recall_precision_curve(std::span<const ScoredRecord> scored);

struct RecPrecAuc {
  double rec_auc = 0;
  double prec_auc = 0;
};

/// Trapezoid areas under recall_precision_curve over FPR in [0, 1], with the
/// last point held constant up to FPR 1.
RecPrecAuc rec_prec_auc(std::span<const ScoredRecord> scored);

/// The same integral applied to an explicit curve.
RecPrecAuc integrate_curve(std::span<const CurvePoint> curve);

}  // namespace kgfp
