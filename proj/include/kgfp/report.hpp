// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation reports: one JSON document plus a flat curve table.

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kgfp/gate_metrics.hpp"

namespace kgfp {

struct DomainMetrics {
  std::string domain;
  std::size_t n = 0, n_safe = 0, n_unsafe = 0;
  /// Undefined (empty) when the domain lacks one of the classes.
  std::optional<double> auroc;
  std::optional<double> tpr_at_fpr;
  std::optional<RecPrecAuc> rec_prec;
  double achieved_fpr = 0;
  GateOutcome gated;
  GateOutcome ungated;
  std::vector<RocPoint> roc;
  std::vector<CurvePoint> curve;
};

struct MethodReport {
  std::string method;
  CalibratedGate gate;
  std::vector<DomainMetrics> domains;  // in input order, ID first
};

struct EvalReport {
  std::vector<MethodReport> methods;
};

/// Metrics for one domain at a fixed threshold.
DomainMetrics evaluate_domain(const std::string& domain, std::span<const ScoredRecord> scored,
                              double tau);

/// `domains` pairs a tag with its scored records. The gate is applied to
/// every domain unchanged.
MethodReport evaluate_method(
    const std::string& method, const CalibratedGate& gate,
    const std::vector<std::pair<std::string, std::vector<ScoredRecord>>>& domains);

/// Canonical JSON text (fixed key order, trailing newline).
std::string report_to_json(const EvalReport& report);
/// CSV with header method,domain,fpr,recall,precision,tau.
std::string curves_to_csv(const EvalReport& report);
/// Plain-text table: one row per method, person recall at the gate per
/// domain, then AUROC and Rec/Prec AUC on the first domain.
std::string format_table(const EvalReport& report);

}  // namespace kgfp
