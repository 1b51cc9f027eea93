// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace kgfp {

DomainMetrics evaluate_domain(const std::string& domain, std::span<const ScoredRecord> scored,
                              double tau) {
  DomainMetrics m;
  m.domain = domain;
  m.n = scored.size();
  for (const auto& r : scored) (r.label ? m.n_unsafe : m.n_safe) += 1;
  m.gated = gate_outcome(scored, tau);
  m.ungated = gate_outcome(scored, -std::numeric_limits<double>::infinity());
  m.achieved_fpr = fpr_at(scored, tau);
  if (m.n_unsafe > 0) m.tpr_at_fpr = tpr_at(scored, tau);
  if (m.n_safe > 0 && m.n_unsafe > 0) {
    m.auroc = auroc(scored);
    m.roc = roc_curve(scored);
  }
  if (m.n_safe > 0) {
    m.curve = recall_precision_curve(scored);
    m.rec_prec = integrate_curve(m.curve);
  }
  return m;
}

MethodReport evaluate_method(
    const std::string& method, const CalibratedGate& gate,
    const std::vector<std::pair<std::string, std::vector<ScoredRecord>>>& domains) {
  MethodReport r;
  r.method = method;
  r.gate = gate;
  for (const auto& [tag, scored] : domains) r.domains.push_back(evaluate_domain(tag, scored, gate.tau));
  return r;
}

namespace {

using Json = nlohmann::ordered_json;

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json outcome_json(const GateOutcome& o) {
  return Json{{"recall", opt(o.recall)},
              {"precision", opt(o.precision)},
              {"accepted", o.accepted},
              {"accepted_fraction", o.accepted_fraction}};
}

Json domain_json(const DomainMetrics& d) {
  Json roc = Json::array();
  for (const auto& p : d.roc) roc.push_back(Json::array({p.fpr, p.tpr}));
  Json j{{"domain", d.domain},
         {"n", d.n},
         {"n_safe", d.n_safe},
         {"n_unsafe", d.n_unsafe},
         {"safety_auroc", opt(d.auroc)},
         {"tpr_at_fpr", opt(d.tpr_at_fpr)},
         {"achieved_fpr", d.achieved_fpr},
         {"person_recall_at_fpr", opt(d.gated.recall)},
         {"person_precision_at_fpr", opt(d.gated.precision)},
         {"accepted_fraction", d.gated.accepted_fraction},
         {"gated", outcome_json(d.gated)},
         {"ungated", outcome_json(d.ungated)},
         {"rec_auc", d.rec_prec ? Json(d.rec_prec->rec_auc) : Json(nullptr)},
         {"prec_auc", d.rec_prec ? Json(d.rec_prec->prec_auc) : Json(nullptr)},
         {"roc", roc}};
  return j;
}

std::string fmt_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  Json methods = Json::array();
  for (const auto& m : report.methods) {
    Json domains = Json::array();
    for (const auto& d : m.domains) domains.push_back(domain_json(d));
    methods.push_back(Json{{"method", m.method},
                           {"gate",
                            Json{{"tau", m.gate.tau},
                                 {"target_fpr", m.gate.target_fpr},
                                 {"calibration_size", m.gate.calibration_size},
                                 {"calibration_fpr", m.gate.achieved_fpr}}},
                           {"domains", domains}});
  }
  return Json{{"format", "kgfp-eval-report"}, {"version", 1}, {"methods", methods}}.dump(2) + "\n";
}

std::string curves_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "method,domain,fpr,recall,precision,tau\n";
  for (const auto& m : report.methods) {
    for (const auto& d : m.domains) {
      for (const auto& p : d.curve) {
        out << m.method << ',' << d.domain << ',' << p.fpr << ',' << p.recall << ','
            << p.precision << ',';
        if (std::isinf(p.tau)) {
          out << "-inf";
        } else {
          out << p.tau;
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

std::string format_table(const EvalReport& report) {
  if (report.methods.empty()) return "";
  std::ostringstream out;
  const auto& first = report.methods.front();
  out << "Person Recall [%] among accepted images at the calibrated gate\n";
  out << "method";
  for (const auto& d : first.domains) out << '\t' << d.domain;
  out << "\tAUROC\tRecAUC\tPrecAUC\n";
  out << "ungated";
  for (const auto& d : first.domains) out << '\t' << fmt_pct(d.ungated.recall);
  out << "\t-\t-\t-\n";
  for (const auto& m : report.methods) {
    out << m.method;
    for (const auto& d : m.domains) out << '\t' << fmt_pct(d.gated.recall);
    const DomainMetrics& id = m.domains.front();
    out << '\t' << fmt_pct(id.auroc) << '\t'
        << fmt_pct(id.rec_prec ? std::optional<double>(id.rec_prec->rec_auc) : std::nullopt)
        << '\t'
        << fmt_pct(id.rec_prec ? std::optional<double>(id.rec_prec->prec_auc) : std::nullopt)
        << '\n';
  }
  return out.str();
}

}  // namespace kgfp
