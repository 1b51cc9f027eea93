// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "kgfp/report.hpp"
#include "kgfp/run_config.hpp"

namespace kgfp {
namespace {

ScoredRecord rec(const std::string& id, double score, std::uint32_t gt, std::uint32_t matched) {
  ScoredRecord r;
  r.record_id = id;
  r.score = score;
  r.gt_count = gt;
  r.matched_count = matched;
  r.pred_count = matched;
  r.label = matched < gt ? 1 : 0;
  return r;
}

std::vector<ScoredRecord> sample() {
  return {rec("a", 0.9, 2, 2), rec("b", 0.8, 1, 1), rec("c", 0.7, 3, 1),
          rec("d", 0.6, 2, 2), rec("e", 0.2, 2, 0), rec("f", 0.1, 1, 1)};
}

TEST(Report, DomainMetricsAtThreshold) {
  const auto s = sample();
  // Safe scores {0.9, 0.8, 0.6, 0.1}; tau 0.6 accepts a, b, c, d.
  const DomainMetrics m = evaluate_domain("id", s, 0.6);
  EXPECT_EQ(m.n, 6u);
  EXPECT_EQ(m.n_safe, 4u);
  EXPECT_EQ(m.n_unsafe, 2u);
  EXPECT_DOUBLE_EQ(m.achieved_fpr, 0.25);
  ASSERT_TRUE(m.tpr_at_fpr);
  EXPECT_DOUBLE_EQ(*m.tpr_at_fpr, 0.5);
  ASSERT_TRUE(m.gated.recall);
  // Accepted: gt 2+1+3+2 = 8, matched 2+1+1+2 = 6.
  EXPECT_DOUBLE_EQ(*m.gated.recall, 6.0 / 8.0);
  EXPECT_EQ(m.gated.accepted, 4u);
  // Ungated: gt 11, matched 7.
  EXPECT_DOUBLE_EQ(*m.ungated.recall, 7.0 / 11.0);
  ASSERT_TRUE(m.auroc);
  // Unsafe c (0.7) sits below 2 safe scores, e (0.2) below 3: 5 of 8 pairs.
  EXPECT_DOUBLE_EQ(*m.auroc, 5.0 / 8.0);
  EXPECT_TRUE(m.rec_prec.has_value());
}

TEST(Report, SingleClassDomainLeavesUndefinedFields) {
  std::vector<ScoredRecord> safe_only{rec("a", 0.5, 1, 1), rec("b", 0.3, 2, 2)};
  const DomainMetrics m = evaluate_domain("ood", safe_only, 0.4);
  EXPECT_FALSE(m.auroc);
  EXPECT_FALSE(m.tpr_at_fpr);
  EXPECT_TRUE(m.rec_prec);
  EXPECT_TRUE(m.roc.empty());

  std::vector<ScoredRecord> unsafe_only{rec("a", 0.5, 2, 1)};
  const DomainMetrics u = evaluate_domain("ood", unsafe_only, 0.4);
  EXPECT_FALSE(u.auroc);
  EXPECT_FALSE(u.rec_prec);
  EXPECT_TRUE(u.tpr_at_fpr);
}

TEST(Report, EmptyAcceptedSetSerializesAsNull) {
  const auto s = sample();
  EvalReport r;
  r.methods.push_back(evaluate_method("m", CalibratedGate{10.0, 0.05, 4, 0.0}, {{"id", s}}));
  const auto j = nlohmann::json::parse(report_to_json(r));
  const auto& d = j["methods"][0]["domains"][0];
  EXPECT_TRUE(d["person_recall_at_fpr"].is_null());
  EXPECT_EQ(d["gated"]["accepted"], 0);
  EXPECT_FALSE(d["ungated"]["recall"].is_null());
}

TEST(Report, JsonHasStableShape) {
  const auto s = sample();
  EvalReport r;
  const CalibratedGate gate{0.6, 0.25, 4, 0.25};
  r.methods.push_back(evaluate_method("kgfp", gate, {{"id", s}, {"shift", s}}));
  r.methods.push_back(evaluate_method("gram", gate, {{"id", s}, {"shift", s}}));
  const std::string text = report_to_json(r);
  EXPECT_EQ(text, report_to_json(r));
  EXPECT_EQ(text.back(), '\n');
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["format"], "kgfp-eval-report");
  EXPECT_EQ(j["version"], 1);
  ASSERT_EQ(j["methods"].size(), 2u);
  EXPECT_EQ(j["methods"][1]["method"], "gram");
  EXPECT_EQ(j["methods"][0]["domains"][1]["domain"], "shift");
  EXPECT_DOUBLE_EQ(j["methods"][0]["gate"]["tau"].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(j["methods"][0]["domains"][0]["safety_auroc"].get<double>(), 0.625);
}

TEST(Report, CurveCsvRoundTrips) {
  const auto s = sample();
  EvalReport r;
  r.methods.push_back(evaluate_method("kgfp", CalibratedGate{0.6, 0.25, 4, 0.25}, {{"id", s}}));
  std::istringstream in(curves_to_csv(r));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "method,domain,fpr,recall,precision,tau");
  const auto& curve = r.methods[0].domains[0].curve;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string method, domain, fpr, recall, precision, tau;
    std::getline(cells, method, ',');
    std::getline(cells, domain, ',');
    std::getline(cells, fpr, ',');
    std::getline(cells, recall, ',');
    std::getline(cells, precision, ',');
    std::getline(cells, tau, ',');
    ASSERT_LT(rows, curve.size());
    EXPECT_EQ(method, "kgfp");
    EXPECT_EQ(std::stod(fpr), curve[rows].fpr);
    EXPECT_EQ(std::stod(recall), curve[rows].recall);
    if (rows == 0) {
      EXPECT_EQ(tau, "-inf");
    } else {
      EXPECT_EQ(std::stod(tau), curve[rows].tau);
    }
    ++rows;
  }
  EXPECT_EQ(rows, curve.size());
}

TEST(Report, TableRowsPerMethod) {
  const auto s = sample();
  EvalReport r;
  r.methods.push_back(evaluate_method("kgfp", CalibratedGate{0.6, 0.25, 4, 0.25}, {{"id", s}}));
  const std::string t = format_table(r);
  EXPECT_NE(t.find("ungated\t63.6"), std::string::npos) << t;
  EXPECT_NE(t.find("kgfp\t75.0\t62.5"), std::string::npos) << t;
  EXPECT_EQ(format_table(EvalReport{}), "");
}

TEST(RunConfig, EmptyObjectGivesDeskDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.d_wk(), kDeskWkDim);
  EXPECT_EQ(c.arch.common_channels, ArchConfig::desk_scale().common_channels);
  EXPECT_DOUBLE_EQ(c.target_fpr, 0.05);
}

TEST(RunConfig, PaperPresetSwitchesDefaultsBeforeOverrides) {
  const RunConfig c = parse_run_config(R"({"arch": {"heads": 2}, "preset": "paper"})");
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.d_wk(), kPaperWkDim);
  EXPECT_EQ(c.arch.heads, 2u);
  EXPECT_EQ(c.arch.common_channels, ArchConfig::paper_scale().common_channels);
}

TEST(RunConfig, OverridesApply) {
  const RunConfig c = parse_run_config(R"({
    "seed": 9, "target_fpr": 0.1,
    "train": {"epochs": 3, "lr": 0.01, "optimizer": "adam"},
    "arch": {"head_kind": "mlp", "use_pre_fusion_attn": false},
    "label": {"iou_threshold": 0.4, "safety_class_ids": [0, 2]}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_DOUBLE_EQ(c.target_fpr, 0.1);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.optimizer, OptimizerKind::kAdam);
  EXPECT_EQ(c.arch.head_kind, HeadKind::kMlp);
  EXPECT_FALSE(c.arch.use_pre_fusion_attn);
  EXPECT_DOUBLE_EQ(c.label.iou_threshold, 0.4);
  EXPECT_EQ(c.label.safety_class_ids, (std::vector<int>{0, 2}));
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(parse_run_config("not json"), ConfigError);
  EXPECT_THROW(parse_run_config("[]"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"bogus": 1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"epocs": 1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"epochs": "ten"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"epochs": -1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"epochs": 1.5}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"arch": {"use_post_self_attn": 1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"arch": {"head_kind": "tree"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"optimizer": "sgd"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"preset": "huge"})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"target_fpr": 1.5})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"lr": -1}})"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(RunConfig, ErrorNamesTheKey) {
  try {
    parse_run_config(R"({"train": {"batch_size": "x"}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.batch_size"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, SerializedFormParsesBack) {
  const RunConfig c = parse_run_config(
      R"({"preset": "desk", "seed": 4, "train": {"optimizer": "adam", "epochs": 7},
          "arch": {"head_kind": "mlp"}})");
  const std::string text = run_config_to_json(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(run_config_to_json(back), text);
  EXPECT_EQ(back.train.epochs, 7u);
  EXPECT_EQ(back.arch.head_kind, HeadKind::kMlp);
}

}  // namespace
}  // namespace kgfp
