// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

// kgfp: command-line front end. Every subcommand reads its inputs, refuses
// to overwrite existing outputs without --force, and on failure prints one
// line of the form
//   error: kind=<usage|data|numeric|io> msg="..."
// and exits 2 (usage), 3 (data) or 4 (numeric).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgfp/container.hpp"
#include "kgfp/feature_cache.hpp"
#include "kgfp/fusion_net.hpp"
#include "kgfp/gate_metrics.hpp"
#include "kgfp/labeling.hpp"
#include "kgfp/ood_baselines.hpp"
#include "kgfp/report.hpp"
#include "kgfp/run_config.hpp"
#include "kgfp/synthetic.hpp"
#include "kgfp/trainer.hpp"

namespace kgfp {
namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_fresh(const std::string& path, bool force) {
  if (path.empty()) return;
  if (!force && std::filesystem::exists(path)) {
    throw UsageError("output '" + path + "' exists (pass --force to overwrite)");
  }
}

void check_input(const std::string& path) {
  if (!std::filesystem::exists(path)) throw UsageError("input '" + path + "' does not exist");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CacheError(CacheError::Kind::kIo, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw CacheError(CacheError::Kind::kIo, "write to '" + path + "' failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError(CacheError::Kind::kIo, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flags shared by everything that reads a RunConfig. Unset flags leave the
// config file (or the preset default) alone.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<double> target_fpr;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--seed", seed, "Seed");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) {
      c = load_run_config(config_path);
    } else if (preset) {
      c = parse_run_config(nlohmann::json{{"preset", *preset}}.dump());
    }
    if (preset && *preset != c.preset) {
      throw ConfigError("--preset " + *preset + " contradicts the config file preset " + c.preset);
    }
    if (seed) c.seed = *seed;
    if (target_fpr) c.target_fpr = *target_fpr;
    if (!(c.target_fpr >= 0 && c.target_fpr <= 1)) throw ConfigError("target FPR must lie in [0, 1]");
    return c;
  }
};

// A scoring function plus the name it goes by in reports. Higher is safer.
struct Scorer {
  std::string method;
  std::function<double(const FeatureRecord&)> fn;
};

Scorer model_scorer(const std::string& path) {
  check_input(path);
  auto model = std::make_shared<FusionModel<float>>(load_model(path));
  return {"kgfp", [model](const FeatureRecord& r) {
            check_record_shapes(r, model->spec(), model->d_wk());
            check_record_finite(r);
            return model->score(r).s_safety;
          }};
}

Scorer baseline_scorer(const std::string& path) {
  check_input(path);
  auto b = std::make_shared<Baseline>(load_baseline(path));
  return {baseline_name(b->kind), [b](const FeatureRecord& r) {
            check_record_finite(r);
            return baseline_score(*b, r);
          }};
}

Scorer pick_scorer(const std::string& model, const std::string& baseline) {
  if (model.empty() == baseline.empty()) throw UsageError("pass exactly one of --model or --baseline");
  return model.empty() ? baseline_scorer(baseline) : model_scorer(model);
}

// Scores records on all hardware threads. Each record's score depends only
// on the record, so the output does not depend on the thread count.
std::vector<ScoredRecord> score_all(const Scorer& scorer, const std::vector<FeatureRecord>& records) {
  std::vector<double> scores(records.size());
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(records.size(), 1));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < records.size(); i += workers) scores[i] = scorer.fn(records[i]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<ScoredRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw NumericError(scorer.method + " produced a non-finite score for record '" +
                         records[i].record_id + "'");
    }
    out.push_back(make_scored(records[i], scores[i]));
  }
  return out;
}

std::string gate_to_json(const std::string& method, const CalibratedGate& g) {
  nlohmann::ordered_json j{{"format", "kgfp-gate"},
                           {"version", 1},
                           {"method", method},
                           {"tau", g.tau},
                           {"target_fpr", g.target_fpr},
                           {"calibration_size", g.calibration_size},
                           {"achieved_fpr", g.achieved_fpr}};
  return j.dump(2) + "\n";
}

std::pair<std::string, CalibratedGate> load_gate(const std::string& path) {
  check_input(path);
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    if (j.at("format") != "kgfp-gate" || j.at("version") != 1) {
      throw CacheError(CacheError::Kind::kBadMagic, "'" + path + "' is not a kgfp gate file");
    }
    CalibratedGate g;
    g.tau = j.at("tau").get<double>();
    g.target_fpr = j.at("target_fpr").get<double>();
    g.calibration_size = j.at("calibration_size").get<std::size_t>();
    g.achieved_fpr = j.at("achieved_fpr").get<double>();
    return {j.at("method").get<std::string>(), g};
  } catch (const nlohmann::json::exception& e) {
    throw CacheError(CacheError::Kind::kInvariant, "gate file '" + path + "': " + e.what());
  }
}

CacheContents load_cache(const std::string& path) {
  check_input(path);
  return read_cache(path);
}

// ---------------------------------------------------------------- gen-synth

struct GenSynthArgs {
  ConfigFlags cfg;
  std::string out;
  std::size_t n = 1000;
  double unsafe_fraction = 0.3;
  double hardness = 0.5;
  std::string domain_tag = "id";
  double domain_shift = 0;
  bool force = false;
};

void cmd_gen_synth(const GenSynthArgs& a) {
  const RunConfig c = a.cfg.resolve();
  check_fresh(a.out, a.force);
  SynthConfig s;
  s.spec = c.spec();
  s.d_wk = c.d_wk();
  s.n = a.n;
  s.unsafe_fraction = a.unsafe_fraction;
  s.hardness = a.hardness;
  s.seed = c.seed;
  s.domain_tag = a.domain_tag;
  s.domain_shift = a.domain_shift;
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  write_cache(a.out, s.spec, s.d_wk, generate_synthetic(s));
}

// -------------------------------------------------------------------- label

struct LabelArgs {
  ConfigFlags cfg;
  std::string boxes;
  std::string cache;
  std::string out;
  std::optional<double> iou;
  std::optional<double> confidence;
  bool force = false;
};

void cmd_label(const LabelArgs& a) {
  RunConfig c = a.cfg.resolve();
  if (a.iou) c.label.iou_threshold = *a.iou;
  if (a.confidence) c.label.confidence_threshold = *a.confidence;
  c.label.validate();
  if (!a.cache.empty() && a.out.empty()) throw UsageError("--cache needs --out");
  check_fresh(a.out, a.force);
  check_input(a.boxes);
  std::ifstream in(a.boxes);
  const auto images = parse_box_file(in);

  std::map<std::string, LabelResult> labels;
  for (const auto& img : images) {
    if (!labels.emplace(img.image_id, match_and_label(img.gt, img.preds, c.label)).second) {
      throw BoxFormatError(0, "image id '" + img.image_id + "' appears twice");
    }
  }

  if (a.cache.empty()) {
    std::ostringstream tsv;
    tsv << "id\tgt\tmatched\tpred\tlabel\n";
    for (const auto& img : images) {
      const auto& l = labels.at(img.image_id);
      tsv << img.image_id << '\t' << l.gt_count << '\t' << l.matched_count << '\t' << l.pred_count
          << '\t' << int{l.label} << '\n';
    }
    if (a.out.empty()) {
      std::cout << tsv.str();
    } else {
      write_text(a.out, tsv.str());
    }
    return;
  }

  CacheContents cache = load_cache(a.cache);
  if (cache.records.size() != labels.size()) {
    throw CacheError(CacheError::Kind::kInvariant,
                     "box file has " + std::to_string(labels.size()) + " images but the cache has " +
                         std::to_string(cache.records.size()) + " records");
  }
  for (auto& r : cache.records) {
    const auto it = labels.find(r.record_id);
    if (it == labels.end()) {
      throw CacheError(CacheError::Kind::kInvariant, "no boxes for record '" + r.record_id + "'");
    }
    r.label = it->second.label;
    r.gt_count = it->second.gt_count;
    r.matched_count = it->second.matched_count;
    r.pred_count = it->second.pred_count;
  }
  write_cache(a.out, cache.spec, cache.d_wk, cache.records);
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  ConfigFlags cfg;
  std::string cache;
  std::string out;
  std::string log;
  std::string val_out;
  std::optional<std::uint32_t> epochs;
  std::optional<double> lr;
  std::optional<std::string> optimizer;
  std::optional<std::uint32_t> batch_size;
  std::optional<std::string> head;
  std::optional<std::uint32_t> embed_dim;
  bool no_attn = false;
  bool quiet = false;
  bool force = false;
};

void cmd_train(const TrainArgs& a) {
  RunConfig c = a.cfg.resolve();
  if (a.epochs) {
    c.train.epochs = *a.epochs;
    c.train.t_max = *a.epochs;
  }
  if (a.lr) c.train.lr = *a.lr;
  if (a.optimizer) c.train.optimizer = parse_optimizer(*a.optimizer);
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.head) c.arch.head_kind = parse_head_kind(*a.head);
  if (a.embed_dim) c.arch.embed_dim = *a.embed_dim;
  if (a.no_attn) {
    c.arch.use_pre_fusion_attn = false;
    c.arch.use_post_self_attn = false;
    c.arch.use_post_cross_attn = false;
  }
  c.train.seed = c.seed;
  c.train.validate();
  c.arch.validate(c.spec());
  check_fresh(a.out, a.force);
  check_fresh(a.log, a.force);
  check_fresh(a.val_out, a.force);

  CacheContents cache = load_cache(a.cache);
  if (cache.spec != c.spec() || cache.d_wk != c.d_wk()) {
    throw CacheError(CacheError::Kind::kShapeMismatch,
                     "cache pyramid does not match preset '" + c.preset + "'");
  }
  std::vector<FeatureRecord> train_set = std::move(cache.records);
  if (!a.val_out.empty()) {
    auto [tr, val] = split_train_val(std::move(train_set), c.train.split_fraction, c.seed);
    write_cache(a.val_out, cache.spec, cache.d_wk, val);
    train_set = std::move(tr);
  }

  std::ostringstream log;
  auto result = train(train_set, c.train, c.arch, cache.spec, cache.d_wk, [&](const EpochLog& e) {
    const std::string line = format_epoch_log(e);
    log << line << '\n';
    if (!a.quiet) std::cerr << line << '\n';
  });
  save_model(a.out, result.model);
  if (!a.log.empty()) write_text(a.log, log.str());
}

// ------------------------------------------------------------- fit-baseline

struct FitBaselineArgs {
  ConfigFlags cfg;
  std::string method;
  std::string cache;
  std::string out;
  std::uint32_t k = 5;
  std::uint32_t q = 100;
  bool force = false;
};

void cmd_fit_baseline(const FitBaselineArgs& a) {
  const RunConfig c = a.cfg.resolve();
  const BaselineKind kind = parse_baseline(a.method);
  check_fresh(a.out, a.force);
  const CacheContents cache = load_cache(a.cache);
  BaselineConfig bc;
  bc.knn_k = a.k;
  bc.vim_q = a.q;
  bc.mlp.seed = c.seed;
  save_baseline(a.out, fit_baseline(kind, cache.records, bc));
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  ConfigFlags cfg;
  std::string model;
  std::string baseline;
  std::string cache;
  std::string out;
  bool force = false;
};

void cmd_calibrate(const CalibrateArgs& a) {
  const RunConfig c = a.cfg.resolve();
  check_fresh(a.out, a.force);
  const Scorer s = pick_scorer(a.model, a.baseline);
  const auto scored = score_all(s, load_cache(a.cache).records);
  const CalibratedGate g = calibrate(scored, c.target_fpr);
  const std::string text = gate_to_json(s.method, g);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  ConfigFlags cfg;
  std::string model;
  std::vector<std::string> baselines;
  std::string id_cache;
  std::string id_tag = "id";
  std::string calib_cache;
  std::vector<std::string> domains;  // tag=path
  std::vector<std::string> gates;
  std::string report;
  std::string curves;
  std::string table;
  bool force = false;
};

void cmd_eval(const EvalArgs& a) {
  const RunConfig c = a.cfg.resolve();
  if (a.model.empty() && a.baselines.empty()) throw UsageError("eval needs --model or --baseline");
  if (a.report.empty() && a.table.empty() && a.curves.empty()) {
    throw UsageError("eval needs at least one of --report, --curves, --table");
  }
  check_fresh(a.report, a.force);
  check_fresh(a.curves, a.force);
  check_fresh(a.table, a.force);

  std::vector<std::pair<std::string, std::string>> domain_paths{{a.id_tag, a.id_cache}};
  for (const auto& d : a.domains) {
    const auto eq = d.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == d.size()) {
      throw UsageError("--domain expects TAG=PATH, got '" + d + "'");
    }
    domain_paths.emplace_back(d.substr(0, eq), d.substr(eq + 1));
  }
  for (std::size_t i = 0; i < domain_paths.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (domain_paths[i].first == domain_paths[j].first) {
        throw UsageError("domain tag '" + domain_paths[i].first + "' given twice");
      }
    }
  }

  std::map<std::string, CalibratedGate> gates;
  for (const auto& g : a.gates) {
    auto [method, gate] = load_gate(g);
    if (!gates.emplace(method, gate).second) throw UsageError("two gates for method '" + method + "'");
  }

  std::vector<Scorer> scorers;
  if (!a.model.empty()) scorers.push_back(model_scorer(a.model));
  for (const auto& b : a.baselines) scorers.push_back(baseline_scorer(b));
  for (std::size_t i = 0; i < scorers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (scorers[i].method == scorers[j].method) {
        throw UsageError("method '" + scorers[i].method + "' given twice");
      }
    }
  }
  for (const auto& [method, gate] : gates) {
    const bool used = std::any_of(scorers.begin(), scorers.end(),
                                  [&m = method](const Scorer& s) { return s.method == m; });
    if (!used) throw UsageError("gate for '" + method + "' matches no evaluated method");
  }

  std::vector<CacheContents> caches;
  for (const auto& [tag, path] : domain_paths) caches.push_back(load_cache(path));
  std::optional<CacheContents> calib;
  if (!a.calib_cache.empty()) calib = load_cache(a.calib_cache);

  EvalReport report;
  for (const auto& s : scorers) {
    std::vector<std::pair<std::string, std::vector<ScoredRecord>>> scored;
    for (std::size_t i = 0; i < caches.size(); ++i) {
      auto recs = score_all(s, caches[i].records);
      for (auto& r : recs) r.domain_tag = domain_paths[i].first;
      scored.emplace_back(domain_paths[i].first, std::move(recs));
    }
    CalibratedGate gate;
    if (const auto it = gates.find(s.method); it != gates.end()) {
      gate = it->second;
    } else if (calib) {
      gate = calibrate(score_all(s, calib->records), c.target_fpr);
    } else {
      gate = calibrate(scored.front().second, c.target_fpr);
    }
    report.methods.push_back(evaluate_method(s.method, gate, scored));
  }

  if (!a.report.empty()) write_text(a.report, report_to_json(report));
  if (!a.curves.empty()) write_text(a.curves, curves_to_csv(report));
  if (!a.table.empty()) {
    write_text(a.table, format_table(report));
  } else {
    std::cout << format_table(report);
  }
}

// --------------------------------------------------------------------- gate

struct GateArgs {
  std::string model;
  std::string baseline;
  std::string gate;
  std::string cache;
};

void cmd_gate(const GateArgs& a) {
  const Scorer s = pick_scorer(a.model, a.baseline);
  const auto [method, gate] = load_gate(a.gate);
  if (method != s.method) {
    throw UsageError("gate was calibrated for '" + method + "', not '" + s.method + "'");
  }
  check_input(a.cache);
  CacheReader reader(a.cache);
  std::cout.precision(17);
  while (auto r = reader.next()) {
    const double score = s.fn(*r);
    if (!std::isfinite(score)) {
      throw NumericError("non-finite score for record '" + r->record_id + "'");
    }
    std::cout << r->record_id << '\t' << (gate_accepts(gate, score) ? "accept" : "reject") << '\t'
              << score << '\n';
  }
}

// ------------------------------------------------------------ print-config

void cmd_print_config(const ConfigFlags& f) { std::cout << run_config_to_json(f.resolve()); }

// ----------------------------------------------------------------- driver

std::string one_line(std::string s) {
  std::string out;
  for (char ch : s) {
    if (ch == '\n' || ch == '\r') {
      out += ' ';
    } else if (ch == '"' || ch == '\\') {
      out += '\\';
      out += ch;
    } else {
      out += ch;
    }
  }
  return out;
}

int fail(std::string kind, const std::string& msg, int code) {
  std::replace(kind.begin(), kind.end(), ' ', '_');
  std::cerr << "error: kind=" << kind << " msg=\"" << one_line(msg) << "\"\n";
  return code;
}

int run(int argc, char** argv) {
  CLI::App app{"Knowledge-guided failure prediction: train, calibrate and evaluate safety monitors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kgfp 1.0.0");

  GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic feature cache with planted failures");
  gs.cfg.add(gen);
  gen->add_option("--out", gs.out, "Output cache")->required();
  gen->add_option("--n", gs.n, "Record count")->check(CLI::PositiveNumber);
  gen->add_option("--unsafe-fraction", gs.unsafe_fraction, "Share of unsafe records")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--hardness", gs.hardness, "0 = separable, 1 = hard")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--domain-tag", gs.domain_tag, "Domain tag stored in each record");
  gen->add_option("--domain-shift", gs.domain_shift, "Feature shift strength (0 = in-distribution)")
      ->check(CLI::NonNegativeNumber);
  gen->add_flag("--force", gs.force, "Overwrite outputs");

  LabelArgs la;
  auto* lab = app.add_subcommand("label", "Label images from a box interchange file");
  la.cfg.add(lab);
  lab->add_option("--boxes", la.boxes, "Box interchange file")->required();
  lab->add_option("--cache", la.cache, "Cache whose counts and labels get replaced");
  lab->add_option("--out", la.out, "Output cache (with --cache) or TSV (default stdout)");
  lab->add_option("--iou", la.iou, "IoU threshold");
  lab->add_option("--confidence", la.confidence, "Prediction confidence threshold");
  lab->add_flag("--force", la.force, "Overwrite outputs");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the fusion monitor");
  ta.cfg.add(tr);
  tr->add_option("--cache", ta.cache, "Training cache")->required();
  tr->add_option("--out", ta.out, "Model checkpoint")->required();
  tr->add_option("--log", ta.log, "Per-epoch JSON lines");
  tr->add_option("--val-out", ta.val_out, "Split off a validation cache here before training");
  tr->add_option("--epochs", ta.epochs, "Epochs (also sets the cosine period)");
  tr->add_option("--lr", ta.lr, "Base learning rate");
  tr->add_option("--optimizer", ta.optimizer, "lars or adam")->check(CLI::IsMember({"lars", "adam"}));
  tr->add_option("--batch-size", ta.batch_size, "Batch size");
  tr->add_option("--head", ta.head, "cosine or mlp")->check(CLI::IsMember({"cosine", "mlp"}));
  tr->add_option("--embed-dim", ta.embed_dim, "Shared embedding width d");
  tr->add_flag("--no-attn", ta.no_attn, "Disable every attention stage");
  tr->add_flag("--quiet", ta.quiet, "Do not echo the epoch log");
  tr->add_flag("--force", ta.force, "Overwrite outputs");

  FitBaselineArgs fa;
  auto* fit = app.add_subcommand("fit-baseline", "Fit an OOD baseline");
  fa.cfg.add(fit);
  fit->add_option("--method", fa.method, "gram, knn, vim, dino-mlp or dino-vim")
      ->required()
      ->check(CLI::IsMember({"gram", "knn", "vim", "dino-mlp", "dino-vim"}));
  fit->add_option("--cache", fa.cache, "Training cache")->required();
  fit->add_option("--out", fa.out, "Baseline artifact")->required();
  fit->add_option("--k", fa.k, "KNN neighbour rank")->check(CLI::PositiveNumber);
  fit->add_option("--q", fa.q, "ViM principal dimensions")->check(CLI::PositiveNumber);
  fit->add_flag("--force", fa.force, "Overwrite outputs");

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Pick the gate threshold on a validation cache");
  ca.cfg.add(cal);
  cal->add_option("--target-fpr", ca.cfg.target_fpr, "Target share of safe images rejected");
  cal->add_option("--model", ca.model, "Model checkpoint");
  cal->add_option("--baseline", ca.baseline, "Baseline artifact");
  cal->add_option("--cache", ca.cache, "Validation cache")->required();
  cal->add_option("--out", ca.out, "Gate file (default stdout)");
  cal->add_flag("--force", ca.force, "Overwrite outputs");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate monitors on ID and shifted-domain caches");
  ea.cfg.add(ev);
  ev->add_option("--target-fpr", ea.cfg.target_fpr, "Target FPR when calibrating here");
  ev->add_option("--model", ea.model, "Model checkpoint");
  ev->add_option("--baseline", ea.baselines, "Baseline artifact (repeatable)");
  ev->add_option("--id-cache", ea.id_cache, "In-distribution evaluation cache")->required();
  ev->add_option("--id-tag", ea.id_tag, "Report name of the ID domain");
  ev->add_option("--domain", ea.domains, "Shifted domain as TAG=PATH (repeatable)");
  ev->add_option("--calib-cache", ea.calib_cache, "Calibrate ungated methods here (default: ID cache)");
  ev->add_option("--gate", ea.gates, "Gate file (repeatable, matched by method)");
  ev->add_option("--report", ea.report, "JSON report");
  ev->add_option("--curves", ea.curves, "Recall/precision vs FPR CSV");
  ev->add_option("--table", ea.table, "Text table (default stdout)");
  ev->add_flag("--force", ea.force, "Overwrite outputs");

  GateArgs ga;
  auto* gt = app.add_subcommand("gate", "Stream a cache and print accept/reject per record");
  gt->add_option("--model", ga.model, "Model checkpoint");
  gt->add_option("--baseline", ga.baseline, "Baseline artifact");
  gt->add_option("--gate", ga.gate, "Gate file")->required();
  gt->add_option("--cache", ga.cache, "Cache to gate")->required();

  ConfigFlags pc;
  auto* pcfg = app.add_subcommand("print-config", "Print the fully expanded run config");
  pc.add(pcfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }

  try {
    if (*gen) cmd_gen_synth(gs);
    if (*lab) cmd_label(la);
    if (*tr) cmd_train(ta);
    if (*fit) cmd_fit_baseline(fa);
    if (*cal) cmd_calibrate(ca);
    if (*ev) cmd_eval(ea);
    if (*gt) cmd_gate(ga);
    if (*pcfg) cmd_print_config(pc);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), kExitUsage);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kExitUsage);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kExitNumeric);
  } catch (const CacheError& e) {
    return fail(CacheError::kind_name(e.kind()), e.what(), kExitData);
  } catch (const ContainerError& e) {
    return fail("container", e.what(), kExitData);
  } catch (const BoxFormatError& e) {
    return fail("box_format", e.what(), kExitData);
  } catch (const std::invalid_argument& e) {
    return fail("data", e.what(), kExitData);
  } catch (const std::exception& e) {
    return fail("io", e.what(), kExitData);
  }
  return 0;
}

}  // namespace
}  // namespace kgfp

int main(int argc, char** argv) { return kgfp::run(argc, argv); }
