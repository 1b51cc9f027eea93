// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/ood_baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "kgfp/autodiff.hpp"
#include "kgfp/container.hpp"
#include "kgfp/rng.hpp"
#include "kgfp/trainer.hpp"

namespace kgfp {

namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

void require_safe(std::span<const FeatureRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": empty fit set");
  for (const auto& r : records) {
    if (r.label != 0) {
      throw std::invalid_argument(std::string(what) + ": fit set must contain safe records only ('" +
                                  r.record_id + "' is unsafe)");
    }
  }
}

void require_levels(const FeatureRecord& r, std::size_t levels, const char* what) {
  if (r.pyramid.size() != levels) {
    throw std::invalid_argument(std::string(what) + ": record '" + r.record_id +
                                "' has the wrong number of pyramid levels");
  }
}

MatD level_matrix(const TensorF& level) {
  if (level.rank() != 3) throw ShapeError("pyramid level must be [C,H,W]");
  const std::size_t c = level.dim(0), hw = level.dim(1) * level.dim(2);
  MatD m(c, hw);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < hw; ++j) m(i, j) = level[i * hw + j];
  }
  return m;
}

double signed_pow(double x, int p) {
  const double a = std::pow(std::abs(x), p);
  return x < 0 ? -a : a;
}

TensorF to_tensor(const std::vector<double>& v) {
  TensorF t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

std::vector<double> to_vector(const TensorF& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

}  // namespace

// --- GRAM -----------------------------------------------------------------

std::vector<double> gram_features(const TensorF& level, int order) {
  if (order < 1 || order > kGramMaxOrder) throw std::invalid_argument("gram order out of range");
  MatD f = level_matrix(level).unaryExpr([order](double x) { return signed_pow(x, order); });
  const MatD g = f * f.transpose() / static_cast<double>(f.cols());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g.rows() * (g.rows() + 1) / 2));
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = i; j < g.cols(); ++j) out.push_back(g(i, j));
  }
  return out;
}

GramStats gram_fit(std::span<const FeatureRecord> safe) {
  require_safe(safe, "gram_fit");
  const std::size_t levels = safe.front().pyramid.size();
  GramStats s;
  s.min.resize(levels);
  s.max.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    s.channels.push_back(static_cast<std::uint32_t>(safe.front().pyramid[l].dim(0)));
  }
  for (std::size_t l = 0; l < levels; ++l) {
    for (int p = 1; p <= kGramMaxOrder; ++p) {
      std::vector<double> lo, hi;
      for (const auto& r : safe) {
        require_levels(r, levels, "gram_fit");
        const std::vector<double> g = gram_features(r.pyramid[l], p);
        if (lo.empty()) {
          lo = hi = g;
          continue;
        }
        if (g.size() != lo.size()) throw ShapeError("gram_fit: inconsistent channel counts");
        for (std::size_t i = 0; i < g.size(); ++i) {
          lo[i] = std::min(lo[i], g[i]);
          hi[i] = std::max(hi[i], g[i]);
        }
      }
      s.min[l].push_back(to_tensor(lo));
      s.max[l].push_back(to_tensor(hi));
    }
  }
  return s;
}

double gram_score(const GramStats& stats, const FeatureRecord& record) {
  require_levels(record, stats.min.size(), "gram_score");
  double deviation = 0;
  for (std::size_t l = 0; l < stats.min.size(); ++l) {
    for (int p = 1; p <= kGramMaxOrder; ++p) {
      const std::vector<double> g = gram_features(record.pyramid[l], p);
      const TensorF& lo = stats.min[l][static_cast<std::size_t>(p - 1)];
      const TensorF& hi = stats.max[l][static_cast<std::size_t>(p - 1)];
      if (g.size() != lo.size()) throw ShapeError("gram_score: channel count mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double mn = lo[i], mx = hi[i];
        if (g[i] < mn) {
          deviation += (mn - g[i]) / (std::abs(mn) + kGramEps);
        } else if (g[i] > mx) {
          deviation += (g[i] - mx) / (std::abs(mx) + kGramEps);
        }
      }
    }
  }
  return -deviation;
}

// --- k-NN -----------------------------------------------------------------

std::vector<double> pooled_unit(const TensorF& level) {
  const MatD m = level_matrix(level);
  VecD v = m.rowwise().mean();
  const double n = v.norm();
  if (n > 0) v /= n;
  return {v.data(), v.data() + v.size()};
}

KnnIndex knn_fit(std::span<const FeatureRecord> safe, std::uint32_t k) {
  require_safe(safe, "knn_fit");
  if (k == 0) throw std::invalid_argument("knn_fit: k must be positive");
  if (safe.size() < k) {
    throw std::invalid_argument("knn_fit: fit set of " + std::to_string(safe.size()) +
                                " is smaller than k = " + std::to_string(k));
  }
  const std::size_t levels = safe.front().pyramid.size();
  KnnIndex idx;
  idx.k = k;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t c = safe.front().pyramid[l].dim(0);
    TensorF bank({safe.size(), c});
    for (std::size_t r = 0; r < safe.size(); ++r) {
      require_levels(safe[r], levels, "knn_fit");
      const std::vector<double> u = pooled_unit(safe[r].pyramid[l]);
      if (u.size() != c) throw ShapeError("knn_fit: inconsistent channel counts");
      for (std::size_t i = 0; i < c; ++i) bank[r * c + i] = static_cast<float>(u[i]);
    }
    idx.bank.push_back(std::move(bank));
  }
  return idx;
}

double knn_score(const KnnIndex& index, const FeatureRecord& record) {
  require_levels(record, index.bank.size(), "knn_score");
  double total = 0;
  std::vector<double> dist;
  for (std::size_t l = 0; l < index.bank.size(); ++l) {
    const TensorF& bank = index.bank[l];
    const std::size_t n = bank.dim(0), c = bank.dim(1);
    const std::vector<double> u = pooled_unit(record.pyramid[l]);
    if (u.size() != c) throw ShapeError("knn_score: channel count mismatch");
    dist.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0;
      for (std::size_t i = 0; i < c; ++i) {
        const double d = u[i] - static_cast<double>(bank[r * c + i]);
        acc += d * d;
      }
      dist[r] = std::sqrt(acc);
    }
    std::nth_element(dist.begin(), dist.begin() + (index.k - 1), dist.end());
    total += dist[index.k - 1];
  }
  return -total / static_cast<double>(index.bank.size());
}

// --- ViM ------------------------------------------------------------------

VimSpace vim_fit_space(std::span<const std::vector<double>> rows, std::uint32_t q) {
  if (rows.empty()) throw std::invalid_argument("vim_fit: empty fit set");
  const std::size_t dim = rows.front().size();
  if (dim == 0) throw std::invalid_argument("vim_fit: zero-dimensional features");
  MatD x(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dim) throw ShapeError("vim_fit: inconsistent feature widths");
    for (std::size_t i = 0; i < dim; ++i) x(r, i) = rows[r][i];
  }
  const VecD mean = x.colwise().mean();
  x.rowwise() -= mean.transpose();
  const MatD cov = x.transpose() * x / static_cast<double>(rows.size());
  Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
  // Eigen sorts eigenvalues ascending.
  const VecD& values = eig.eigenvalues();
  const double top = std::max(values(values.size() - 1), 0.0);
  std::size_t keep = std::min<std::size_t>(q, dim - 1);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) rank += values(i) > 1e-10 * top && top > 0;
  keep = std::min(keep, rank);

  VimSpace s;
  s.mean = TensorF({dim});
  for (std::size_t i = 0; i < dim; ++i) s.mean[i] = static_cast<float>(mean(i));
  if (keep > 0) {
    s.principal = TensorF({dim, keep});
    for (std::size_t j = 0; j < keep; ++j) {
      const auto col = eig.eigenvectors().col(static_cast<Eigen::Index>(dim - 1 - j));
      for (std::size_t i = 0; i < dim; ++i) {
        s.principal[i * keep + j] = static_cast<float>(col(static_cast<Eigen::Index>(i)));
      }
    }
  }
  return s;
}

double vim_residual(const VimSpace& space, std::span<const double> x) {
  const std::size_t dim = space.mean.size();
  if (x.size() != dim) throw ShapeError("vim: feature width mismatch");
  VecD c(dim);
  for (std::size_t i = 0; i < dim; ++i) c(i) = x[i] - static_cast<double>(space.mean[i]);
  if (space.principal.empty()) return c.norm();
  const std::size_t q = space.principal.dim(1);
  MatD p(dim, q);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < q; ++j) p(i, j) = space.principal[i * q + j];
  }
  return (c - p * (p.transpose() * c)).norm();
}

namespace {

std::vector<double> pooled(const TensorF& level) {
  const VecD v = level_matrix(level).rowwise().mean();
  return {v.data(), v.data() + v.size()};
}

}  // namespace

VimModel vim_fit(std::span<const FeatureRecord> safe, std::uint32_t q) {
  require_safe(safe, "vim_fit");
  const std::size_t levels = safe.front().pyramid.size();
  VimModel m;
  for (std::size_t l = 0; l < levels; ++l) {
    std::vector<std::vector<double>> rows;
    for (const auto& r : safe) {
      require_levels(r, levels, "vim_fit");
      rows.push_back(pooled(r.pyramid[l]));
    }
    m.spaces.push_back(vim_fit_space(rows, q));
  }
  return m;
}

VimModel dino_vim_fit(std::span<const FeatureRecord> safe, std::uint32_t q) {
  require_safe(safe, "dino_vim_fit");
  std::vector<std::vector<double>> rows;
  for (const auto& r : safe) rows.push_back(to_vector(r.wk_embedding));
  VimModel m;
  m.on_wk = true;
  m.spaces.push_back(vim_fit_space(rows, q));
  return m;
}

double vim_score(const VimModel& model, const FeatureRecord& record) {
  if (model.on_wk) return -vim_residual(model.spaces.front(), to_vector(record.wk_embedding));
  require_levels(record, model.spaces.size(), "vim_score");
  double total = 0;
  for (std::size_t l = 0; l < model.spaces.size(); ++l) {
    total += vim_residual(model.spaces[l], pooled(record.pyramid[l]));
  }
  return -total;
}

// --- DINO-MLP -------------------------------------------------------------

namespace {

TensorF uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  TensorF t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

ad::Var<float> member_forward(ad::Tape<float>& tape, const std::vector<ad::Var<float>>& p,
                              const TensorF& wk) {
  ad::Var<float> x = tape.constant(wk);
  x = ad::reshape(x, {1, wk.size()});
  x = ad::gelu(ad::linear(x, p[0], p[1]));
  x = ad::linear(x, p[2], p[3]);
  return ad::reshape(ad::sigmoid(x), {1});
}

}  // namespace

MlpMember dino_mlp_fit_member(std::span<const FeatureRecord> labeled,
                              const MlpEnsembleConfig& cfg, std::uint64_t seed) {
  if (labeled.empty()) throw std::invalid_argument("dino_mlp_fit: empty fit set");
  std::size_t unsafe = 0;
  for (const auto& r : labeled) unsafe += r.label;
  if (unsafe == 0 || unsafe == labeled.size()) {
    throw std::invalid_argument("dino_mlp_fit: fit set contains a single class");
  }
  if (cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch_size == 0) {
    throw std::invalid_argument("dino_mlp_fit: hidden, epochs and batch_size must be positive");
  }
  const std::size_t d = labeled.front().wk_embedding.size();
  for (const auto& r : labeled) {
    if (r.wk_embedding.size() != d) throw ShapeError("dino_mlp_fit: inconsistent wk widths");
  }
  const Rng root(seed);
  Rng init = root.split(1);
  MlpMember m;
  m.w1 = uniform_init({d, cfg.hidden}, d, init);
  m.b1 = uniform_init({cfg.hidden}, d, init);
  m.w2 = uniform_init({cfg.hidden, 1}, cfg.hidden, init);
  m.b2 = uniform_init({1}, cfg.hidden, init);
  std::vector<TensorF*> params{&m.w1, &m.b1, &m.w2, &m.b2};

  TrainConfig tc;
  tc.weight_decay = cfg.weight_decay;
  std::vector<TensorF> mom, var;
  for (TensorF* p : params) {
    mom.emplace_back(p->shape());
    var.emplace_back(p->shape());
  }

  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  ad::Tape<float> tape;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle = root.split(1000 + epoch);
    shuffle.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const float inv_b = 1.0f / static_cast<float>(end - start);
      std::vector<TensorF> grads;
      for (TensorF* p : params) grads.emplace_back(p->shape());
      for (std::size_t i = start; i < end; ++i) {
        const FeatureRecord& r = labeled[order[i]];
        tape.clear();
        std::vector<ad::Var<float>> vars;
        for (TensorF* p : params) vars.push_back(tape.bind(*p));
        const ad::Var<float> loss = ad::bce(member_forward(tape, vars, r.wk_embedding), r.label);
        if (!std::isfinite(loss.value()[0])) throw NumericError("dino_mlp_fit: non-finite loss");
        tape.backward(loss);
        for (std::size_t k = 0; k < params.size(); ++k) {
          const TensorF* g = tape.grad(vars[k]);
          if (g == nullptr) continue;
          for (std::size_t e = 0; e < g->size(); ++e) grads[k][e] += (*g)[e] * inv_b;
        }
      }
      clip_gradients(std::span<TensorF>(grads), 1.0);
      ++step;
      for (std::size_t k = 0; k < params.size(); ++k) {
        adam_update(*params[k], grads[k], mom[k], var[k], step, cfg.lr, tc);
      }
    }
  }
  return m;
}

MlpEnsemble dino_mlp_fit(std::span<const FeatureRecord> labeled, const MlpEnsembleConfig& cfg) {
  if (cfg.members == 0) throw std::invalid_argument("dino_mlp_fit: members must be positive");
  MlpEnsemble e;
  const Rng root(cfg.seed);
  for (std::uint32_t i = 0; i < cfg.members; ++i) {
    e.members.push_back(dino_mlp_fit_member(labeled, cfg, root.split(i).next_u64()));
  }
  return e;
}

double mlp_member_probability(const MlpMember& m, const TensorF& wk) {
  if (wk.size() != m.w1.dim(0)) throw ShapeError("dino_mlp: wk width mismatch");
  ad::Tape<float> tape;
  const std::vector<ad::Var<float>> vars{tape.bind(m.w1, false), tape.bind(m.b1, false),
                                         tape.bind(m.w2, false), tape.bind(m.b2, false)};
  return member_forward(tape, vars, wk).value()[0];
}

double dino_mlp_score(const MlpEnsemble& ens, const FeatureRecord& record) {
  if (ens.members.empty()) throw std::invalid_argument("dino_mlp_score: empty ensemble");
  double p = 0;
  for (const auto& m : ens.members) p += mlp_member_probability(m, record.wk_embedding);
  return -p / static_cast<double>(ens.members.size());
}

// --- dispatch and IO ------------------------------------------------------

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kGram: return "gram";
    case BaselineKind::kKnn: return "knn";
    case BaselineKind::kVim: return "vim";
    case BaselineKind::kDinoMlp: return "dino-mlp";
    case BaselineKind::kDinoVim: return "dino-vim";
  }
  return "?";
}

BaselineKind parse_baseline(const std::string& name) {
  for (BaselineKind k : {BaselineKind::kGram, BaselineKind::kKnn, BaselineKind::kVim,
                         BaselineKind::kDinoMlp, BaselineKind::kDinoVim}) {
    if (name == baseline_name(k)) return k;
  }
  throw std::invalid_argument("unknown baseline '" + name +
                              "' (gram|knn|vim|dino-mlp|dino-vim)");
}

Baseline fit_baseline(BaselineKind kind, std::span<const FeatureRecord> records,
                      const BaselineConfig& cfg) {
  Baseline b;
  b.kind = kind;
  if (kind == BaselineKind::kDinoMlp) {
    b.model = dino_mlp_fit(records, cfg.mlp);
    return b;
  }
  std::vector<FeatureRecord> safe;
  for (const auto& r : records) {
    if (r.label == 0) safe.push_back(r);
  }
  switch (kind) {
    case BaselineKind::kGram: b.model = gram_fit(safe); break;
    case BaselineKind::kKnn: b.model = knn_fit(safe, cfg.knn_k); break;
    case BaselineKind::kVim: b.model = vim_fit(safe, cfg.vim_q); break;
    case BaselineKind::kDinoVim: b.model = dino_vim_fit(safe, cfg.vim_q); break;
    case BaselineKind::kDinoMlp: break;
  }
  return b;
}

double baseline_score(const Baseline& b, const FeatureRecord& record) {
  switch (b.kind) {
    case BaselineKind::kGram: return gram_score(std::get<GramStats>(b.model), record);
    case BaselineKind::kKnn: return knn_score(std::get<KnnIndex>(b.model), record);
    case BaselineKind::kVim:
    case BaselineKind::kDinoVim: return vim_score(std::get<VimModel>(b.model), record);
    case BaselineKind::kDinoMlp: return dino_mlp_score(std::get<MlpEnsemble>(b.model), record);
  }
  throw std::logic_error("unreachable");
}

void save_baseline(const std::string& path, const Baseline& b) {
  nlohmann::ordered_json meta{{"kind", baseline_name(b.kind)}};
  Container c;
  auto put = [&](const std::string& name, const TensorF& t) { c.tensors.push_back({name, t}); };
  switch (b.kind) {
    case BaselineKind::kGram: {
      const auto& s = std::get<GramStats>(b.model);
      meta["channels"] = s.channels;
      meta["orders"] = kGramMaxOrder;
      for (std::size_t l = 0; l < s.min.size(); ++l) {
        for (std::size_t p = 0; p < s.min[l].size(); ++p) {
          const std::string prefix = "gram." + std::to_string(l) + "." + std::to_string(p + 1);
          put(prefix + ".min", s.min[l][p]);
          put(prefix + ".max", s.max[l][p]);
        }
      }
      break;
    }
    case BaselineKind::kKnn: {
      const auto& k = std::get<KnnIndex>(b.model);
      meta["k"] = k.k;
      meta["levels"] = k.bank.size();
      for (std::size_t l = 0; l < k.bank.size(); ++l) put("knn." + std::to_string(l), k.bank[l]);
      break;
    }
    case BaselineKind::kVim:
    case BaselineKind::kDinoVim: {
      const auto& v = std::get<VimModel>(b.model);
      std::vector<std::size_t> q;
      for (std::size_t s = 0; s < v.spaces.size(); ++s) {
        const std::string prefix = "vim." + std::to_string(s);
        put(prefix + ".mean", v.spaces[s].mean);
        q.push_back(v.spaces[s].principal.empty() ? 0 : v.spaces[s].principal.dim(1));
        if (!v.spaces[s].principal.empty()) put(prefix + ".principal", v.spaces[s].principal);
      }
      meta["q"] = q;
      break;
    }
    case BaselineKind::kDinoMlp: {
      const auto& e = std::get<MlpEnsemble>(b.model);
      meta["members"] = e.members.size();
      for (std::size_t i = 0; i < e.members.size(); ++i) {
        const std::string prefix = "mlp." + std::to_string(i);
        put(prefix + ".w1", e.members[i].w1);
        put(prefix + ".b1", e.members[i].b1);
        put(prefix + ".w2", e.members[i].w2);
        put(prefix + ".b2", e.members[i].b2);
      }
      break;
    }
  }
  c.metadata = meta.dump();
  write_container(path, kBaselineMagic, c);
}

Baseline load_baseline(const std::string& path) {
  const Container c = read_container(path, kBaselineMagic);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(c.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(path + ": bad baseline metadata: " + e.what());
  }
  try {
    Baseline b;
    b.kind = parse_baseline(meta.at("kind").get<std::string>());
    switch (b.kind) {
      case BaselineKind::kGram: {
        GramStats s;
        s.channels = meta.at("channels").get<std::vector<std::uint32_t>>();
        s.min.resize(s.channels.size());
        s.max.resize(s.channels.size());
        for (std::size_t l = 0; l < s.channels.size(); ++l) {
          const std::size_t n = std::size_t{s.channels[l]} * (s.channels[l] + 1) / 2;
          for (int p = 1; p <= kGramMaxOrder; ++p) {
            const std::string prefix = "gram." + std::to_string(l) + "." + std::to_string(p);
            s.min[l].push_back(c.get(prefix + ".min"));
            s.max[l].push_back(c.get(prefix + ".max"));
            if (s.min[l].back().size() != n || s.max[l].back().size() != n) {
              throw ContainerError(path + ": gram bounds have the wrong size");
            }
          }
        }
        b.model = std::move(s);
        break;
      }
      case BaselineKind::kKnn: {
        KnnIndex k;
        k.k = meta.at("k").get<std::uint32_t>();
        const auto levels = meta.at("levels").get<std::size_t>();
        for (std::size_t l = 0; l < levels; ++l) {
          k.bank.push_back(c.get("knn." + std::to_string(l)));
          if (k.bank.back().rank() != 2 || k.bank.back().dim(0) < k.k) {
            throw ContainerError(path + ": knn bank has the wrong shape");
          }
        }
        b.model = std::move(k);
        break;
      }
      case BaselineKind::kVim:
      case BaselineKind::kDinoVim: {
        VimModel v;
        v.on_wk = b.kind == BaselineKind::kDinoVim;
        const auto q = meta.at("q").get<std::vector<std::size_t>>();
        for (std::size_t s = 0; s < q.size(); ++s) {
          const std::string prefix = "vim." + std::to_string(s);
          VimSpace sp;
          sp.mean = c.get(prefix + ".mean");
          if (q[s] > 0) {
            sp.principal = c.get(prefix + ".principal");
            if (sp.principal.rank() != 2 || sp.principal.dim(0) != sp.mean.size() ||
                sp.principal.dim(1) != q[s]) {
              throw ContainerError(path + ": vim principal directions have the wrong shape");
            }
          }
          v.spaces.push_back(std::move(sp));
        }
        if (v.spaces.empty()) throw ContainerError(path + ": vim model has no spaces");
        b.model = std::move(v);
        break;
      }
      case BaselineKind::kDinoMlp: {
        MlpEnsemble e;
        const auto n = meta.at("members").get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) {
          const std::string prefix = "mlp." + std::to_string(i);
          MlpMember m{c.get(prefix + ".w1"), c.get(prefix + ".b1"), c.get(prefix + ".w2"),
                      c.get(prefix + ".b2")};
          if (m.w1.rank() != 2 || m.w2.rank() != 2 || m.b1.size() != m.w1.dim(1) ||
              m.w2.dim(0) != m.w1.dim(1) || m.w2.dim(1) != 1 || m.b2.size() != 1) {
            throw ContainerError(path + ": mlp member has inconsistent shapes");
          }
          e.members.push_back(std::move(m));
        }
        if (e.members.empty()) throw ContainerError(path + ": empty mlp ensemble");
        b.model = std::move(e);
        break;
      }
    }
    if (c.tensors.size() == 0) throw ContainerError(path + ": baseline has no tensors");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(path + ": bad baseline metadata: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ContainerError(path + ": " + e.what());
  }
}

}  // namespace kgfp
