// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/fusion_net.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "kgfp/container.hpp"
#include "kgfp/rng.hpp"

namespace kgfp {

using ad::Var;
using nlohmann::json;

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::kCosine ? "cosine" : "mlp";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "cosine") return HeadKind::kCosine;
  if (name == "mlp") return HeadKind::kMlp;
  throw std::invalid_argument("unknown head kind '" + name + "' (cosine|mlp)");
}

ArchConfig ArchConfig::paper_scale() { return ArchConfig{}; }

ArchConfig ArchConfig::desk_scale() {
  ArchConfig a;
  a.common_channels = 16;
  a.patch_size = 2;
  a.heads = 4;
  a.token_dim = 16;
  a.prefusion_dim = 16;
  a.wk_hidden = {64, 48, 40, 32};
  a.mlp_head_hidden = 32;
  return a;
}

void ArchConfig::validate(const PyramidSpec& spec) const {
  spec.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("arch: " + m); };
  if (common_channels == 0 || patch_size == 0 || heads == 0 || token_dim == 0 ||
      prefusion_dim == 0 || ff_mult == 0 || mlp_head_hidden == 0) {
    fail("all widths must be positive");
  }
  if (embed_dim < 2) fail("embed_dim must be >= 2");
  if ((static_cast<std::size_t>(common_channels) * patch_size * patch_size) % heads != 0) {
    fail("common_channels * patch_size^2 must be divisible by heads");
  }
  if (token_dim % heads != 0) fail("token_dim must be divisible by heads");
  if (use_pre_fusion_attn && prefusion_dim % heads != 0) {
    fail("prefusion_dim must be divisible by heads");
  }
  for (auto w : wk_hidden) {
    if (w == 0) fail("wk_hidden widths must be positive");
  }
  const auto& finest = spec[0];
  if (finest.height % patch_size != 0 || finest.width % patch_size != 0) {
    fail("finest level " + std::to_string(finest.height) + "x" +
         std::to_string(finest.width) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
}

namespace {

json arch_to_json(const ArchConfig& a) {
  return json{{"common_channels", a.common_channels},
              {"patch_size", a.patch_size},
              {"heads", a.heads},
              {"n_self_blocks", a.n_self_blocks},
              {"n_cross_blocks", a.n_cross_blocks},
              {"embed_dim", a.embed_dim},
              {"token_dim", a.token_dim},
              {"prefusion_dim", a.prefusion_dim},
              {"ff_mult", a.ff_mult},
              {"wk_hidden", a.wk_hidden},
              {"mlp_head_hidden", a.mlp_head_hidden},
              {"use_pre_fusion_attn", a.use_pre_fusion_attn},
              {"use_post_self_attn", a.use_post_self_attn},
              {"use_post_cross_attn", a.use_post_cross_attn},
              {"head_kind", head_kind_name(a.head_kind)}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.common_channels = j.at("common_channels").get<std::uint32_t>();
  a.patch_size = j.at("patch_size").get<std::uint32_t>();
  a.heads = j.at("heads").get<std::uint32_t>();
  a.n_self_blocks = j.at("n_self_blocks").get<std::uint32_t>();
  a.n_cross_blocks = j.at("n_cross_blocks").get<std::uint32_t>();
  a.embed_dim = j.at("embed_dim").get<std::uint32_t>();
  a.token_dim = j.at("token_dim").get<std::uint32_t>();
  a.prefusion_dim = j.at("prefusion_dim").get<std::uint32_t>();
  a.ff_mult = j.at("ff_mult").get<std::uint32_t>();
  a.wk_hidden = j.at("wk_hidden").get<std::vector<std::uint32_t>>();
  a.mlp_head_hidden = j.at("mlp_head_hidden").get<std::uint32_t>();
  a.use_pre_fusion_attn = j.at("use_pre_fusion_attn").get<bool>();
  a.use_post_self_attn = j.at("use_post_self_attn").get<bool>();
  a.use_post_cross_attn = j.at("use_post_cross_attn").get<bool>();
  a.head_kind = parse_head_kind(j.at("head_kind").get<std::string>());
  return a;
}

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
void FusionModel<T>::add(const std::string& name, Tensor<T> value, ParamKind kind) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back({name, std::move(value), kind});
}

template <typename T>
std::size_t FusionModel<T>::index(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

template <typename T>
Tensor<T>& FusionModel<T>::param(const std::string& name) {
  return params_[index(name)].value;
}

template <typename T>
const Tensor<T>& FusionModel<T>::param(const std::string& name) const {
  return params_[index(name)].value;
}

template <typename T>
std::size_t FusionModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
FusionModel<T>::FusionModel(const ArchConfig& arch, const PyramidSpec& spec,
                            std::uint32_t d_wk, std::uint64_t seed)
    : arch_(arch), spec_(spec), d_wk_(d_wk) {
  arch.validate(spec);
  if (d_wk == 0) throw std::invalid_argument("d_wk must be positive");
  const Rng root(seed);
  std::uint64_t stream = 0;
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    add(prefix + ".w", uniform_init<T>({in, out}, in, root.split(++stream)), ParamKind::kWeight);
    add(prefix + ".b", uniform_init<T>({out}, in, root.split(++stream)), ParamKind::kBias);
  };
  auto norm = [&](const std::string& prefix, std::size_t n) {
    add(prefix + ".g", Tensor<T>({n}, T(1)), ParamKind::kNorm);
    add(prefix + ".b", Tensor<T>({n}, T(0)), ParamKind::kNorm);
  };
  auto attention = [&](const std::string& prefix, std::size_t width, std::size_t inner) {
    linear(prefix + ".q", width, inner);
    linear(prefix + ".k", width, inner);
    linear(prefix + ".v", width, inner);
    linear(prefix + ".o", inner, width);
  };
  auto transformer = [&](const std::string& prefix) {
    const std::size_t t = arch.token_dim;
    norm(prefix + ".ln1", t);
    attention(prefix + ".attn", t, t);
    norm(prefix + ".ln2", t);
    linear(prefix + ".ff1", t, t * arch.ff_mult);
    linear(prefix + ".ff2", t * arch.ff_mult, t);
  };

  const std::size_t cc = arch.common_channels;
  for (std::size_t l = 0; l < spec.size(); ++l) {
    const std::size_t cl = spec[l].channels;
    // Stored [Cc, Cl] so the projection is W * X[Cl, HW].
    add("proj." + std::to_string(l) + ".w", uniform_init<T>({cc, cl}, cl, root.split(++stream)),
        ParamKind::kWeight);
    add("proj." + std::to_string(l) + ".b", uniform_init<T>({cc}, cl, root.split(++stream)),
        ParamKind::kBias);
  }
  if (arch.use_pre_fusion_attn) attention("pre.attn", cc, arch.prefusion_dim);

  const std::size_t p = arch.patch_size;
  const std::size_t n_tokens = (spec[0].height / p) * (spec[0].width / p);
  linear("patch", cc * p * p, arch.token_dim);
  {
    Tensor<T> pos({n_tokens, arch.token_dim});
    Rng r = root.split(++stream);
    for (T& v : pos.values()) v = static_cast<T>(0.02 * r.normal());
    add("pos", std::move(pos), ParamKind::kWeight);
  }
  if (arch.use_post_self_attn) {
    for (std::uint32_t i = 0; i < arch.n_self_blocks; ++i) transformer("self." + std::to_string(i));
  }
  if (arch.use_post_cross_attn && arch.n_cross_blocks > 0) {
    linear("wk_token", d_wk, arch.token_dim);
    for (std::uint32_t i = 0; i < arch.n_cross_blocks; ++i) {
      transformer("cross." + std::to_string(i));
    }
  }
  linear("pr", arch.token_dim, arch.embed_dim);

  std::size_t in = d_wk;
  for (std::size_t j = 0; j < arch.wk_hidden.size(); ++j) {
    const std::string prefix = "wk." + std::to_string(j);
    linear(prefix, in, arch.wk_hidden[j]);
    norm(prefix + ".ln", arch.wk_hidden[j]);
    in = arch.wk_hidden[j];
  }
  linear("wk.out", in, arch.embed_dim);

  if (arch.head_kind == HeadKind::kMlp) {
    linear("head.1", 2 * std::size_t{arch.embed_dim}, arch.mlp_head_hidden);
    linear("head.2", arch.mlp_head_hidden, 1);
  }
}

template <typename T>
Bound<T> FusionModel<T>::bind(ad::Tape<T>& tape, bool requires_grad) const {
  Bound<T> b;
  b.tape = &tape;
  b.vars.reserve(params_.size());
  for (const auto& p : params_) b.vars.push_back(tape.bind(p.value, requires_grad));
  return b;
}

template <typename T>
ad::AttentionWeights<T> FusionModel<T>::attention(const Bound<T>& b,
                                                  const std::string& prefix) const {
  return {v(b, prefix + ".q.w"), v(b, prefix + ".q.b"), v(b, prefix + ".k.w"),
          v(b, prefix + ".k.b"), v(b, prefix + ".v.w"), v(b, prefix + ".v.b"),
          v(b, prefix + ".o.w"), v(b, prefix + ".o.b")};
}

template <typename T>
std::vector<Var<T>> FusionModel<T>::project(const Bound<T>& b,
                                            const std::vector<Var<T>>& pyramid) const {
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l < spec_.size(); ++l) {
    const auto& level = spec_[l];
    const std::size_t hw = std::size_t{level.height} * level.width;
    Var<T> x = ad::reshape(pyramid[l], {level.channels, hw});
    x = ad::matmul(v(b, "proj." + std::to_string(l) + ".w"), x);
    x = ad::add_channel(x, v(b, "proj." + std::to_string(l) + ".b"));
    out.push_back(ad::reshape(x, {arch_.common_channels, level.height, level.width}));
  }
  return out;
}

template <typename T>
std::vector<Var<T>> FusionModel<T>::pre_fusion_attention(
    const Bound<T>& b, const std::vector<Var<T>>& levels) const {
  if (!arch_.use_pre_fusion_attn) return levels;
  std::vector<Var<T>> pooled;
  for (const auto& x : levels) pooled.push_back(ad::mean_pool_spatial(x));
  const Var<T> tokens = ad::stack_rows<T>(pooled);
  const Var<T> mixed = ad::multi_head_attention(tokens, tokens, attention(b, "pre.attn"),
                                                arch_.heads);
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    out.push_back(ad::add_channel(levels[l], ad::row(mixed, l)));
  }
  return out;
}

template <typename T>
Var<T> FusionModel<T>::fuse(const std::vector<Var<T>>& levels) const {
  const std::size_t h = levels.front().shape()[1];
  const std::size_t w = levels.front().shape()[2];
  Var<T> acc = levels.front();
  for (std::size_t l = 1; l < levels.size(); ++l) {
    acc = ad::add(acc, ad::nearest_upsample(levels[l], h, w));
  }
  return acc;
}

template <typename T>
Var<T> FusionModel<T>::tokens(const Bound<T>& b, Var<T> fused) const {
  Var<T> x = ad::patchify(fused, arch_.patch_size);
  x = ad::linear(x, v(b, "patch.w"), v(b, "patch.b"));
  return ad::add(x, v(b, "pos"));
}

template <typename T>
Var<T> FusionModel<T>::block(const Bound<T>& b, const std::string& prefix, Var<T> x,
                             Var<T> kv, bool cross) const {
  const Var<T> h = ad::layer_norm(x, v(b, prefix + ".ln1.g"), v(b, prefix + ".ln1.b"));
  x = ad::add(x, ad::multi_head_attention(h, cross ? kv : h, attention(b, prefix + ".attn"),
                                          arch_.heads));
  Var<T> f = ad::layer_norm(x, v(b, prefix + ".ln2.g"), v(b, prefix + ".ln2.b"));
  f = ad::gelu(ad::linear(f, v(b, prefix + ".ff1.w"), v(b, prefix + ".ff1.b")));
  f = ad::linear(f, v(b, prefix + ".ff2.w"), v(b, prefix + ".ff2.b"));
  return ad::add(x, f);
}

template <typename T>
Var<T> FusionModel<T>::encode_pr(const Bound<T>& b, Var<T> tokens) const {
  Var<T> pooled = ad::reshape(ad::mean_rows(tokens), {1, arch_.token_dim});
  return ad::reshape(ad::linear(pooled, v(b, "pr.w"), v(b, "pr.b")), {arch_.embed_dim});
}

template <typename T>
Var<T> FusionModel<T>::encode_wk(const Bound<T>& b, Var<T> wk) const {
  Var<T> x = ad::reshape(wk, {1, d_wk_});
  for (std::size_t j = 0; j < arch_.wk_hidden.size(); ++j) {
    const std::string prefix = "wk." + std::to_string(j);
    x = ad::linear(x, v(b, prefix + ".w"), v(b, prefix + ".b"));
    x = ad::gelu(ad::layer_norm(x, v(b, prefix + ".ln.g"), v(b, prefix + ".ln.b")));
  }
  x = ad::linear(x, v(b, "wk.out.w"), v(b, "wk.out.b"));
  return ad::reshape(x, {arch_.embed_dim});
}

template <typename T>
Var<T> FusionModel<T>::mlp_head(const Bound<T>& b, Var<T> e_pr, Var<T> e_wk) const {
  const Var<T> parts[] = {e_pr, e_wk};
  Var<T> x = ad::reshape(ad::concat<T>(parts), {1, 2 * std::size_t{arch_.embed_dim}});
  x = ad::gelu(ad::linear(x, v(b, "head.1.w"), v(b, "head.1.b")));
  x = ad::linear(x, v(b, "head.2.w"), v(b, "head.2.b"));
  return ad::reshape(ad::sigmoid(x), {1});
}

template <typename T>
ad::Var<T> score_to_probability(ad::Var<T> s) {
  return ad::affine(s, T(-0.5), T(0.5));
}

double score_to_probability(double s) { return (1.0 - s) / 2.0; }

template <typename T>
ForwardResult<T> FusionModel<T>::forward(const Bound<T>& b, const FeatureRecord& record) const {
  check_record_shapes(record, spec_, d_wk_);
  ad::Tape<T>& tape = *b.tape;
  std::vector<Var<T>> pyramid;
  for (const auto& level : record.pyramid) pyramid.push_back(tape.constant(level.template cast<T>()));
  const Var<T> wk = tape.constant(record.wk_embedding.template cast<T>());

  std::vector<Var<T>> levels = project(b, pyramid);
  levels = pre_fusion_attention(b, levels);
  Var<T> x = tokens(b, fuse(levels));
  if (arch_.use_post_self_attn) {
    for (std::uint32_t i = 0; i < arch_.n_self_blocks; ++i) {
      x = block(b, "self." + std::to_string(i), x, x, false);
    }
  }
  if (arch_.use_post_cross_attn && arch_.n_cross_blocks > 0) {
    const Var<T> wk_tok =
        ad::linear(ad::reshape(wk, {1, d_wk_}), v(b, "wk_token.w"), v(b, "wk_token.b"));
    for (std::uint32_t i = 0; i < arch_.n_cross_blocks; ++i) {
      x = block(b, "cross." + std::to_string(i), x, wk_tok, true);
    }
  }
  ForwardResult<T> r;
  r.e_pr = encode_pr(b, x);
  r.e_wk = encode_wk(b, wk);
  r.cosine = ad::cosine_similarity(r.e_pr, r.e_wk);
  if (arch_.head_kind == HeadKind::kCosine) {
    r.s_safety = r.cosine;
    r.p_unsafe = score_to_probability(r.cosine);
  } else {
    r.p_unsafe = mlp_head(b, r.e_pr, r.e_wk);
    r.s_safety = ad::affine(r.p_unsafe, T(-2), T(1));
  }
  return r;
}

template <typename T>
typename FusionModel<T>::Scores FusionModel<T>::score(const FeatureRecord& record) const {
  ad::Tape<T> tape;
  const Bound<T> b = bind(tape, false);
  const ForwardResult<T> r = forward(b, record);
  return {static_cast<double>(r.s_safety.value()[0]), static_cast<double>(r.p_unsafe.value()[0]),
          static_cast<double>(r.cosine.value()[0])};
}

template <typename T>
template <typename U>
FusionModel<U> FusionModel<T>::cast() const {
  FusionModel<U> m;
  m.arch_ = arch_;
  m.spec_ = spec_;
  m.d_wk_ = d_wk_;
  m.index_ = index_;
  for (const auto& p : params_) {
    m.params_.push_back({p.name, p.value.template cast<U>(), p.kind});
  }
  return m;
}

template class FusionModel<float>;
template class FusionModel<double>;
template FusionModel<double> FusionModel<float>::cast<double>() const;
template FusionModel<float> FusionModel<double>::cast<float>() const;
template FusionModel<float> FusionModel<float>::cast<float>() const;
template FusionModel<double> FusionModel<double>::cast<double>() const;
template ad::Var<float> score_to_probability(ad::Var<float>);
template ad::Var<double> score_to_probability(ad::Var<double>);

void save_model(const std::string& path, const FusionModel<float>& model) {
  json pyramid = json::array();
  for (const auto& l : model.spec().levels) pyramid.push_back({l.channels, l.height, l.width});
  const json meta{{"arch", arch_to_json(model.arch())},
                  {"pyramid", pyramid},
                  {"d_wk", model.d_wk()}};
  Container c;
  c.metadata = meta.dump();
  for (const auto& p : model.params()) c.tensors.push_back({p.name, p.value});
  write_container(path, kModelMagic, c);
}

FusionModel<float> load_model(const std::string& path) {
  const Container c = read_container(path, kModelMagic);
  if (c.version != 1) {
    throw ContainerError(path + ": unsupported model version " + std::to_string(c.version));
  }
  ArchConfig arch;
  PyramidSpec spec;
  std::uint32_t d_wk = 0;
  try {
    const json meta = json::parse(c.metadata);
    arch = arch_from_json(meta.at("arch"));
    spec = PyramidSpec::from_extents(
        meta.at("pyramid").get<std::vector<std::array<std::uint32_t, 3>>>());
    d_wk = meta.at("d_wk").get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw ContainerError(path + ": bad model metadata: " + e.what());
  }
  FusionModel<float> model(arch, spec, d_wk, 0);
  if (c.tensors.size() != model.params().size()) {
    throw ContainerError(path + ": expected " + std::to_string(model.params().size()) +
                         " tensors, found " + std::to_string(c.tensors.size()));
  }
  for (auto& p : model.params()) {
    const TensorF& t = c.get(p.name);
    if (t.shape() != p.value.shape()) {
      throw ContainerError(path + ": tensor '" + p.name + "' has shape " +
                           shape_str(t.shape()) + ", expected " + shape_str(p.value.shape()));
    }
    if (!t.all_finite()) throw ContainerError(path + ": tensor '" + p.name + "' is not finite");
    p.value = t;
  }
  return model;
}

std::size_t count_parameters(const ArchConfig& arch, const PyramidSpec& spec,
                             std::uint32_t d_wk) {
  return FusionModel<float>(arch, spec, d_wk, 0).parameter_count();
}

}  // namespace kgfp
