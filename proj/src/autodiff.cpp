// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kgfp::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> cmap(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(t.data(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}
template <typename T>
MapMat<T> map(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MapMat<T>(t.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

template <typename T>
void require_rank(Var<T> v, std::size_t rank, const char* op) {
  require(v.value().rank() == rank, op,
          "expected rank " + std::to_string(rank) + ", got shape " +
              shape_str(v.shape()));
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound Var");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw std::logic_error("Vars from different tapes");
  return tape_of(a);
}

/// Calls fn(grad_buffer) for parent `id` if it takes gradients.
template <typename T, typename Fn>
void accumulate(Tape<T>& tape, std::uint32_t id, Fn&& fn) {
  if (tape.requires_grad(id)) fn(tape.grad_buffer(id));
}

}  // namespace

// --- Tape -------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::push(Node node) {
  if (nodes_.size() >= UINT32_MAX) throw std::length_error("tape is full");
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  if (n.value == nullptr) n.value = &n.owned;
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::bind(const Tensor<T>& ref, bool requires_grad) {
  Node n;
  n.value = &ref;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                       BackwardFn backward) {
  return record(std::move(value),
                std::span<const Var<T>>(parents.begin(), parents.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> parents,
                       BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (const Var<T>& p : parents) {
    if (p.tape() != this) throw std::logic_error("parent from another tape");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>* Tape<T>::grad(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value->shape(), T(0));
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> out) {
  if (out.value().size() != 1) {
    throw ShapeError("backward() without a seed needs a single-element output");
  }
  backward(out, Tensor<T>(out.shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var<T> out, const Tensor<T>& seed) {
  if (out.tape() != this) throw std::logic_error("output from another tape");
  if (seed.shape() != out.shape()) throw ShapeError("seed shape mismatch");
  if (!nodes_[out.id()].requires_grad) return;
  Tensor<T>& g = grad_buffer(out.id());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::uint32_t id = out.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

// --- linear algebra -----------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul",
          "inner dims differ: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  Tensor<T> out({m, n});
  map(out, m, n).noalias() = cmap(a.value(), m, k) * cmap(b.value(), k, n);
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, m, k, n](Tape<T>& t, std::uint32_t self) {
                       const auto g = cmap(*t.grad(self), m, n);
                       accumulate(t, ia, [&](Tensor<T>& ga) {
                         map(ga, m, k).noalias() +=
                             g * cmap(t.value(ib), k, n).transpose();
                       });
                       accumulate(t, ib, [&](Tensor<T>& gb) {
                         map(gb, k, n).noalias() +=
                             cmap(t.value(ia), m, k).transpose() * g;
                       });
                     });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  require(b.shape()[1] == k, "matmul_nt",
          "inner dims differ: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
  Tensor<T> out({m, n});
  map(out, m, n).noalias() =
      cmap(a.value(), m, k) * cmap(b.value(), n, k).transpose();
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, m, k, n](Tape<T>& t, std::uint32_t self) {
                       const auto g = cmap(*t.grad(self), m, n);
                       accumulate(t, ia, [&](Tensor<T>& ga) {
                         map(ga, m, k).noalias() += g * cmap(t.value(ib), n, k);
                       });
                       accumulate(t, ib, [&](Tensor<T>& gb) {
                         map(gb, n, k).noalias() +=
                             g.transpose() * cmap(t.value(ia), m, k);
                       });
                     });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = tape_of(a);
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out({n, m});
  map(out, n, m) = cmap(a.value(), m, n).transpose();
  const auto ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia, m, n](Tape<T>& t, std::uint32_t self) {
                       accumulate(t, ia, [&](Tensor<T>& ga) {
                         map(ga, m, n) += cmap(*t.grad(self), n, m).transpose();
                       });
                     });
}

// --- elementwise ----------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require(a.shape() == b.shape(), "add",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       for (auto id : {ia, ib}) {
                         accumulate(t, id, [&](Tensor<T>& gp) {
                           for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                         });
                       }
                     });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require(a.shape() == b.shape(), "sub",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ia, [&](Tensor<T>& gp) {
                         for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                       });
                       accumulate(t, ib, [&](Tensor<T>& gp) {
                         for (std::size_t i = 0; i < g.size(); ++i) gp[i] -= g[i];
                       });
                     });
}

template <typename T>
Var<T> affine(Var<T> a, T factor, T offset) {
  Tape<T>& tape = tape_of(a);
  Tensor<T> out = a.value();
  for (T& v : out.storage()) v = factor * v + offset;
  const auto ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia, factor](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ia, [&](Tensor<T>& gp) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gp[i] += factor * g[i];
                       });
                     });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return affine(a, factor, T(0));
}

template <typename T>
Var<T> mul_scalar(Var<T> a, Var<T> s) {
  Tape<T>& tape = tape_of(a, s);
  require(s.value().size() == 1, "mul_scalar", "scale must have one element");
  const T c = s.value()[0];
  Tensor<T> out = a.value();
  for (T& v : out.storage()) v *= c;
  const auto ia = a.id(), is = s.id();
  return tape.record(std::move(out), {a, s},
                     [ia, is](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       const Tensor<T>& av = t.value(ia);
                       const T c = t.value(is)[0];
                       accumulate(t, ia, [&](Tensor<T>& gp) {
                         for (std::size_t i = 0; i < g.size(); ++i) gp[i] += c * g[i];
                       });
                       accumulate(t, is, [&](Tensor<T>& gs) {
                         T acc = 0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += av[i] * g[i];
                         gs[0] += acc;
                       });
                     });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  Tape<T>& tape = tape_of(x, b);
  require_rank(x, 2, "add_bias");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(b.value().size() == cols, "add_bias",
          "bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  Tensor<T> out = x.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  const auto ix = x.id(), ib = b.id();
  return tape.record(std::move(out), {x, b},
                     [ix, ib, rows, cols](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       });
                       accumulate(t, ib, [&](Tensor<T>& gb) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c)
                             gb[c] += g[r * cols + c];
                       });
                     });
}

template <typename T>
Var<T> add_channel(Var<T> x, Var<T> b) {
  Tape<T>& tape = tape_of(x, b);
  const std::size_t channels = x.shape()[0];
  require(b.value().size() == channels, "add_channel",
          "bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  const std::size_t inner = x.value().size() / channels;
  Tensor<T> out = x.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  const auto ix = x.id(), ib = b.id();
  return tape.record(std::move(out), {x, b},
                     [ix, ib, channels, inner](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       });
                       accumulate(t, ib, [&](Tensor<T>& gb) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           T acc = 0;
                           for (std::size_t i = 0; i < inner; ++i)
                             acc += g[c * inner + i];
                           gb[c] += acc;
                         }
                       });
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

// --- normalization and activations --------------------------------------------

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  Tape<T>& tape = tape_of(x, gain);
  const std::size_t d = x.shape().back();
  require(gain.value().size() == d && bias.value().size() == d, "layer_norm",
          "affine params must have " + std::to_string(d) + " elements");
  const std::size_t rows = x.value().size() / d;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();

  Tensor<T> out(x.shape());
  // Normalized rows and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, rows, d, xhat, inv_std](Tape<T>& t, std::uint32_t self) {
        const Tensor<T>& g = *t.grad(self);
        const Tensor<T>& gv = t.value(ig);
        accumulate(t, ig, [&](Tensor<T>& gg) {
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * (*xhat)[i];
        });
        accumulate(t, ib, [&](Tensor<T>& gb) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        });
        accumulate(t, ix, [&](Tensor<T>& gx) {
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = g[r * d + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * (*xhat)[r * d + j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            const T is = (*inv_std)[r];
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] +=
                  is * (dh[j] - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
            }
          }
        });
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T c = T(0.044715);
  Tensor<T> out = x.value();
  std::vector<T> th(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = out[i];
    // tanh(u) = 1 - 2 / (exp(2u) + 1); exp saturates cleanly at both ends.
    th[i] = T(1) - T(2) / (std::exp(T(2) * k * (v + c * v * v * v)) + T(1));
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, k, c, th = std::move(th)](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       const Tensor<T>& xv = t.value(ix);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const T v = xv[i];
                           const T du = k * (T(1) + T(3) * c * v * v);
                           const T dy = T(0.5) * (T(1) + th[i]) +
                                        T(0.5) * v * (T(1) - th[i] * th[i]) * du;
                           gx[i] += g[i] * dy;
                         }
                       });
                     });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value();
  for (T& v : out.storage()) {
    v = v >= 0 ? T(1) / (T(1) + std::exp(-v))
               : std::exp(v) / (T(1) + std::exp(v));
  }
  const auto ix = x.id();
  return tape.record(std::move(out), {x}, [ix](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& y = t.value(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row_ptr = out.data() + r * n;
    const T mx = *std::max_element(row_ptr, row_ptr + n);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row_ptr[j] = std::exp(row_ptr[j] - mx);
      sum += row_ptr[j];
    }
    for (std::size_t j = 0; j < n; ++j) row_ptr[j] /= sum;
  }
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, rows, n](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       const Tensor<T>& y = t.value(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           T dot = 0;
                           for (std::size_t j = 0; j < n; ++j)
                             dot += g[r * n + j] * y[r * n + j];
                           for (std::size_t j = 0; j < n; ++j)
                             gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                         }
                       });
                     });
}

template <typename T>
Var<T> cosine_similarity(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  require(a.value().size() == b.value().size(), "cosine_similarity",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  T dot = 0, na2 = 0, nb2 = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  if (!(na2 > 0) || !(nb2 > 0)) {
    throw std::domain_error("cosine_similarity: zero-norm input");
  }
  const T na = std::sqrt(na2), nb = std::sqrt(nb2);
  const T s_raw = dot / (na * nb);
  const T s = std::clamp(s_raw, T(-1), T(1));
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      Tensor<T>::scalar(s), {a, b},
      [ia, ib, na, nb, s_raw](Tape<T>& t, std::uint32_t self) {
        const T g = (*t.grad(self))[0];
        const Tensor<T>& av = t.value(ia);
        const Tensor<T>& bv = t.value(ib);
        const T inv = T(1) / (na * nb);
        accumulate(t, ia, [&](Tensor<T>& ga) {
          for (std::size_t i = 0; i < av.size(); ++i)
            ga[i] += g * (bv[i] * inv - s_raw * av[i] / (na * na));
        });
        accumulate(t, ib, [&](Tensor<T>& gb) {
          for (std::size_t i = 0; i < bv.size(); ++i)
            gb[i] += g * (av[i] * inv - s_raw * bv[i] / (nb * nb));
        });
      });
}

// --- reductions and layout ---------------------------------------------------------

template <typename T>
Var<T> mean_rows(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require(s.size() >= 2, "mean_rows", "need rank >= 2, got " + shape_str(s));
  const std::size_t rows = s[0];
  const std::size_t inner = x.value().size() / rows;
  Shape out_shape(s.begin() + 1, s.end());
  Tensor<T> out(out_shape, T(0));
  const Tensor<T>& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[i] += xv[r * inner + i];
  const T inv = T(1) / static_cast<T>(rows);
  for (T& v : out.storage()) v *= inv;
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, rows, inner, inv](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < inner; ++i)
                             gx[r * inner + i] += g[i] * inv;
                       });
                     });
}

template <typename T>
Var<T> mean_pool_spatial(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  require_rank(x, 3, "mean_pool_spatial");
  const std::size_t channels = x.shape()[0];
  const std::size_t area = x.shape()[1] * x.shape()[2];
  Tensor<T> out({channels}, T(0));
  const Tensor<T>& xv = x.value();
  const T inv = T(1) / static_cast<T>(area);
  for (std::size_t c = 0; c < channels; ++c) {
    T acc = 0;
    for (std::size_t i = 0; i < area; ++i) acc += xv[c * area + i];
    out[c] = acc * inv;
  }
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, channels, area, inv](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t c = 0; c < channels; ++c)
                           for (std::size_t i = 0; i < area; ++i)
                             gx[c * area + i] += g[c] * inv;
                       });
                     });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return tape.record(std::move(out), {x}, [ix](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

template <typename T>
Var<T> row(Var<T> x, std::size_t i) {
  Tape<T>& tape = tape_of(x);
  require_rank(x, 2, "row");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(i < rows, "row", "index out of range");
  const Tensor<T>& xv = x.value();
  Tensor<T> out({cols},
                std::vector<T>(xv.data() + i * cols, xv.data() + (i + 1) * cols));
  const auto ix = x.id();
  return tape.record(std::move(out), {x}, [ix, i, cols](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    accumulate(t, ix, [&](Tensor<T>& gx) {
      for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += g[j];
    });
  });
}

template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows) {
  require(!rows.empty(), "stack_rows", "no rows");
  Tape<T>& tape = tape_of(rows.front());
  const std::size_t n = rows.front().value().size();
  std::vector<T> buf;
  buf.reserve(rows.size() * n);
  std::vector<std::uint32_t> ids;
  for (const Var<T>& r : rows) {
    require(r.value().size() == n, "stack_rows", "rows differ in size");
    buf.insert(buf.end(), r.value().values().begin(), r.value().values().end());
    ids.push_back(r.id());
  }
  Tensor<T> out({rows.size(), n}, std::move(buf));
  return tape.record(std::move(out), rows,
                     [ids, n](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       for (std::size_t r = 0; r < ids.size(); ++r) {
                         accumulate(t, ids[r], [&](Tensor<T>& gr) {
                           for (std::size_t j = 0; j < n; ++j) gr[j] += g[r * n + j];
                         });
                       }
                     });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  Tape<T>& tape = tape_of(x);
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(count > 0 && begin + count <= cols, "slice_cols", "range out of bounds");
  Tensor<T> out({rows, count});
  const Tensor<T>& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * cols + begin, count, out.data() + r * count);
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, rows, cols, begin, count](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < count; ++j)
                             gx[r * cols + begin + j] += g[r * count + j];
                       });
                     });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_cols", "no parts");
  Tape<T>& tape = tape_of(parts.front());
  const std::size_t rows = parts.front().shape()[0];
  std::vector<std::size_t> widths;
  std::vector<std::uint32_t> ids;
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    require(p.value().rank() == 2 && p.shape()[0] == rows, "concat_cols",
            "row counts differ");
    widths.push_back(p.shape()[1]);
    ids.push_back(p.id());
    total += p.shape()[1];
  }
  Tensor<T> out({rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k],
                  out.data() + r * total + off);
    off += widths[k];
  }
  return tape.record(std::move(out), parts,
                     [ids, widths, rows, total](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         accumulate(t, ids[k], [&](Tensor<T>& gp) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               gp[r * widths[k] + j] += g[r * total + off + j];
                         });
                         off += widths[k];
                       }
                     });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat", "no parts");
  Tape<T>& tape = tape_of(parts.front());
  std::vector<T> buf;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> sizes;
  for (const Var<T>& p : parts) {
    buf.insert(buf.end(), p.value().values().begin(), p.value().values().end());
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
  }
  const std::size_t total = buf.size();
  Tensor<T> out({total}, std::move(buf));
  return tape.record(std::move(out), parts,
                     [ids, sizes](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         accumulate(t, ids[k], [&](Tensor<T>& gp) {
                           for (std::size_t j = 0; j < sizes[k]; ++j)
                             gp[j] += g[off + j];
                         });
                         off += sizes[k];
                       }
                     });
}

template <typename T>
Var<T> nearest_upsample(Var<T> x, std::size_t height, std::size_t width) {
  Tape<T>& tape = tape_of(x);
  require_rank(x, 3, "nearest_upsample");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(height >= h && width >= w, "nearest_upsample",
          "target must not be smaller than the input");
  std::vector<std::size_t> src(height * width);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j)
      src[i * width + j] = (i * h / height) * w + (j * w / width);
  Tensor<T> out({c, height, width});
  const Tensor<T>& xv = x.value();
  const std::size_t in_area = h * w, out_area = height * width;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < out_area; ++k)
      out[ch * out_area + k] = xv[ch * in_area + src[k]];
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, c, in_area, out_area, src = std::move(src)](
                         Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t ch = 0; ch < c; ++ch)
                           for (std::size_t k = 0; k < out_area; ++k)
                             gx[ch * in_area + src[k]] += g[ch * out_area + k];
                       });
                     });
}

namespace {
// Flat index into x[C,H,W] for every element of patchify's output.
std::vector<std::size_t> patch_gather(std::size_t c, std::size_t h,
                                      std::size_t w, std::size_t p) {
  const std::size_t ph = h / p, pw = w / p, width = c * p * p;
  std::vector<std::size_t> idx(ph * pw * width);
  for (std::size_t by = 0; by < ph; ++by)
    for (std::size_t bx = 0; bx < pw; ++bx)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t token = by * pw + bx;
            const std::size_t col = (ch * p + dy) * p + dx;
            idx[token * width + col] = (ch * h + by * p + dy) * w + bx * p + dx;
          }
  return idx;
}
}  // namespace

template <typename T>
Var<T> patchify(Var<T> x, std::size_t patch) {
  Tape<T>& tape = tape_of(x);
  require_rank(x, 3, "patchify");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(patch > 0 && h % patch == 0 && w % patch == 0, "patchify",
          "spatial dims " + shape_str(x.shape()) + " not divisible by patch " +
              std::to_string(patch));
  auto idx = patch_gather(c, h, w, patch);
  Tensor<T> out({(h / patch) * (w / patch), c * patch * patch});
  const Tensor<T>& xv = x.value();
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = xv[idx[k]];
  const auto ix = x.id();
  return tape.record(std::move(out), {x},
                     [ix, idx = std::move(idx)](Tape<T>& t, std::uint32_t self) {
                       const Tensor<T>& g = *t.grad(self);
                       accumulate(t, ix, [&](Tensor<T>& gx) {
                         for (std::size_t k = 0; k < idx.size(); ++k)
                           gx[idx[k]] += g[k];
                       });
                     });
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels,
                     std::size_t height, std::size_t width, std::size_t patch) {
  const auto idx = patch_gather(channels, height, width, patch);
  if (patches.size() != idx.size()) throw ShapeError("unpatchify: size mismatch");
  Tensor<T> out({channels, height, width});
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = patches[k];
  return out;
}

// --- loss ---------------------------------------------------------------------------

template <typename T>
Var<T> bce(Var<T> p, int label, T eps) {
  Tape<T>& tape = tape_of(p);
  require(p.value().size() == 1, "bce", "expects a single probability");
  if (label != 0 && label != 1) throw std::invalid_argument("bce: label must be 0 or 1");
  const T raw = p.value()[0];
  const T pc = std::clamp(raw, eps, T(1) - eps);
  const bool interior = raw > eps && raw < T(1) - eps;
  const T y = static_cast<T>(label);
  const T loss = -(y * std::log(pc) + (T(1) - y) * std::log(T(1) - pc));
  const auto ip = p.id();
  return tape.record(Tensor<T>::scalar(loss), {p},
                     [ip, pc, y, interior](Tape<T>& t, std::uint32_t self) {
                       if (!interior) return;
                       const T g = (*t.grad(self))[0];
                       accumulate(t, ip, [&](Tensor<T>& gp) {
                         gp[0] += g * (-y / pc + (T(1) - y) / (T(1) - pc));
                       });
                     });
}

// --- attention ------------------------------------------------------------------------

template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> kv, const AttentionWeights<T>& w,
                            std::size_t heads) {
  require_rank(q, 2, "multi_head_attention");
  require_rank(kv, 2, "multi_head_attention");
  const std::size_t inner = w.wq.shape().at(1);
  if (heads == 0 || inner % heads != 0) {
    throw ShapeError("multi_head_attention: inner dim " + std::to_string(inner) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = inner / heads;
  const Var<T> qp = linear(q, w.wq, w.bq);
  const Var<T> kp = linear(kv, w.wk, w.bk);
  const Var<T> vp = linear(kv, w.wv, w.bv);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    Var<T> qh = heads == 1 ? qp : slice_cols(qp, off, head_dim);
    Var<T> kh = heads == 1 ? kp : slice_cols(kp, off, head_dim);
    Var<T> vh = heads == 1 ? vp : slice_cols(vp, off, head_dim);
    Var<T> weights = softmax(scale(matmul_nt(qh, kh), inv_sqrt));
    outs.push_back(matmul(weights, vh));
  }
  Var<T> merged = heads == 1 ? outs.front()
                             : concat_cols(std::span<const Var<T>>(outs));
  return linear(merged, w.wo, w.bo);
}

// --- explicit instantiations -------------------------------------------------------------

#define KGFP_INSTANTIATE(T)                                                        \
  template class Tape<T>;                                                          \
  template Var<T> matmul(Var<T>, Var<T>);                                          \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                       \
  template Var<T> transpose(Var<T>);                                               \
  template Var<T> add(Var<T>, Var<T>);                                             \
  template Var<T> sub(Var<T>, Var<T>);                                             \
  template Var<T> scale(Var<T>, T);                                                \
  template Var<T> affine(Var<T>, T, T);                                            \
  template Var<T> mul_scalar(Var<T>, Var<T>);                                      \
  template Var<T> add_bias(Var<T>, Var<T>);                                        \
  template Var<T> add_channel(Var<T>, Var<T>);                                     \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                  \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                           \
  template Var<T> gelu(Var<T>);                                                    \
  template Var<T> sigmoid(Var<T>);                                                 \
  template Var<T> softmax(Var<T>);                                                 \
  template Var<T> cosine_similarity(Var<T>, Var<T>);                               \
  template Var<T> mean_rows(Var<T>);                                               \
  template Var<T> mean_pool_spatial(Var<T>);                                       \
  template Var<T> reshape(Var<T>, Shape);                                          \
  template Var<T> row(Var<T>, std::size_t);                                        \
  template Var<T> stack_rows(std::span<const Var<T>>);                             \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> concat_cols(std::span<const Var<T>>);                            \
  template Var<T> concat(std::span<const Var<T>>);                                 \
  template Var<T> nearest_upsample(Var<T>, std::size_t, std::size_t);              \
  template Var<T> patchify(Var<T>, std::size_t);                                   \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t,        \
                                std::size_t, std::size_t);                         \
  template Var<T> bce(Var<T>, int, T);                                             \
  template Var<T> multi_head_attention(Var<T>, Var<T>, const AttentionWeights<T>&, \
                                       std::size_t);

KGFP_INSTANTIATE(float)
KGFP_INSTANTIATE(double)

#undef KGFP_INSTANTIATE

}  // namespace kgfp::ad
