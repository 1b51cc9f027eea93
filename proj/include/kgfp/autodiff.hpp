// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "kgfp/tensor.hpp"

namespace kgfp::ad {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been cleared.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Records primitive ops in creation order, which is a topological order:
/// every parent id is smaller than its child's. backward() walks the nodes
/// once in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned leaf that does not take gradients (inputs, labels).
  Var<T> constant(Tensor<T> value);
  /// Owned leaf that accumulates a gradient.
  Var<T> variable(Tensor<T> value);
  /// Leaf referencing an external tensor, which must outlive the tape.
  Var<T> bind(const Tensor<T>& ref, bool requires_grad = true);

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn backward);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents,
                BackwardFn backward);

  const Tensor<T>& value(std::uint32_t id) const { return *nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const {
    return nodes_[id].requires_grad;
  }

  /// Gradient of node `id`, or nullptr when nothing flowed into it.
  const Tensor<T>* grad(std::uint32_t id) const;
  const Tensor<T>* grad(Var<T> v) const { return grad(v.id()); }

  /// Gradient buffer for accumulation; zero-initialized on first access.
  Tensor<T>& grad_buffer(std::uint32_t id);

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var<T> out);
  /// Seeds an explicit upstream gradient.
  void backward(Var<T> out, const Tensor<T>& seed);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* value = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

// --- primitive ops --------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// a[m,k] * b[n,k]^T -> [m,n]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Var<T> a);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// factor * a + offset, elementwise.
template <typename T>
Var<T> affine(Var<T> a, T factor, T offset);
/// Elementwise product with a scalar-valued node (shape [1]).
template <typename T>
Var<T> mul_scalar(Var<T> a, Var<T> s);

/// x[L,N] + b[N] broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b);
/// x[C,...] + b[C] broadcast over trailing dims.
template <typename T>
Var<T> add_channel(Var<T> x, Var<T> b);
/// x[L,in] * w[in,out] + b[out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
/// Tanh approximation of GELU.
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
/// Softmax over the last dimension, max-subtracted.
template <typename T>
Var<T> softmax(Var<T> x);

/// Cosine of the angle between two vectors, clamped to [-1, 1]; shape [1].
/// Throws std::domain_error on a zero-norm input.
template <typename T>
Var<T> cosine_similarity(Var<T> a, Var<T> b);

/// Mean over the leading dimension: x[L,...] -> [...].
template <typename T>
Var<T> mean_rows(Var<T> x);
/// Mean over spatial positions: x[C,H,W] -> [C].
template <typename T>
Var<T> mean_pool_spatial(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
/// Row i of x[L,N] as a vector [N].
template <typename T>
Var<T> row(Var<T> x, std::size_t i);
/// Stacks equally sized vectors into [n, N].
template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows);
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);
/// Concatenates 1-D vectors.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);

/// Nearest-neighbour resize x[C,h,w] -> [C,H,W].
template <typename T>
Var<T> nearest_upsample(Var<T> x, std::size_t height, std::size_t width);
/// x[C,H,W] -> [(H/p)(W/p), C*p*p]. Patches in row-major order; inside a
/// patch the layout is (channel, dy, dx).
template <typename T>
Var<T> patchify(Var<T> x, std::size_t patch);

/// Binary cross entropy of a probability node [1] against a 0/1 label.
/// p is clamped to [eps, 1-eps]; the gradient is zero outside that range.
template <typename T>
Var<T> bce(Var<T> p, int label, T eps = T(1e-7));

template <typename T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Scaled dot-product attention with `heads` heads. q[Lq,d], kv[Lk,d].
/// Projections map d -> inner (divisible by heads) and the output projection
/// maps back to d.
template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> kv, const AttentionWeights<T>& w,
                            std::size_t heads);

// --- plain tensor helpers used by ops and tests ---------------------------

/// y[C,H,W] from patches p[(H/ps)(W/ps), C*ps*ps]; inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels,
                     std::size_t height, std::size_t width, std::size_t patch);

}  // namespace kgfp::ad
