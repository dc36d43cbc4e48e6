#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "gccvit/tensor.hpp"

namespace gccvit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient accumulated by the last backward pass; zeros if the value did not participate.
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Records primitive operations in execution order and replays
/// their vector-Jacobian products backwards. One tape per forward/backward pass, single thread.
class Tape {
 public:
  /// Receives the upstream gradient of the node's output and accumulates into its parents.
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Appends a derived value. `backward` is dropped when no parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id);

  /// Mutable gradient buffer of `v`, zero-initialised on first access.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  /// Seeds d(out)/d(out) = 1 for every element of `out` and propagates to all ancestors.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

// Differentiable primitives. All operands must live on the same tape.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
/// m: N×D plus row vector v: D broadcast over rows.
Var add_row(Var m, Var v);
Var softmax(Var x, int axis = -1);
Var gelu(Var x);
Var relu(Var x);
Var layer_norm(Var x, Var gamma, Var beta, float eps);
Var reshape(Var x, Shape shape);
/// Columns [begin, end) of a matrix.
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(Var top, Var bottom);
/// Row `index` of a matrix as a 1-D tensor.
Var row(Var x, std::size_t index);
/// Concatenation of two 1-D tensors.
Var concat(Var a, Var b);
Var sum(Var x);
Var sum_squares(Var x);
/// -Σ_k t_k·log(max(p_k, 1e-12)) with t = (1-s)·onehot(label) + s/K.
Var smoothed_cross_entropy(Var probs, std::size_t label, float smoothing);
/// Σ_{k≠label} max(0, 1 + z_k - z_label).
Var multiclass_hinge(Var logits, std::size_t label);

struct GradCheckOptions {
  float step = 1e-3f;
  /// 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

using ScalarFunction = std::function<Var(Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFunction& f, const Tensor& x, float step);
double grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& options);

}  // namespace gccvit
