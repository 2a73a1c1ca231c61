#pragma once

// Tape-based reverse-mode differentiation over dense 2-D tensors.
//
// A Tape records every primitive in the order it is evaluated. Calling
// Tape::grad() on a 1 x 1 objective walks the record backwards once,
// accumulating (summing) the adjoint of every node over all of its uses.
// Every primitive checks its forward output and throws NumericError on
// NaN/Inf. Tapes are single-threaded; independent tapes share nothing.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddfp/tensor.hpp"

namespace ddfp::ad {

class Tape;

// Lightweight handle to a node on a Tape. Copyable; valid as long as the
// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Propagates the adjoint of node `self` into its parents.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that gradients are taken with respect to.
  Var variable(Tensor value);
  // Leaf treated as a constant: no adjoint is ever propagated into it.
  Var constant(Tensor value);

  // Reverse sweep from a 1 x 1 objective. Returns one gradient per entry of
  // `wrt`, shaped like that entry (zeros if the objective does not depend on
  // it). Throws ContractViolation for a non-scalar objective and
  // NumericError for a non-finite adjoint.
  std::vector<Tensor> grad(Var objective, std::span<const Var> wrt);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Adjoint buffer of a node, allocated as zeros on first access.
  Tensor& adjoint(std::size_t id);
  const Tensor& adjoint_of(std::size_t id) const { return nodes_[id].adjoint; }

  // Used by primitives: records a computed node. Throws NumericError when
  // `value` holds NaN/Inf, naming `op`.
  Var record(Tensor value, std::span<const std::size_t> parents, Backward backward,
             const char* op);

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    Backward backward;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;  // stable references across record()
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a[r x c] + row[1 x c], broadcast over rows.
Var add_row(Var a, Var row);
// a[r x c] + col[r x 1], broadcast over columns.
Var add_col(Var a, Var col);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var neg(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);  // log(1 + e^x)
Var exp(Var a);
Var log(Var a);
Var square(Var a);

// Reductions.
Var sum(Var a);                  // -> 1 x 1
Var mean(Var a);                 // -> 1 x 1
Var sum_rows(Var a);             // r x c -> r x 1
Var logsumexp_rows(Var a);       // r x c -> r x 1, max-shifted
Var log_softmax_rows(Var a);     // r x c -> r x c

// Layout.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(Var a, Var b);
Var reverse_cols(Var a);
// out[i] = a[i, index[i]]  -> r x 1
Var pick_cols(Var a, std::span<const std::size_t> index);

// out[i, k] = || a[i, :] - centers[k, :] ||^2 with `centers` held constant.
Var sq_dist_rows(Var a, const Tensor& centers);

// (1 / r) * sum_i weight[i] * (-log softmax(logits[i])[label[i]]).
// An empty `weight` means all ones.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                          std::span<const double> weight = {});

// ---- gradient check -------------------------------------------------------

// Builds a scalar objective on a fresh tape from leaves holding `inputs`.
using Objective = std::function<Var(Tape&, std::span<const Var>)>;

// Max over every input coordinate of |g_analytic - g_fd| / max(1, |g_fd|),
// where g_fd is the central difference with step h. Requires h > 0.
double finite_check(const Objective& objective, std::span<const Tensor> inputs, double h);

}  // namespace ddfp::ad
