#pragma once
// Reverse-mode differentiation over dense matrices.
//
// A Tape records every primitive application in creation order, which is a
// topological order by construction. backward() walks it in reverse. A Tape
// is single-threaded; parallel work uses independent tapes.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ecm_sphere/tensor.hpp"

namespace ecm_sphere::ad {

/// checked: non-finite leaves and zero-norm normalization throw.
/// training: normalization floors the squared norm at 1e-12 instead.
enum class NumericMode { checked, training };

inline constexpr double kTrainingNormFloor = 1e-12;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Per-node gradients of one backward pass.
class Gradients {
 public:
  Gradients(const Tape& tape, std::vector<Tensor> grads) : tape_(&tape), grads_(std::move(grads)) {}
  /// d(output)/d(v); zeros when v does not influence the output.
  Tensor of(Var v) const;

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, std::vector<Tensor>& grads)>;

  explicit Tape(NumericMode mode = NumericMode::checked) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NumericMode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that receives a gradient.
  Var parameter(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Records a primitive result. `fn` must add into grads[input] for each
  /// input that requires a gradient (see accumulate()).
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record_many(Tensor value, std::span<const std::uint32_t> inputs, BackwardFn fn);

  /// Gradients of a 1 x 1 output with respect to every node.
  Gradients backward(Var output) const;

  static void accumulate(std::vector<Tensor>& grads, std::uint32_t id, const Tensor& delta);

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
  };
  NumericMode mode_;
  std::vector<Node> nodes_;
};

// ---- primitives --------------------------------------------------------
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a[r, c] + row[0, c]
Var add_row(Var a, Var row);
/// a[r, c] * row[0, c]
Var mul_row(Var a, Var row);
/// a[r, c] + col[r, 0]
Var add_col(Var a, Var col);
/// a[r, c] / col[r, 0]
Var div_col(Var a, Var col);
Var softmax_rows(Var a);
Var silu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);
Var relu(Var a);
Var normalize_rows(Var a);
Var sum(Var a);
Var mean(Var a);
/// Mean over rows: [r, c] -> [1, c].
Var mean_rows(Var a);
/// Mean over columns: [r, c] -> [r, 1].
Var mean_cols(Var a);
/// Sum over columns: [r, c] -> [r, 1].
Var sum_cols(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Entries where mask != 0 are replaced by `fill`; their gradient is zero.
Var masked_fill(Var a, const Tensor& mask, double fill);

// ---- composites ----------------------------------------------------------
/// x / sqrt(mean(x^2) + eps) per row, times a [1, c] gain.
Var rms_norm(Var x, Var gain, double eps);
/// 1 - a
Var one_minus(Var a);

// ---- finite-difference checker -------------------------------------------
using ScalarFunction = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Central differences against backward() for every entry of every param.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-3), so
/// near-zero gradients are compared on an absolute 1e-3 scale.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double eps,
                           double tol, NumericMode mode = NumericMode::checked);

}  // namespace ecm_sphere::ad
