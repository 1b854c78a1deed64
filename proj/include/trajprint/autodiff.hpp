#pragma once

// Reverse-mode differentiation over dense double tensors.
//
// A Tape records a closed set of vector primitives. Every recorded node owns
// its forward value and, during backward(), a zero-initialized adjoint slot.
// Anything outside the primitive set is composed from it; the only other node
// kind is the segment node written by with_checkpointing().

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trajprint::ad {

enum class OpKind {
  Leaf,
  Add,
  Subtract,
  Multiply,
  ScalarMultiply,
  MatVec,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  LogSumExp,
  SquaredNorm,
  Inner,
  Concat,
  Checkpoint,
};

std::string_view op_name(OpKind kind) noexcept;

/// Row-major shape. Vectors are n x 1, scalars 1 x 1.
struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return rows * cols; }
  bool is_scalar() const noexcept { return rows == 1 && cols == 1; }
  bool is_vector() const noexcept { return cols == 1; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

class Tape;

/// Handle to one node of a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const std::vector<double>& value() const;
  double scalar() const;
  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward rule of a segment node: receives the output adjoint and must add
/// the input adjoint into `input_adjoint`.
using SegmentBackward =
    std::function<void(std::span<const double> output_adjoint, std::span<double> input_adjoint)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable leaf. Values must be finite.
  Var leaf(std::vector<double> values, Shape shape);
  Var leaf(std::vector<double> values);
  /// Leaf excluded from differentiation.
  Var constant(std::vector<double> values, Shape shape);
  Var constant(std::vector<double> values);
  Var constant_scalar(double value);

  /// Records one primitive. Throws ShapeMismatch naming the op and shapes, or
  /// NonFinite if the forward value overflows or is undefined.
  Var record(OpKind kind, std::span<const Var> inputs);

  /// Records an opaque single-input node with an explicit backward rule.
  Var record_segment(const Var& input, std::vector<double> output, SegmentBackward backward);

  /// Gradients of a scalar `loss` with respect to each leaf in `wrt`.
  std::vector<std::vector<double>> backward(const Var& loss, std::span<const Var> wrt) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool owns(const Var& v) const noexcept { return v.tape_ == this && v.id_ < nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    OpKind kind = OpKind::Leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    SegmentBackward segment;
  };

  Var push(Node node);
  void check(const Var& v, OpKind kind) const;

  std::deque<Node> nodes_;  // stable references: value() survives later records
};

// Primitive wrappers. All inputs must live on the same tape.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // elementwise
Var scale(const Var& s, const Var& v);      // scalar s times tensor v
Var scale(double s, const Var& v);
Var matvec(const Var& matrix, const Var& x);
Var exp(const Var& v);
Var log(const Var& v);
Var tanh(const Var& v);
Var sigmoid(const Var& v);
Var log_sum_exp(const Var& v);
Var squared_norm(const Var& v);
Var inner(const Var& a, const Var& b);
Var concat(std::span<const Var> parts);

/// One step of a chained computation x_{i+1} = f_i(x_i).
using StepFn = std::function<Var(Tape&, const Var&)>;

struct CheckpointStats {
  std::size_t segments = 0;
  /// Segment-boundary states kept alive between forward and backward.
  std::size_t stored_states = 0;
  /// Largest number of step outputs live at once during recomputation.
  std::size_t peak_recomputed = 0;
};

/// Runs `steps` from `input`, keeping only segment-boundary states; the
/// backward pass recomputes one segment at a time. Values and gradients equal
/// those of recording the steps directly on `tape`.
Var with_checkpointing(Tape& tape, const Var& input, std::vector<StepFn> steps,
                       std::size_t segment_length, CheckpointStats* stats = nullptr);

/// Records the steps directly (no checkpointing).
Var chain(Tape& tape, const Var& input, std::span<const StepFn> steps);

}  // namespace trajprint::ad
