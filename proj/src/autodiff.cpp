#include "trajprint/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "trajprint/error.hpp"

namespace trajprint::ad {

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Multiply: return "multiply";
    case OpKind::ScalarMultiply: return "scalar_multiply";
    case OpKind::MatVec: return "matvec";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LogSumExp: return "log_sum_exp";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::Inner: return "inner";
    case OpKind::Concat: return "concat";
    case OpKind::Checkpoint: return "checkpoint";
  }
  return "unknown";
}

std::string Shape::str() const {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

const std::vector<double>& Var::value() const { return tape_->nodes_[id_].value; }
const Shape& Var::shape() const { return tape_->nodes_[id_].shape; }

double Var::scalar() const {
  const auto& n = tape_->nodes_[id_];
  require(n.shape.is_scalar(), ErrorCode::ShapeMismatch,
          "scalar() on tensor of shape " + n.shape.str());
  return n.value[0];
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void shape_error(OpKind kind, std::span<const Var> inputs) {
  std::ostringstream os;
  os << "shape mismatch in " << op_name(kind) << ":";
  for (const auto& v : inputs) os << ' ' << v.shape().str();
  fail(ErrorCode::ShapeMismatch, os.str());
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check(const Var& v, OpKind kind) const {
  if (!owns(v)) {
    fail(ErrorCode::NotOnTape,
         std::string("input of ") + std::string(op_name(kind)) + " is not on this tape");
  }
}

Var Tape::leaf(std::vector<double> values, Shape shape) {
  require(values.size() == shape.size(), ErrorCode::ShapeMismatch,
          "leaf value count " + std::to_string(values.size()) + " does not match shape " +
              shape.str());
  require(all_finite(values), ErrorCode::NonFinite, "non-finite leaf value");
  Node n;
  n.kind = OpKind::Leaf;
  n.shape = shape;
  n.value = std::move(values);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf(std::vector<double> values) {
  const Shape s{values.size(), 1};
  return leaf(std::move(values), s);
}

Var Tape::constant(std::vector<double> values, Shape shape) {
  Var v = leaf(std::move(values), shape);
  nodes_[v.id_].requires_grad = false;
  return v;
}

Var Tape::constant(std::vector<double> values) {
  const Shape s{values.size(), 1};
  return constant(std::move(values), s);
}

Var Tape::constant_scalar(double value) { return constant({value}, Shape{1, 1}); }

Var Tape::record(OpKind kind, std::span<const Var> inputs) {
  for (const auto& v : inputs) check(v, kind);

  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) shape_error(kind, inputs);
  };

  Node out;
  out.kind = kind;
  out.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    out.inputs.push_back(v.id_);
    out.requires_grad = out.requires_grad || nodes_[v.id_].requires_grad;
  }

  switch (kind) {
    case OpKind::Add:
    case OpKind::Subtract:
    case OpKind::Multiply: {
      arity(2);
      const auto& a = nodes_[inputs[0].id_];
      const auto& b = nodes_[inputs[1].id_];
      if (a.shape != b.shape) shape_error(kind, inputs);
      out.shape = a.shape;
      out.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        const double x = a.value[i], y = b.value[i];
        out.value[i] = kind == OpKind::Add ? x + y : kind == OpKind::Subtract ? x - y : x * y;
      }
      break;
    }
    case OpKind::ScalarMultiply: {
      arity(2);
      const auto& s = nodes_[inputs[0].id_];
      const auto& v = nodes_[inputs[1].id_];
      if (!s.shape.is_scalar()) shape_error(kind, inputs);
      out.shape = v.shape;
      out.value.resize(v.value.size());
      for (std::size_t i = 0; i < v.value.size(); ++i) out.value[i] = s.value[0] * v.value[i];
      break;
    }
    case OpKind::MatVec: {
      arity(2);
      const auto& a = nodes_[inputs[0].id_];
      const auto& x = nodes_[inputs[1].id_];
      if (!x.shape.is_vector() || a.shape.cols != x.shape.rows) shape_error(kind, inputs);
      out.shape = Shape{a.shape.rows, 1};
      out.value.assign(a.shape.rows, 0.0);
      const std::size_t cols = a.shape.cols;
      for (std::size_t r = 0; r < a.shape.rows; ++r) {
        const double* row = a.value.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x.value[c];
        out.value[r] = acc;
      }
      break;
    }
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Tanh:
    case OpKind::Sigmoid: {
      arity(1);
      const auto& a = nodes_[inputs[0].id_];
      out.shape = a.shape;
      out.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        const double x = a.value[i];
        switch (kind) {
          case OpKind::Exp: out.value[i] = std::exp(x); break;
          case OpKind::Log: out.value[i] = std::log(x); break;
          case OpKind::Tanh: out.value[i] = std::tanh(x); break;
          default: out.value[i] = stable_sigmoid(x); break;
        }
      }
      break;
    }
    case OpKind::LogSumExp: {
      arity(1);
      const auto& a = nodes_[inputs[0].id_];
      if (a.value.empty()) shape_error(kind, inputs);
      const double m = *std::max_element(a.value.begin(), a.value.end());
      double acc = 0.0;
      for (double x : a.value) acc += std::exp(x - m);
      out.shape = Shape{1, 1};
      out.value = {m + std::log(acc)};
      break;
    }
    case OpKind::SquaredNorm: {
      arity(1);
      const auto& a = nodes_[inputs[0].id_];
      double acc = 0.0;
      for (double x : a.value) acc += x * x;
      out.shape = Shape{1, 1};
      out.value = {acc};
      break;
    }
    case OpKind::Inner: {
      arity(2);
      const auto& a = nodes_[inputs[0].id_];
      const auto& b = nodes_[inputs[1].id_];
      if (a.shape != b.shape) shape_error(kind, inputs);
      double acc = 0.0;
      for (std::size_t i = 0; i < a.value.size(); ++i) acc += a.value[i] * b.value[i];
      out.shape = Shape{1, 1};
      out.value = {acc};
      break;
    }
    case OpKind::Concat: {
      if (inputs.empty()) shape_error(kind, inputs);
      std::size_t total = 0;
      for (const auto& v : inputs) {
        if (!nodes_[v.id_].shape.is_vector()) shape_error(kind, inputs);
        total += nodes_[v.id_].value.size();
      }
      out.value.reserve(total);
      for (const auto& v : inputs) {
        const auto& src = nodes_[v.id_].value;
        out.value.insert(out.value.end(), src.begin(), src.end());
      }
      out.shape = Shape{total, 1};
      break;
    }
    case OpKind::Leaf:
    case OpKind::Checkpoint:
      fail(ErrorCode::InvalidArgument,
           std::string("record() does not accept op kind ") + std::string(op_name(kind)));
  }

  if (!all_finite(out.value)) {
    std::ostringstream os;
    os << "non-finite value produced by " << op_name(kind) << " on inputs";
    for (const auto& v : inputs) os << ' ' << v.shape().str();
    fail(ErrorCode::NonFinite, os.str());
  }
  return push(std::move(out));
}

Var Tape::record_segment(const Var& input, std::vector<double> output, SegmentBackward backward) {
  check(input, OpKind::Checkpoint);
  require(all_finite(output), ErrorCode::NonFinite, "non-finite value produced by checkpoint");
  Node n;
  n.kind = OpKind::Checkpoint;
  n.shape = Shape{output.size(), 1};
  n.value = std::move(output);
  n.inputs = {input.id_};
  n.requires_grad = nodes_[input.id_].requires_grad;
  n.segment = std::move(backward);
  return push(std::move(n));
}

std::vector<std::vector<double>> Tape::backward(const Var& loss, std::span<const Var> wrt) const {
  require(owns(loss), ErrorCode::NotOnTape, "loss is not on this tape");
  require(nodes_[loss.id_].shape.is_scalar(), ErrorCode::ShapeMismatch,
          "backward requires a scalar loss, got " + nodes_[loss.id_].shape.str());
  for (const auto& w : wrt) {
    require(owns(w), ErrorCode::NotOnTape, "gradient requested for a tensor not on this tape");
    require(nodes_[w.id_].kind == OpKind::Leaf, ErrorCode::NotOnTape,
            "gradient requested for a non-leaf tensor");
  }

  std::vector<std::vector<double>> adj(loss.id_ + 1);
  adj[loss.id_] = {1.0};

  auto slot = [&](std::size_t id) -> std::vector<double>& {
    auto& a = adj[id];
    if (a.empty()) a.assign(nodes_[id].value.size(), 0.0);
    return a;
  };

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::Leaf || !n.requires_grad || adj[id].empty()) continue;
    const std::vector<double>& g = adj[id];
    auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };

    switch (n.kind) {
      case OpKind::Add:
      case OpKind::Subtract: {
        if (needs(0)) {
          auto& ga = slot(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (needs(1)) {
          auto& gb = slot(n.inputs[1]);
          if (n.kind == OpKind::Add) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
          }
        }
        break;
      }
      case OpKind::Multiply: {
        const auto& a = nodes_[n.inputs[0]].value;
        const auto& b = nodes_[n.inputs[1]].value;
        if (needs(0)) {
          auto& ga = slot(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        }
        if (needs(1)) {
          auto& gb = slot(n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::ScalarMultiply: {
        const double s = nodes_[n.inputs[0]].value[0];
        const auto& v = nodes_[n.inputs[1]].value;
        if (needs(0)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
          slot(n.inputs[0])[0] += acc;
        }
        if (needs(1)) {
          auto& gv = slot(n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gv[i] += s * g[i];
        }
        break;
      }
      case OpKind::MatVec: {
        const Node& a = nodes_[n.inputs[0]];
        const auto& x = nodes_[n.inputs[1]].value;
        const std::size_t rows = a.shape.rows, cols = a.shape.cols;
        if (needs(0)) {
          auto& ga = slot(n.inputs[0]);
          for (std::size_t r = 0; r < rows; ++r) {
            double* row = ga.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) row[c] += g[r] * x[c];
          }
        }
        if (needs(1)) {
          auto& gx = slot(n.inputs[1]);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = a.value.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) gx[c] += g[r] * row[c];
          }
        }
        break;
      }
      case OpKind::Exp: {
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
        break;
      }
      case OpKind::Log: {
        const auto& a = nodes_[n.inputs[0]].value;
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        break;
      }
      case OpKind::Tanh: {
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case OpKind::Sigmoid: {
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case OpKind::LogSumExp: {
        const auto& a = nodes_[n.inputs[0]].value;
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * std::exp(a[i] - n.value[0]);
        break;
      }
      case OpKind::SquaredNorm: {
        const auto& a = nodes_[n.inputs[0]].value;
        auto& ga = slot(n.inputs[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += 2.0 * g[0] * a[i];
        break;
      }
      case OpKind::Inner: {
        const auto& a = nodes_[n.inputs[0]].value;
        const auto& b = nodes_[n.inputs[1]].value;
        if (needs(0)) {
          auto& ga = slot(n.inputs[0]);
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * b[i];
        }
        if (needs(1)) {
          auto& gb = slot(n.inputs[1]);
          for (std::size_t i = 0; i < a.size(); ++i) gb[i] += g[0] * a[i];
        }
        break;
      }
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t len = nodes_[n.inputs[k]].value.size();
          if (needs(k)) {
            auto& gk = slot(n.inputs[k]);
            for (std::size_t i = 0; i < len; ++i) gk[i] += g[offset + i];
          }
          offset += len;
        }
        break;
      }
      case OpKind::Checkpoint: {
        n.segment(g, slot(n.inputs[0]));
        break;
      }
      case OpKind::Leaf:
        break;
    }
  }

  std::vector<std::vector<double>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id_ < adj.size() && !adj[w.id_].empty()) {
      out.push_back(adj[w.id_]);
    } else {
      out.emplace_back(nodes_[w.id_].value.size(), 0.0);
    }
  }
  return out;
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  require(a.valid() && a.tape() == b.tape(), ErrorCode::NotOnTape,
          "operands live on different tapes");
  return *a.tape();
}

Var binary(OpKind kind, const Var& a, const Var& b) {
  const Var in[2] = {a, b};
  return same_tape(a, b).record(kind, in);
}

Var unary(OpKind kind, const Var& a) {
  require(a.valid(), ErrorCode::NotOnTape, "operand is not on a tape");
  const Var in[1] = {a};
  return a.tape()->record(kind, in);
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(OpKind::Add, a, b); }
Var operator-(const Var& a, const Var& b) { return binary(OpKind::Subtract, a, b); }
Var operator*(const Var& a, const Var& b) { return binary(OpKind::Multiply, a, b); }
Var scale(const Var& s, const Var& v) { return binary(OpKind::ScalarMultiply, s, v); }
Var scale(double s, const Var& v) {
  require(v.valid(), ErrorCode::NotOnTape, "operand is not on a tape");
  return scale(v.tape()->constant_scalar(s), v);
}
Var matvec(const Var& matrix, const Var& x) { return binary(OpKind::MatVec, matrix, x); }
Var exp(const Var& v) { return unary(OpKind::Exp, v); }
Var log(const Var& v) { return unary(OpKind::Log, v); }
Var tanh(const Var& v) { return unary(OpKind::Tanh, v); }
Var sigmoid(const Var& v) { return unary(OpKind::Sigmoid, v); }
Var log_sum_exp(const Var& v) { return unary(OpKind::LogSumExp, v); }
Var squared_norm(const Var& v) { return unary(OpKind::SquaredNorm, v); }
Var inner(const Var& a, const Var& b) { return binary(OpKind::Inner, a, b); }
Var concat(std::span<const Var> parts) {
  require(!parts.empty() && parts[0].valid(), ErrorCode::ShapeMismatch,
          "concat requires at least one tensor");
  return parts[0].tape()->record(OpKind::Concat, parts);
}

Var chain(Tape& tape, const Var& input, std::span<const StepFn> steps) {
  Var x = input;
  for (const auto& step : steps) x = step(tape, x);
  return x;
}

Var with_checkpointing(Tape& tape, const Var& input, std::vector<StepFn> steps,
                       std::size_t segment_length, CheckpointStats* stats) {
  require(segment_length >= 1, ErrorCode::InvalidArgument, "segment_length must be >= 1");
  require(tape.owns(input), ErrorCode::NotOnTape, "checkpoint input is not on this tape");

  const std::size_t n_steps = steps.size();
  const std::size_t n_segments = n_steps == 0 ? 0 : (n_steps + segment_length - 1) / segment_length;

  // Boundary states: the input of every segment.
  auto boundaries = std::make_shared<std::vector<std::vector<double>>>();
  boundaries->reserve(n_segments);
  std::vector<double> x = input.value();
  for (std::size_t i = 0; i < n_steps; ++i) {
    if (i % segment_length == 0) boundaries->push_back(x);
    Tape scratch;
    Var in = scratch.constant(x);
    x = steps[i](scratch, in).value();
  }

  if (stats) {
    stats->segments = n_segments;
    stats->stored_states = boundaries->size();
    stats->peak_recomputed = std::min(segment_length, n_steps);
  }

  auto shared_steps = std::make_shared<std::vector<StepFn>>(std::move(steps));
  SegmentBackward backward = [shared_steps, boundaries, segment_length](
                                 std::span<const double> output_adjoint,
                                 std::span<double> input_adjoint) {
    const auto& fs = *shared_steps;
    std::vector<double> adjoint(output_adjoint.begin(), output_adjoint.end());
    for (std::size_t seg = boundaries->size(); seg-- > 0;) {
      const std::size_t begin = seg * segment_length;
      const std::size_t end = std::min(begin + segment_length, fs.size());
      Tape scratch;
      Var start = scratch.leaf((*boundaries)[seg]);
      Var y = start;
      for (std::size_t i = begin; i < end; ++i) y = fs[i](scratch, y);
      Var seed = scratch.constant(adjoint);
      Var probe = inner(y, seed);
      const Var wrt[1] = {start};
      adjoint = std::move(scratch.backward(probe, wrt)[0]);
    }
    for (std::size_t i = 0; i < adjoint.size(); ++i) input_adjoint[i] += adjoint[i];
  };

  return tape.record_segment(input, std::move(x), std::move(backward));
}

}  // namespace trajprint::ad
