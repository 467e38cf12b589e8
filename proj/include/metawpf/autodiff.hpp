#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metawpf/parameters.hpp"

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tape is an append-only list of primitive operations. Gradients can be
// taken numerically (fast, results are detached constants) or as new tape
// nodes (create_graph), which lets a gradient be differentiated again. The
// second form is what unrolled inner-loop meta-gradients need.
namespace metawpf::ad {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Thrown when operand shapes are not conformable; names the operation.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, Shape a, Shape b);
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,           // a * c
  Shift,           // a + c
  MatMul,          // op(a) * op(b)
  Sigmoid,
  Tanh,
  Relu,            // max(0, a); derivative 0 at exactly 0
  Step,            // 1 where a > 0 else 0; zero derivative
  Sum,             // all entries -> 1x1
  BroadcastScalar, // 1x1 -> shape
  SumRows,         // R x C -> 1 x C
  BroadcastRows,   // 1 x C -> R x C
};

const char* op_name(Op op);

class Tape;

/// Lightweight handle to one tape node. Valid while its tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::uint32_t index() const { return index_; }
  Shape shape() const;
  bool requires_grad() const;

  /// Value of a 1x1 node.
  double value() const;
  /// Entry i of the node's value.
  double at(std::size_t i) const;
  std::vector<double> to_vector() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

struct GradResult {
  /// One gradient per `wrt` entry, same shapes.
  std::vector<Var> grads;
  /// Set when some `wrt` entry did not influence the output; its gradient is zero.
  bool detached = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::vector<double> values, Shape shape, bool requires_grad);
  Var constant(std::vector<double> values, Shape shape) {
    return leaf(std::move(values), shape, false);
  }
  Var scalar(double v, bool requires_grad = false) { return leaf({v}, Shape{}, requires_grad); }

  /// Reverse sweep from a 1x1 `output`. With create_graph the gradients are
  /// themselves differentiable nodes; otherwise they are detached constants.
  GradResult grad(Var output, std::span<const Var> wrt, bool create_graph = false);

  std::size_t size() const { return nodes_.size(); }
  std::span<const double> value(std::uint32_t index) const;
  Shape shape(std::uint32_t index) const { return nodes_.at(index).shape; }
  bool requires_grad(std::uint32_t index) const { return nodes_.at(index).requires_grad; }
  Op op(std::uint32_t index) const { return nodes_.at(index).op; }

  /// Recomputes every node from the recorded leaves and returns the full value arena.
  std::vector<double> replay() const;
  /// Recorded value arena, in node order.
  std::span<const double> recorded() const { return data_; }
  bool all_finite() const;

  // Used by the free operator functions below.
  Var push(Op op, Shape shape, Var a, Var b = {}, double c = 0.0, bool trans_a = false,
           bool trans_b = false);

 private:
  static constexpr std::uint32_t kNone = 0xffffffffu;

  struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    bool trans_a = false;
    bool trans_b = false;
    Shape shape;
    std::uint32_t a = kNone;
    std::uint32_t b = kNone;
    double c = 0.0;
    std::size_t offset = 0;
  };

  void eval_node(const Node& n, const double* base, double* out) const;
  void check_owned(Var v) const;
  std::vector<Var> backward_numeric(std::uint32_t out, std::span<const Var> wrt,
                                    std::vector<bool>& reached);
  std::vector<Var> backward_graph(std::uint32_t out, std::span<const Var> wrt,
                                  std::vector<bool>& reached);

  std::vector<Node> nodes_;
  std::vector<double> data_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var step(Var a);
Var sum(Var a);
Var broadcast(Var scalar, Shape shape);
Var sum_rows(Var a);
Var broadcast_rows(Var row, std::size_t rows);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// One leaf per parameter segment, shaped rows x cols.
std::vector<Var> bind(Tape& tape, const ParameterVector& params, bool requires_grad);
/// Collects per-segment values back into a vector laid out like `like`.
ParameterVector gather(std::span<const Var> segments, const ParameterVector& like);

/// dL/dtheta for a scalar `output` over the leaves bound from `like`.
ParameterVector gradient(Var output, std::span<const Var> wrt, const ParameterVector& like,
                         bool* detached = nullptr);

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Throws std::domain_error when f evaluates to NaN.
double grad_check(const ScalarFunction& f, const ParameterVector& point, double h);

/// Evaluates f at point on a fresh tape without gradient tracking.
double evaluate(const ScalarFunction& f, const ParameterVector& point);

}  // namespace metawpf::ad
