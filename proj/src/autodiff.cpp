#include "metawpf/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "metawpf/kernels.hpp"

namespace metawpf::ad {

std::string Shape::str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

ShapeError::ShapeError(const std::string& op, Shape a, Shape b)
    : std::invalid_argument(op + ": shape mismatch " + a.str() + " vs " + b.str()) {}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::MatMul: return "matmul";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Step: return "step";
    case Op::Sum: return "sum";
    case Op::BroadcastScalar: return "broadcast";
    case Op::SumRows: return "sum_rows";
    case Op::BroadcastRows: return "broadcast_rows";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var

Tape& Var::tape() const {
  if (tape_ == nullptr) throw std::logic_error("use of an unbound Var");
  return *tape_;
}

Shape Var::shape() const { return tape().shape(index_); }
bool Var::requires_grad() const { return tape().requires_grad(index_); }

double Var::value() const {
  auto v = tape().value(index_);
  if (v.size() != 1) throw std::logic_error("Var::value on non-scalar node of size " +
                                            std::to_string(v.size()));
  return v[0];
}

double Var::at(std::size_t i) const { return tape().value(index_)[i]; }

std::vector<double> Var::to_vector() const {
  auto v = tape().value(index_);
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// Tape

std::span<const double> Tape::value(std::uint32_t index) const {
  const Node& n = nodes_.at(index);
  return std::span<const double>(data_).subspan(n.offset, n.shape.size());
}

void Tape::check_owned(Var v) const {
  if (!v.valid() || &v.tape() != this || v.index() >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
}

Var Tape::leaf(std::vector<double> values, Shape shape, bool requires_grad) {
  if (values.size() != shape.size()) {
    throw ShapeError("leaf", shape, Shape{values.size(), 1});
  }
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.shape = shape;
  n.offset = data_.size();
  data_.insert(data_.end(), values.begin(), values.end());
  nodes_.push_back(n);
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Op op, Shape shape, Var a, Var b, double c, bool trans_a, bool trans_b) {
  check_owned(a);
  Node n;
  n.op = op;
  n.shape = shape;
  n.a = a.index();
  n.requires_grad = nodes_[a.index()].requires_grad;
  if (b.valid()) {
    check_owned(b);
    n.b = b.index();
    n.requires_grad = n.requires_grad || nodes_[b.index()].requires_grad;
  }
  if (op == Op::Step) n.requires_grad = false;
  n.c = c;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.offset = data_.size();
  data_.resize(data_.size() + shape.size());
  eval_node(n, data_.data(), data_.data() + n.offset);
  nodes_.push_back(n);
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::eval_node(const Node& n, const double* base, double* out) const {
  const std::size_t len = n.shape.size();
  const double* a = base + nodes_[n.a].offset;
  const double* b = n.b == kNone ? nullptr : base + nodes_[n.b].offset;
  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::Add:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] + b[i];
      return;
    case Op::Sub:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] - b[i];
      return;
    case Op::Mul:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] * b[i];
      return;
    case Op::Scale:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] * n.c;
      return;
    case Op::Shift:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] + n.c;
      return;
    case Op::MatMul: {
      const Shape sa = nodes_[n.a].shape;
      const Shape sb = nodes_[n.b].shape;
      kernels::GemmShape g{n.shape.rows, n.shape.cols, n.trans_a ? sa.rows : sa.cols, n.trans_a,
                           n.trans_b};
      kernels::gemm(g, {a, sa.size()}, {b, sb.size()}, {out, len});
      return;
    }
    case Op::Sigmoid:
      for (std::size_t i = 0; i < len; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
      return;
    case Op::Tanh:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::tanh(a[i]);
      return;
    case Op::Relu:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
      return;
    case Op::Step:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[i] > 0.0 ? 1.0 : 0.0;
      return;
    case Op::Sum: {
      const std::size_t na = nodes_[n.a].shape.size();
      double acc = 0.0;
      for (std::size_t i = 0; i < na; ++i) acc += a[i];
      out[0] = acc;
      return;
    }
    case Op::BroadcastScalar:
      for (std::size_t i = 0; i < len; ++i) out[i] = a[0];
      return;
    case Op::SumRows: {
      const Shape sa = nodes_[n.a].shape;
      for (std::size_t c = 0; c < sa.cols; ++c) out[c] = 0.0;
      for (std::size_t r = 0; r < sa.rows; ++r) {
        for (std::size_t c = 0; c < sa.cols; ++c) out[c] += a[r * sa.cols + c];
      }
      return;
    }
    case Op::BroadcastRows:
      for (std::size_t r = 0; r < n.shape.rows; ++r) {
        for (std::size_t c = 0; c < n.shape.cols; ++c) out[r * n.shape.cols + c] = a[c];
      }
      return;
  }
}

std::vector<double> Tape::replay() const {
  std::vector<double> fresh(data_.size(), 0.0);
  for (const Node& n : nodes_) {
    if (n.op == Op::Leaf) {
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n.offset), n.shape.size(),
                  fresh.begin() + static_cast<std::ptrdiff_t>(n.offset));
    } else {
      eval_node(n, fresh.data(), fresh.data() + n.offset);
    }
  }
  return fresh;
}

bool Tape::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

GradResult Tape::grad(Var output, std::span<const Var> wrt, bool create_graph) {
  check_owned(output);
  if (shape(output.index()).size() != 1) {
    throw std::invalid_argument("grad: output must be scalar, got " +
                                shape(output.index()).str());
  }
  for (const Var& w : wrt) check_owned(w);
  std::vector<bool> reached(wrt.size(), false);
  GradResult r;
  r.grads = create_graph ? backward_graph(output.index(), wrt, reached)
                         : backward_numeric(output.index(), wrt, reached);
  r.detached = std::find(reached.begin(), reached.end(), false) != reached.end();
  return r;
}

std::vector<Var> Tape::backward_numeric(std::uint32_t out, std::span<const Var> wrt,
                                        std::vector<bool>& reached) {
  const Node& last = nodes_[out];
  std::vector<double> adj(last.offset + last.shape.size(), 0.0);
  std::vector<char> has(out + 1, 0);
  std::vector<double> tmp;
  if (last.requires_grad) {
    adj[last.offset] = 1.0;
    has[out] = 1;
  }

  for (std::int64_t idx = out; idx >= 0; --idx) {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!has[static_cast<std::size_t>(idx)] || !n.requires_grad || n.op == Op::Leaf) continue;
    const double* g = adj.data() + n.offset;
    const double* y = data_.data() + n.offset;
    const std::size_t len = n.shape.size();
    const bool ga_on = nodes_[n.a].requires_grad;
    const bool gb_on = n.b != kNone && nodes_[n.b].requires_grad;
    double* ga = adj.data() + nodes_[n.a].offset;
    double* gb = n.b != kNone ? adj.data() + nodes_[n.b].offset : nullptr;
    const double* a = data_.data() + nodes_[n.a].offset;
    const double* b = n.b != kNone ? data_.data() + nodes_[n.b].offset : nullptr;
    if (ga_on) has[n.a] = 1;
    if (gb_on) has[n.b] = 1;

    switch (n.op) {
      case Op::Leaf:
      case Op::Step:
        break;
      case Op::Add:
        if (ga_on) for (std::size_t i = 0; i < len; ++i) ga[i] += g[i];
        if (gb_on) for (std::size_t i = 0; i < len; ++i) gb[i] += g[i];
        break;
      case Op::Sub:
        if (ga_on) for (std::size_t i = 0; i < len; ++i) ga[i] += g[i];
        if (gb_on) for (std::size_t i = 0; i < len; ++i) gb[i] -= g[i];
        break;
      case Op::Mul:
        if (ga_on) for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * b[i];
        if (gb_on) for (std::size_t i = 0; i < len; ++i) gb[i] += g[i] * a[i];
        break;
      case Op::Scale:
        for (std::size_t i = 0; i < len; ++i) ga[i] += n.c * g[i];
        break;
      case Op::Shift:
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[i];
        break;
      case Op::MatMul: {
        const Shape sa = nodes_[n.a].shape;
        const Shape sb = nodes_[n.b].shape;
        const std::span<const double> gs(g, len);
        const std::span<const double> as(a, sa.size());
        const std::span<const double> bs(b, sb.size());
        const std::size_t k = n.trans_a ? sa.rows : sa.cols;
        if (ga_on) {
          tmp.assign(sa.size(), 0.0);
          if (!n.trans_a) {
            kernels::gemm({n.shape.rows, k, n.shape.cols, false, !n.trans_b}, gs, bs, tmp);
          } else {
            kernels::gemm({k, n.shape.rows, n.shape.cols, n.trans_b, true}, bs, gs, tmp);
          }
          kernels::axpy(1.0, tmp, {ga, sa.size()});
        }
        if (gb_on) {
          tmp.assign(sb.size(), 0.0);
          if (!n.trans_b) {
            kernels::gemm({k, n.shape.cols, n.shape.rows, !n.trans_a, false}, as, gs, tmp);
          } else {
            kernels::gemm({n.shape.cols, k, n.shape.rows, true, n.trans_a}, gs, as, tmp);
          }
          kernels::axpy(1.0, tmp, {gb, sb.size()});
        }
        break;
      }
      case Op::Sigmoid:
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * (y[i] * (1.0 - y[i]));
        break;
      case Op::Tanh:
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case Op::Relu:
        for (std::size_t i = 0; i < len; ++i) {
          if (a[i] > 0.0) ga[i] += g[i];
        }
        break;
      case Op::Sum: {
        const std::size_t na = nodes_[n.a].shape.size();
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[0];
        break;
      }
      case Op::BroadcastScalar: {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += g[i];
        ga[0] += acc;
        break;
      }
      case Op::SumRows: {
        const Shape sa = nodes_[n.a].shape;
        for (std::size_t r = 0; r < sa.rows; ++r) {
          for (std::size_t c = 0; c < sa.cols; ++c) ga[r * sa.cols + c] += g[c];
        }
        break;
      }
      case Op::BroadcastRows:
        for (std::size_t r = 0; r < n.shape.rows; ++r) {
          for (std::size_t c = 0; c < n.shape.cols; ++c) ga[c] += g[r * n.shape.cols + c];
        }
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    const std::uint32_t idx = wrt[w].index();
    const Node n = nodes_[idx];
    std::vector<double> g(n.shape.size(), 0.0);
    if (idx <= out && has[idx]) {
      reached[w] = true;
      std::copy_n(adj.begin() + static_cast<std::ptrdiff_t>(n.offset), g.size(), g.begin());
    }
    result.push_back(leaf(std::move(g), n.shape, false));
  }
  return result;
}

std::vector<Var> Tape::backward_graph(std::uint32_t out, std::span<const Var> wrt,
                                      std::vector<bool>& reached) {
  std::vector<std::uint32_t> adj(out + 1, kNone);
  auto accumulate = [&](std::uint32_t target, Var contrib) {
    if (adj[target] == kNone) {
      adj[target] = contrib.index();
    } else {
      adj[target] = add(Var(this, adj[target]), contrib).index();
    }
  };
  if (nodes_[out].requires_grad) adj[out] = scalar(1.0).index();

  for (std::int64_t idx = out; idx >= 0; --idx) {
    const auto i = static_cast<std::uint32_t>(idx);
    const Node n = nodes_[i];  // copy: pushes below may reallocate
    if (adj[i] == kNone || !n.requires_grad || n.op == Op::Leaf) continue;
    const Var g(this, adj[i]);
    const Var self(this, i);
    const Var a(this, n.a);
    const Var b = n.b != kNone ? Var(this, n.b) : Var{};
    const bool ga_on = nodes_[n.a].requires_grad;
    const bool gb_on = n.b != kNone && nodes_[n.b].requires_grad;

    switch (n.op) {
      case Op::Leaf:
      case Op::Step:
        break;
      case Op::Add:
        if (ga_on) accumulate(n.a, g);
        if (gb_on) accumulate(n.b, g);
        break;
      case Op::Sub:
        if (ga_on) accumulate(n.a, g);
        if (gb_on) accumulate(n.b, scale(g, -1.0));
        break;
      case Op::Mul:
        if (ga_on) accumulate(n.a, mul(g, b));
        if (gb_on) accumulate(n.b, mul(g, a));
        break;
      case Op::Scale:
        accumulate(n.a, scale(g, n.c));
        break;
      case Op::Shift:
        accumulate(n.a, g);
        break;
      case Op::MatMul:
        if (ga_on) {
          accumulate(n.a, n.trans_a ? matmul(b, g, n.trans_b, true)
                                    : matmul(g, b, false, !n.trans_b));
        }
        if (gb_on) {
          accumulate(n.b, n.trans_b ? matmul(g, a, true, n.trans_a)
                                    : matmul(a, g, !n.trans_a, false));
        }
        break;
      case Op::Sigmoid:
        accumulate(n.a, mul(g, mul(self, shift(scale(self, -1.0), 1.0))));
        break;
      case Op::Tanh:
        accumulate(n.a, mul(g, shift(scale(mul(self, self), -1.0), 1.0)));
        break;
      case Op::Relu:
        accumulate(n.a, mul(g, step(a)));
        break;
      case Op::Sum:
        accumulate(n.a, broadcast(g, nodes_[n.a].shape));
        break;
      case Op::BroadcastScalar:
        accumulate(n.a, sum(g));
        break;
      case Op::SumRows:
        accumulate(n.a, broadcast_rows(g, nodes_[n.a].shape.rows));
        break;
      case Op::BroadcastRows:
        accumulate(n.a, sum_rows(g));
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    const std::uint32_t idx = wrt[w].index();
    if (idx <= out && adj[idx] != kNone) {
      reached[w] = true;
      result.emplace_back(this, adj[idx]);
    } else {
      const Shape s = nodes_[idx].shape;
      result.push_back(constant(std::vector<double>(s.size(), 0.0), s));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Operators

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

Var elementwise(Op op, Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError(op_name(op), a.shape(), b.shape());
  return t.push(op, a.shape(), a, b);
}

}  // namespace

Var add(Var a, Var b) { return elementwise(Op::Add, a, b); }
Var sub(Var a, Var b) { return elementwise(Op::Sub, a, b); }
Var mul(Var a, Var b) { return elementwise(Op::Mul, a, b); }
Var scale(Var a, double c) { return a.tape().push(Op::Scale, a.shape(), a, {}, c); }
Var shift(Var a, double c) { return a.tape().push(Op::Shift, a.shape(), a, {}, c); }

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Tape& t = same_tape(a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const std::size_t m = trans_a ? sa.cols : sa.rows;
  const std::size_t ka = trans_a ? sa.rows : sa.cols;
  const std::size_t kb = trans_b ? sb.cols : sb.rows;
  const std::size_t n = trans_b ? sb.rows : sb.cols;
  if (ka != kb) throw ShapeError("matmul", sa, sb);
  return t.push(Op::MatMul, Shape{m, n}, a, b, 0.0, trans_a, trans_b);
}

Var sigmoid(Var a) { return a.tape().push(Op::Sigmoid, a.shape(), a); }
Var tanh(Var a) { return a.tape().push(Op::Tanh, a.shape(), a); }
Var relu(Var a) { return a.tape().push(Op::Relu, a.shape(), a); }
Var step(Var a) { return a.tape().push(Op::Step, a.shape(), a); }
Var sum(Var a) { return a.tape().push(Op::Sum, Shape{}, a); }

Var broadcast(Var scalar, Shape shape) {
  if (scalar.shape().size() != 1) throw ShapeError("broadcast", scalar.shape(), Shape{});
  return scalar.tape().push(Op::BroadcastScalar, shape, scalar);
}

Var sum_rows(Var a) { return a.tape().push(Op::SumRows, Shape{1, a.shape().cols}, a); }

Var broadcast_rows(Var row, std::size_t rows) {
  if (row.shape().rows != 1) throw ShapeError("broadcast_rows", row.shape(), Shape{1, 0});
  return row.tape().push(Op::BroadcastRows, Shape{rows, row.shape().cols}, row);
}

// ---------------------------------------------------------------------------
// Parameter helpers

std::vector<Var> bind(Tape& tape, const ParameterVector& params, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(params.segment_count());
  for (std::size_t i = 0; i < params.segment_count(); ++i) {
    const auto& s = params.segment_info(i);
    auto vals = params.segment(i);
    out.push_back(tape.leaf({vals.begin(), vals.end()}, Shape{s.rows, s.cols}, requires_grad));
  }
  return out;
}

ParameterVector gather(std::span<const Var> segments, const ParameterVector& like) {
  if (segments.size() != like.segment_count()) {
    throw std::invalid_argument("gather: segment count mismatch");
  }
  ParameterVector out = like.like(0.0);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    auto dst = out.segment(i);
    auto src = segments[i].tape().value(segments[i].index());
    if (src.size() != dst.size()) {
      throw ShapeError("gather", segments[i].shape(),
                       Shape{like.segment_info(i).rows, like.segment_info(i).cols});
    }
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

ParameterVector gradient(Var output, std::span<const Var> wrt, const ParameterVector& like,
                         bool* detached) {
  GradResult r = output.tape().grad(output, wrt, false);
  if (detached != nullptr) *detached = r.detached;
  return gather(r.grads, like);
}

double evaluate(const ScalarFunction& f, const ParameterVector& point) {
  Tape tape;
  auto leaves = bind(tape, point, false);
  return f(tape, leaves).value();
}

double grad_check(const ScalarFunction& f, const ParameterVector& point, double h) {
  Tape tape;
  auto leaves = bind(tape, point, true);
  Var out = f(tape, leaves);
  if (std::isnan(out.value())) throw std::domain_error("grad_check: f is NaN at the base point");
  ParameterVector analytic = gradient(out, leaves, point);

  double worst = 0.0;
  ParameterVector probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = evaluate(f, probe);
    probe[i] = point[i] - h;
    const double down = evaluate(f, probe);
    probe[i] = point[i];
    if (std::isnan(up) || std::isnan(down)) {
      throw std::domain_error("grad_check: f is NaN near coordinate " + std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace metawpf::ad
