#include "gnnopf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gnnopf/error.hpp"
#include "gnnopf/kernels.hpp"

namespace gnnopf::ad {

const char* op_name(Op op) {
  switch (op) {
  case Op::leaf: return "leaf";
  case Op::add: return "add";
  case Op::sub: return "subtract";
  case Op::mul: return "elementwise-multiply";
  case Op::matmul: return "matrix-multiply";
  case Op::scale: return "scalar-scale";
  case Op::neg: return "negate";
  case Op::sum: return "sum-reduce";
  case Op::gather_rows: return "gather-rows";
  case Op::scatter_rows: return "scatter-rows";
  case Op::slice_cols: return "slice-cols";
  case Op::concat_cols: return "concat-cols";
  case Op::sin: return "sin";
  case Op::cos: return "cos";
  case Op::square: return "square";
  case Op::magnitude: return "magnitude";
  case Op::sigmoid: return "sigmoid";
  case Op::relu: return "relu";
  case Op::tanh: return "tanh";
  case Op::bounded_sigmoid: return "bounded-sigmoid";
  case Op::ext_log: return "extended-log";
  case Op::shift: return "graph-shift";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_fail(Op op, const Matrix& a, const Matrix* b, const std::string& detail = {}) {
  std::string msg = std::string(op_name(op)) + ": incompatible shapes " + shape_str(a);
  if (b) msg += " and " + shape_str(*b);
  if (!detail.empty()) msg += " (" + detail + ")";
  throw ShapeError(msg);
}

// Extended logarithm: log(u) for u >= 1/s, linear continuation with slope s
// below the knot. The printed form s(u + 1/s) - log(1/s) is discontinuous at
// u = 1/s; this is the continuous version whose derivative is min(1/u, s).
inline double ext_log_value(double u, double s) {
  const double knot = 1.0 / s;
  return u >= knot ? std::log(u) : s * (u - knot) + std::log(knot);
}
inline double ext_log_slope(double u, double s) { return u >= 1.0 / s ? 1.0 / u : s; }

inline double sigmoid_value(double x) {
  // Split by sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

Var Tape::leaf(const Matrix& value, bool requires_grad) {
  Node& n = push(Op::leaf, -1, -1, {});
  n.value.rows = value.rows;
  n.value.cols = value.cols;
  n.value.data.assign(value.data.begin(), value.data.end());
  n.requires_grad = requires_grad;
  return {static_cast<std::uint32_t>(count_ - 1)};
}

Var Tape::constant(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw ShapeError("constant: value count does not match shape");
  Node& n = push(Op::leaf, -1, -1, {});
  n.value.rows = rows;
  n.value.cols = cols;
  n.value.data.assign(values.begin(), values.end());
  n.requires_grad = false;
  return {static_cast<std::uint32_t>(count_ - 1)};
}

Tape::Node& Tape::push(Op op, std::int32_t a, std::int32_t b, const OpArgs& args) {
  if (count_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[count_++];
  n.op = op;
  n.a = a;
  n.b = b;
  n.args = args;
  n.has_grad = false;
  n.requires_grad = false;
  return n;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.size() != 1) throw ShapeError("scalar(): node has shape " + shape_str(m));
  return m.data[0];
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, const OpArgs& args) {
  const bool binary = op == Op::add || op == Op::sub || op == Op::mul || op == Op::matmul || op == Op::concat_cols ||
                      op == Op::magnitude;
  if (op == Op::leaf) throw ShapeError("record: leaves are created with parameter()/constant()");
  if (inputs.size() != (binary ? 2u : 1u)) {
    throw ShapeError(std::string(op_name(op)) + ": expected " + (binary ? "2" : "1") + " inputs");
  }
  const std::int32_t ia = static_cast<std::int32_t>(inputs.begin()[0].id);
  const std::int32_t ib = binary ? static_cast<std::int32_t>(inputs.begin()[1].id) : -1;
  if (static_cast<std::size_t>(ia) >= count_ || (binary && static_cast<std::size_t>(ib) >= count_)) {
    throw ShapeError(std::string(op_name(op)) + ": input is not on this tape");
  }

  {
    const Matrix& a = nodes_[ia].value;
    const Matrix* b = binary ? &nodes_[ib].value : nullptr;
    switch (op) {
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::magnitude:
      if (!a.same_shape(*b)) shape_fail(op, a, b);
      break;
    case Op::matmul:
      if (a.cols != b->rows) shape_fail(op, a, b);
      break;
    case Op::concat_cols:
      if (a.rows != b->rows) shape_fail(op, a, b);
      break;
    case Op::gather_rows:
      for (std::size_t r : args.index)
        if (r >= a.rows) shape_fail(op, a, nullptr, "row index " + std::to_string(r) + " out of range");
      break;
    case Op::scatter_rows:
      if (args.index.size() != a.rows) shape_fail(op, a, nullptr, "index length " + std::to_string(args.index.size()));
      for (std::size_t r : args.index)
        if (r >= args.count) shape_fail(op, a, nullptr, "target row " + std::to_string(r) + " out of range");
      break;
    case Op::slice_cols:
      if (args.offset + args.count > a.cols) shape_fail(op, a, nullptr, "columns [" + std::to_string(args.offset) + ", " +
                                                                    std::to_string(args.offset + args.count) + ")");
      break;
    case Op::shift:
      if (!args.op || !args.op_t || args.op->n != a.rows) {
        shape_fail(op, a, nullptr, "operator size " + std::to_string(args.op ? args.op->n : 0));
      }
      break;
    case Op::bounded_sigmoid:
      if (args.lo.size() != a.size() || args.hi.size() != a.size()) shape_fail(op, a, nullptr, "box size mismatch");
      for (std::size_t i = 0; i < a.size(); ++i)
        if (!(args.lo[i] <= args.hi[i])) shape_fail(op, a, nullptr, "lower bound exceeds upper bound");
      break;
    case Op::ext_log:
      if (!(args.scalar > 0.0)) shape_fail(op, a, nullptr, "slope s must be positive");
      break;
    default:
      break;
    }
  }

  Node& n = push(op, ia, ib, args);
  n.requires_grad = nodes_[ia].requires_grad || (binary && nodes_[ib].requires_grad);
  forward(n);
  return {static_cast<std::uint32_t>(count_ - 1)};
}

void Tape::forward(Node& n) {
  const auto& k = kernels::active();
  const Matrix& a = nodes_[n.a].value;
  const Matrix* b = n.b >= 0 ? &nodes_[n.b].value : nullptr;
  Matrix& out = n.value;
  auto unary = [&](auto f) {
    out.reshape_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  };
  switch (n.op) {
  case Op::leaf:
    break;
  case Op::add:
    out.reshape_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b->data[i];
    break;
  case Op::sub:
    out.reshape_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] - b->data[i];
    break;
  case Op::mul:
    out.reshape_zero(a.rows, a.cols);
    k.hadamard_acc(a.size(), a.data.data(), b->data.data(), out.data.data());
    break;
  case Op::matmul:
    out.reshape_zero(a.rows, b->cols);
    k.gemm_nn_acc(a.rows, a.cols, b->cols, a.data.data(), b->data.data(), out.data.data());
    break;
  case Op::scale: {
    const double s = n.args.scalar;
    unary([s](double x) { return s * x; });
    break;
  }
  case Op::neg:
    unary([](double x) { return -x; });
    break;
  case Op::sum: {
    out.reshape_zero(1, 1);
    double acc = 0.0;
    for (double x : a.data) acc += x;
    out.data[0] = acc;
    break;
  }
  case Op::gather_rows:
    out.reshape_zero(n.args.index.size(), a.cols);
    for (std::size_t r = 0; r < n.args.index.size(); ++r) {
      std::copy_n(a.data.data() + n.args.index[r] * a.cols, a.cols, out.data.data() + r * a.cols);
    }
    break;
  case Op::scatter_rows:
    out.reshape_zero(n.args.count, a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
      k.axpy(a.cols, 1.0, a.data.data() + r * a.cols, out.data.data() + n.args.index[r] * a.cols);
    }
    break;
  case Op::slice_cols:
    out.reshape_zero(a.rows, n.args.count);
    for (std::size_t r = 0; r < a.rows; ++r)
      for (std::size_t c = 0; c < n.args.count; ++c) out(r, c) = a(r, n.args.offset + c);
    break;
  case Op::concat_cols:
    out.reshape_zero(a.rows, a.cols + b->cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < a.cols; ++c) out(r, c) = a(r, c);
      for (std::size_t c = 0; c < b->cols; ++c) out(r, a.cols + c) = (*b)(r, c);
    }
    break;
  case Op::sin:
    unary([](double x) { return std::sin(x); });
    break;
  case Op::cos:
    unary([](double x) { return std::cos(x); });
    break;
  case Op::square:
    unary([](double x) { return x * x; });
    break;
  case Op::magnitude:
    out.reshape_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = std::hypot(a.data[i], b->data[i]);
    break;
  case Op::sigmoid:
    unary(sigmoid_value);
    break;
  case Op::relu:
    unary([](double x) { return x > 0.0 ? x : 0.0; });
    break;
  case Op::tanh:
    unary([](double x) { return std::tanh(x); });
    break;
  case Op::bounded_sigmoid:
    out.reshape_zero(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double lo = n.args.lo[i], hi = n.args.hi[i];
      // clamp: lo + (hi - lo) * 1.0 may round one ulp past hi
      out.data[i] = std::clamp(lo + (hi - lo) * sigmoid_value(a.data[i]), lo, hi);
    }
    break;
  case Op::ext_log: {
    const double s = n.args.scalar;
    unary([s](double u) { return ext_log_value(u, s); });
    break;
  }
  case Op::shift:
    out.reshape_zero(a.rows, a.cols);
    k.spmm_acc(*n.args.op, a.cols, a.data.data(), out.data.data());
    break;
  }
}

void Tape::ensure_grad(Node& n) {
  if (!n.has_grad) {
    n.grad.reshape_zero(n.value.rows, n.value.cols);
    n.has_grad = true;
  }
}

const Matrix& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  ensure_grad(n);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.id >= count_) throw ShapeError("backward: root is not on this tape");
  const Matrix& v = nodes_[root.id].value;
  if (v.rows != 1 || v.cols != 1) throw ShapeError("backward: root must be 1x1, got " + shape_str(v));
  Matrix one(1, 1);
  one.data[0] = 1.0;
  backward(root, one);
}

void Tape::backward(Var root, const Matrix& seed) {
  if (root.id >= count_) throw ShapeError("backward: root is not on this tape");
  Node& r = nodes_[root.id];
  if (!seed.same_shape(r.value)) throw ShapeError("backward: seed " + shape_str(seed) + " vs root " + shape_str(r.value));
  for (std::size_t i = 0; i < count_; ++i) nodes_[i].has_grad = false;
  ensure_grad(r);
  r.grad.data = seed.data;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.op == Op::leaf || !n.has_grad || !n.requires_grad) continue;
    propagate(n);
  }
}

void Tape::propagate(Node& n) {
  const auto& k = kernels::active();
  Node& na = nodes_[n.a];
  Node* nb = n.b >= 0 ? &nodes_[n.b] : nullptr;
  const Matrix& g = n.grad;
  const Matrix& a = na.value;
  const bool want_a = na.requires_grad;
  const bool want_b = nb && nb->requires_grad;
  if (want_a) ensure_grad(na);
  if (want_b) ensure_grad(*nb);
  double* ga = want_a ? na.grad.data.data() : nullptr;
  double* gb = want_b ? nb->grad.data.data() : nullptr;
  const std::size_t sz = g.size();

  switch (n.op) {
  case Op::leaf:
    break;
  case Op::add:
    if (ga) k.axpy(sz, 1.0, g.data.data(), ga);
    if (gb) k.axpy(sz, 1.0, g.data.data(), gb);
    break;
  case Op::sub:
    if (ga) k.axpy(sz, 1.0, g.data.data(), ga);
    if (gb) k.axpy(sz, -1.0, g.data.data(), gb);
    break;
  case Op::mul:
    if (ga) k.hadamard_acc(sz, g.data.data(), nb->value.data.data(), ga);
    if (gb) k.hadamard_acc(sz, g.data.data(), a.data.data(), gb);
    break;
  case Op::matmul: {
    const Matrix& b = nb->value;
    if (ga) k.gemm_nt_acc(a.rows, a.cols, b.cols, g.data.data(), b.data.data(), ga);
    if (gb) k.gemm_tn_acc(a.rows, a.cols, b.cols, a.data.data(), g.data.data(), gb);
    break;
  }
  case Op::scale:
    if (ga) k.axpy(sz, n.args.scalar, g.data.data(), ga);
    break;
  case Op::neg:
    if (ga) k.axpy(sz, -1.0, g.data.data(), ga);
    break;
  case Op::sum:
    if (ga) {
      const double s = g.data[0];
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += s;
    }
    break;
  case Op::gather_rows:
    if (ga) {
      for (std::size_t r = 0; r < n.args.index.size(); ++r) {
        k.axpy(a.cols, 1.0, g.data.data() + r * a.cols, ga + n.args.index[r] * a.cols);
      }
    }
    break;
  case Op::scatter_rows:
    if (ga) {
      for (std::size_t r = 0; r < a.rows; ++r) {
        k.axpy(a.cols, 1.0, g.data.data() + n.args.index[r] * a.cols, ga + r * a.cols);
      }
    }
    break;
  case Op::slice_cols:
    if (ga) {
      for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < n.args.count; ++c) ga[r * a.cols + n.args.offset + c] += g(r, c);
    }
    break;
  case Op::concat_cols: {
    const Matrix& b = nb->value;
    for (std::size_t r = 0; r < a.rows; ++r) {
      if (ga)
        for (std::size_t c = 0; c < a.cols; ++c) ga[r * a.cols + c] += g(r, c);
      if (gb)
        for (std::size_t c = 0; c < b.cols; ++c) gb[r * b.cols + c] += g(r, a.cols + c);
    }
    break;
  }
  case Op::sin:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g.data[i] * std::cos(a.data[i]);
    break;
  case Op::cos:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) ga[i] -= g.data[i] * std::sin(a.data[i]);
    break;
  case Op::square:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) ga[i] += 2.0 * a.data[i] * g.data[i];
    break;
  case Op::magnitude: {
    const Matrix& b = nb->value;
    for (std::size_t i = 0; i < sz; ++i) {
      const double r = n.value.data[i];
      if (r == 0.0) continue;
      if (ga) ga[i] += g.data[i] * a.data[i] / r;
      if (gb) gb[i] += g.data[i] * b.data[i] / r;
    }
    break;
  }
  case Op::sigmoid:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) {
        const double y = n.value.data[i];
        ga[i] += g.data[i] * y * (1.0 - y);
      }
    break;
  case Op::relu:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i)
        if (a.data[i] > 0.0) ga[i] += g.data[i];
    break;
  case Op::tanh:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) {
        const double y = n.value.data[i];
        ga[i] += g.data[i] * (1.0 - y * y);
      }
    break;
  case Op::bounded_sigmoid:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) {
        const double y = sigmoid_value(a.data[i]);
        ga[i] += g.data[i] * (n.args.hi[i] - n.args.lo[i]) * y * (1.0 - y);
      }
    break;
  case Op::ext_log:
    if (ga)
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g.data[i] * ext_log_slope(a.data[i], n.args.scalar);
    break;
  case Op::shift:
    if (ga) k.spmm_acc(*n.args.op_t, a.cols, g.data.data(), ga);
    break;
  }
}

FdCheck finite_difference_check(const ValueAndGrad& f, std::span<const double> point, double h) {
  std::vector<double> analytic(point.size());
  f(point, &analytic);
  std::vector<double> x(point.begin(), point.end());
  FdCheck out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x, nullptr);
    x[i] = x0 - h;
    const double fm = f(x, nullptr);
    x[i] = x0;
    const double central = (fp - fm) / (2.0 * h);
    const double d = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    if (d > out.max_discrepancy) {
      out.max_discrepancy = d;
      out.worst_index = i;
    }
  }
  return out;
}

} // namespace gnnopf::ad
