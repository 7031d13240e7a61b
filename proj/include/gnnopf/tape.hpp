#pragma once

// Reverse-mode differentiation over dense real matrices with a closed
// catalog of primitives. One Tape per worker thread; a tape is rebuilt for
// every evaluation (reset() keeps the node buffers to avoid reallocation).

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "gnnopf/matrix.hpp"

namespace gnnopf::ad {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,    // elementwise
  matmul,
  scale,  // by a scalar
  neg,
  sum,    // to 1 x 1
  gather_rows,
  scatter_rows, // adjoint of gather: out[idx[k]] += in[k]
  slice_cols,
  concat_cols,
  sin,
  cos,
  square,
  magnitude, // sqrt(a^2 + b^2), elementwise
  sigmoid,
  relu,
  tanh,
  bounded_sigmoid, // clamp(lo + (hi - lo) * sigmoid(x), lo, hi), per element
  ext_log,
  shift, // Z -> A Z for a sparse operator A
};

const char* op_name(Op op);

struct Var {
  std::uint32_t id = 0;
};

// Extra, op-specific arguments to record().
struct OpArgs {
  double scalar = 0.0;                 // scale factor / ext_log slope s
  std::span<const std::size_t> index{}; // gather/scatter rows
  std::size_t count = 0;               // scatter output rows / slice width
  std::size_t offset = 0;              // slice first column
  const SparseMatrix* op = nullptr;    // shift operator
  const SparseMatrix* op_t = nullptr;  // and its transpose
  std::span<const double> lo{}, hi{};  // bounded_sigmoid box, one per element
};

class Tape {
public:
  Var parameter(const Matrix& value) { return leaf(value, true); }
  Var constant(const Matrix& value) { return leaf(value, false); }
  Var constant(std::size_t rows, std::size_t cols, std::span<const double> values);
  Var leaf(const Matrix& value, bool requires_grad);

  // Generic entry point; throws ShapeError naming the op and shapes.
  Var record(Op op, std::initializer_list<Var> inputs, const OpArgs& args = {});

  Var add(Var a, Var b) { return record(Op::add, {a, b}); }
  Var sub(Var a, Var b) { return record(Op::sub, {a, b}); }
  Var mul(Var a, Var b) { return record(Op::mul, {a, b}); }
  Var matmul(Var a, Var b) { return record(Op::matmul, {a, b}); }
  Var scale(Var a, double s) { return record(Op::scale, {a}, {.scalar = s}); }
  Var neg(Var a) { return record(Op::neg, {a}); }
  Var sum(Var a) { return record(Op::sum, {a}); }
  Var gather_rows(Var a, std::span<const std::size_t> idx) { return record(Op::gather_rows, {a}, {.index = idx}); }
  Var scatter_rows(Var a, std::span<const std::size_t> idx, std::size_t rows) {
    return record(Op::scatter_rows, {a}, {.index = idx, .count = rows});
  }
  Var slice_cols(Var a, std::size_t first, std::size_t width) {
    return record(Op::slice_cols, {a}, {.count = width, .offset = first});
  }
  Var concat_cols(Var a, Var b) { return record(Op::concat_cols, {a, b}); }
  Var sin(Var a) { return record(Op::sin, {a}); }
  Var cos(Var a) { return record(Op::cos, {a}); }
  Var square(Var a) { return record(Op::square, {a}); }
  Var magnitude(Var re, Var im) { return record(Op::magnitude, {re, im}); }
  Var sigmoid(Var a) { return record(Op::sigmoid, {a}); }
  Var relu(Var a) { return record(Op::relu, {a}); }
  Var tanh(Var a) { return record(Op::tanh, {a}); }
  Var bounded_sigmoid(Var a, std::span<const double> lo, std::span<const double> hi) {
    return record(Op::bounded_sigmoid, {a}, {.lo = lo, .hi = hi});
  }
  Var ext_log(Var a, double s) { return record(Op::ext_log, {a}, {.scalar = s}); }
  Var shift(Var z, const SparseMatrix& a, const SparseMatrix& a_t) {
    return record(Op::shift, {z}, {.op = &a, .op_t = &a_t});
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const;

  // Gradient of the 1 x 1 `root` with respect to every node; throws
  // ShapeError for a non-scalar root. Nodes not reachable get zeros.
  void backward(Var root);
  // Vector-Jacobian product: seeds the root's adjoint with `seed`.
  void backward(Var root, const Matrix& seed);
  // Valid after backward(); zero matrix of the node's shape if unreachable.
  const Matrix& grad(Var v);

  void reset() { count_ = 0; }
  std::size_t size() const { return count_; }

private:
  struct Node {
    Op op = Op::leaf;
    std::int32_t a = -1, b = -1;
    bool requires_grad = false;
    bool has_grad = false;
    OpArgs args;
    Matrix value;
    Matrix grad;
  };

  Node& push(Op op, std::int32_t a, std::int32_t b, const OpArgs& args);
  void forward(Node& n);
  void ensure_grad(Node& n);
  void propagate(Node& n);

  // deque: references to existing nodes stay valid while recording
  std::deque<Node> nodes_;
  std::size_t count_ = 0;
};

// f(x, grad): returns the value at x and, when grad is non-null, writes the
// analytic gradient into it.
using ValueAndGrad = std::function<double(std::span<const double>, std::vector<double>*)>;

struct FdCheck {
  double max_discrepancy = 0.0; // max_i |analytic - central| / max(1, |analytic|)
  std::size_t worst_index = 0;
};

FdCheck finite_difference_check(const ValueAndGrad& f, std::span<const double> point, double h = 1e-5);

} // namespace gnnopf::ad
