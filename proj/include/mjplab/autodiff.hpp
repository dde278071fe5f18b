#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape owns an append-only list of nodes. Every operation on Var handles
// appends one node holding its forward value and a vector-Jacobian product
// closure. The closures are themselves written in terms of Var operations, so
// a backward pass run with create_graph=true records differentiable gradient
// nodes and can be differentiated again (needed for gradient matching).

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mjplab/tensor.hpp"

namespace mjplab {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// needs[i] tells the closure whether input i wants a gradient.
using VjpFn = std::function<std::vector<Var>(const Var& out, const Var& grad, std::span<const char> needs)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);

  /// Appends an operation node. The closure is dropped when no input requires
  /// grad (or while recording under a no-grad backward).
  Var record(Tensor value, std::vector<Var> inputs, VjpFn vjp);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradients of a scalar `loss` with respect to each entry of `wrt`.
  /// Nodes are visited once each in reverse insertion order. Leaves that do
  /// not influence the loss receive zeros. With create_graph the returned
  /// gradients are differentiable functions of the tape's leaves.
  std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph = false);

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    VjpFn vjp;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
  bool recording_grad_ = true;
};

// Elementwise arithmetic with trailing-dimension broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& x) { return neg(x); }
inline Var operator*(const Var& x, double c) { return scale(x, c); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }

Var exp(const Var& x);
Var log(const Var& x);
Var log1p(const Var& x);
Var pow(const Var& x, double exponent);
Var abs(const Var& x);
Var gelu(const Var& x);
/// n-th derivative of the exact (erf) GELU, n in [0, 5].
Var gelu_derivative(const Var& x, int order);

/// Batched matrix product: [..., m, k] x [..., k, n] with broadcast batch dims.
Var matmul(const Var& a, const Var& b);
Var softmax(const Var& x, std::size_t axis);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, std::vector<std::size_t> axes);
/// Swaps the last two axes.
Var transpose(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_axis(const Var& x, std::size_t axis, bool keepdim = true);
Var sum_to(const Var& x, const Shape& shape);
Var broadcast_to(const Var& x, const Shape& shape);

/// Row lookup along axis 0: out[i] = table[ids[i]].
Var gather_rows(const Var& table, std::span<const std::size_t> ids);
/// Adjoint of gather_rows: out has `rows` rows, out[ids[i]] += x[i].
Var scatter_add_rows(const Var& x, std::span<const std::size_t> ids, std::size_t rows);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);
/// Adjoint of slice: zero tensor with `full` entries along axis and x placed at start.
Var embed_slice(const Var& x, std::size_t axis, std::size_t start, std::size_t full);

/// Same value, no gradient path.
Var detach(const Var& x);

// Non-differentiable forward kernels shared with non-taped code.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
}  // namespace kernels

/// Largest coordinate-wise relative error |analytic - fd| / (|analytic| + 1e-8)
/// between `analytic` and central differences of `f` with step h.
/// two_point is (f(x+h) - f(x-h)) / 2h. five_point is the fourth-order
/// stencil (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, whose rounding
/// floor is far lower at a larger h.
using ParamValues = std::map<std::string, Tensor>;
enum class FdStencil { two_point, five_point };
double finite_diff_check(const std::function<double(const ParamValues&)>& f, const ParamValues& params,
                         const ParamValues& analytic, double h = 1e-5, FdStencil stencil = FdStencil::two_point);

}  // namespace mjplab
