#include "mjplab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mjplab {

namespace {

// Strides of `src` expressed in the coordinate system of the broadcast shape
// `out` (0 along broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - src.size();
  for (std::size_t i = src.size(); i-- > 0;) {
    if (src[i] != 1) strides[i + offset] = stride;
    stride *= src[i];
  }
  return strides;
}

// True when `src` with leading unit dims stripped equals the trailing dims of `out`,
// i.e. the flat source index is the flat output index modulo src size.
bool is_trailing_block(const Shape& src, const Shape& out) {
  std::size_t first = 0;
  while (first < src.size() && src[first] == 1) ++first;
  const std::size_t n = src.size() - first;
  if (n > out.size()) return false;
  return std::equal(src.begin() + static_cast<std::ptrdiff_t>(first), src.end(),
                    out.end() - static_cast<std::ptrdiff_t>(n));
}

// Calls fn(flat_out, offset_a, offset_b) for every element of `out`.
template <class Fn>
void walk_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, Fn fn) {
  const std::size_t rank = out.size();
  const std::size_t n = shape_size(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, oa, ob);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <class F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  Tensor out(shape);
  const std::size_t n = out.size();
  if (a.shape() == shape && is_trailing_block(b.shape(), shape)) {
    const std::size_t m = b.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i % m]);
    return out;
  }
  if (b.shape() == shape && is_trailing_block(a.shape(), shape)) {
    const std::size_t m = a.size();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i % m], b[i]);
    return out;
  }
  walk_broadcast(shape, broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape),
                 [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(a[ia], b[ib]); });
  return out;
}

template <class F>
Tensor unary_kernel(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

Tensor reduce_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(shape, x.shape()) != x.shape()) {
    throw ShapeError("cannot reduce shape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(shape);
  if (is_trailing_block(shape, x.shape())) {
    const std::size_t m = out.size();
    for (std::size_t i = 0; i < x.size(); ++i) out[i % m] += x[i];
    return out;
  }
  const std::vector<std::size_t> sx(x.rank(), 0);
  walk_broadcast(x.shape(), broadcast_strides(shape, x.shape()), sx,
                 [&](std::size_t i, std::size_t io, std::size_t) { out[io] += x[i]; });
  return out;
}

Tensor expand_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast shape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(shape);
  if (is_trailing_block(x.shape(), shape)) {
    const std::size_t m = x.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i % m];
    return out;
  }
  const std::vector<std::size_t> so(shape.size(), 0);
  walk_broadcast(shape, broadcast_strides(x.shape(), shape), so,
                 [&](std::size_t i, std::size_t ix, std::size_t) { out[i] = x[ix]; });
  return out;
}

void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("operation on an empty Var");
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double gelu_nth(double x, int order) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = normal_pdf(x);
  const double x2 = x * x;
  switch (order) {
    case 0: return x * cdf;
    case 1: return cdf + x * pdf;
    case 2: return pdf * (2.0 - x2);
    case 3: return pdf * (x2 * x - 4.0 * x);
    case 4: return pdf * (-x2 * x2 + 7.0 * x2 - 4.0);
    case 5: return pdf * (x2 * x2 * x - 11.0 * x2 * x + 18.0 * x);
    default: throw std::invalid_argument("gelu derivative order " + std::to_string(order) + " not supported");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2]) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  auto kernel = [&](std::size_t flat, std::size_t ia, std::size_t ib) {
    const double* pa = ad.data() + ia * m * k;
    const double* pb = bd.data() + ib * k * n;
    double* po = od.data() + flat * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* row = po + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        const double* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  };
  if (batch.empty()) {
    kernel(0, 0, 0);
  } else {
    walk_broadcast(batch, broadcast_strides(batch_a, batch), broadcast_strides(batch_b, batch), kernel);
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (!x.all_finite()) throw NumericError("softmax input contains non-finite values");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return out;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute axes do not match shape " + shape_str(x.shape()));
  std::vector<char> seen(rank, 0);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("invalid permutation for shape " + shape_str(x.shape()));
    seen[a] = 1;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  Tensor out(out_shape);
  const std::vector<std::size_t> zero(rank, 0);
  walk_broadcast(out_shape, strides, zero, [&](std::size_t i, std::size_t ix, std::size_t) { out[i] = x[ix]; });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = true;
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, VjpFn vjp) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  bool rg = false;
  for (const Var& v : inputs) {
    if (!v.valid() || &v.tape() != this) throw std::invalid_argument("input recorded on a different tape");
    node.inputs.push_back(v.id());
    rg = rg || requires_grad(v.id());
  }
  node.requires_grad = rg && recording_grad_;
  if (node.requires_grad) node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<Var> Tape::grad(const Var& loss, std::span<const Var> wrt, bool create_graph) {
  if (!loss.valid() || &loss.tape() != this) throw std::invalid_argument("loss is not on this tape");
  if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  const auto last = static_cast<std::size_t>(loss.id());

  std::vector<char> relevant(last + 1, 0);
  for (const Var& w : wrt) {
    if (!w.valid() || &w.tape() != this) throw std::invalid_argument("gradient target is not on this tape");
    if (!w.requires_grad()) throw std::invalid_argument("gradient requested for a Var that does not require grad");
    if (static_cast<std::size_t>(w.id()) <= last) relevant[static_cast<std::size_t>(w.id())] = 1;
  }
  for (std::size_t i = 0; i <= last; ++i) {
    if (relevant[i] || !nodes_[i].requires_grad) continue;
    for (int in : nodes_[i].inputs) {
      if (relevant[static_cast<std::size_t>(in)]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  const bool saved = recording_grad_;
  recording_grad_ = create_graph;
  std::vector<Var> grads(last + 1);
  try {
    grads[last] = constant(Tensor::ones(loss.shape()));
    std::vector<char> needs;
    for (std::size_t i = last + 1; i-- > 0;) {
      if (!relevant[i] || !grads[i].valid()) continue;
      const Node& node = nodes_[i];
      if (!node.vjp) continue;
      needs.assign(node.inputs.size(), 0);
      for (std::size_t j = 0; j < node.inputs.size(); ++j) needs[j] = relevant[static_cast<std::size_t>(node.inputs[j])];
      const std::vector<Var> in_grads = node.vjp(Var(this, static_cast<int>(i)), grads[i], needs);
      for (std::size_t j = 0; j < node.inputs.size(); ++j) {
        if (!needs[j] || !in_grads[j].valid()) continue;
        Var& slot = grads[static_cast<std::size_t>(node.inputs[j])];
        slot = slot.valid() ? add(slot, in_grads[j]) : in_grads[j];
      }
    }
  } catch (...) {
    recording_grad_ = saved;
    throw;
  }
  recording_grad_ = saved;

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto id = static_cast<std::size_t>(w.id());
    if (id <= last && grads[id].valid()) {
      out.push_back(grads[id]);
    } else {
      out.push_back(constant(Tensor::zeros(w.shape())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  Shape sa = a.shape(), sb = b.shape();
  return a.tape().record(binary_kernel(a.value(), b.value(), std::plus<>()), {a, b},
                         [sa, sb](const Var&, const Var& g, std::span<const char> needs) {
                           return std::vector<Var>{needs[0] ? sum_to(g, sa) : Var{}, needs[1] ? sum_to(g, sb) : Var{}};
                         });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  Shape sa = a.shape(), sb = b.shape();
  return a.tape().record(binary_kernel(a.value(), b.value(), std::minus<>()), {a, b},
                         [sa, sb](const Var&, const Var& g, std::span<const char> needs) {
                           return std::vector<Var>{needs[0] ? sum_to(g, sa) : Var{},
                                                   needs[1] ? sum_to(neg(g), sb) : Var{}};
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  return a.tape().record(binary_kernel(a.value(), b.value(), std::multiplies<>()), {a, b},
                         [a, b](const Var&, const Var& g, std::span<const char> needs) {
                           return std::vector<Var>{needs[0] ? sum_to(mul(g, b), a.shape()) : Var{},
                                                   needs[1] ? sum_to(mul(g, a), b.shape()) : Var{}};
                         });
}

Var div(const Var& a, const Var& b) { return mul(a, pow(b, -1.0)); }

Var neg(const Var& x) { return scale(x, -1.0); }

Var scale(const Var& x, double factor) {
  return x.tape().record(unary_kernel(x.value(), [factor](double v) { return v * factor; }), {x},
                         [factor](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{scale(g, factor)};
                         });
}

Var add_scalar(const Var& x, double offset) {
  return x.tape().record(unary_kernel(x.value(), [offset](double v) { return v + offset; }), {x},
                         [](const Var&, const Var& g, std::span<const char>) { return std::vector<Var>{g}; });
}

Var exp(const Var& x) {
  return x.tape().record(unary_kernel(x.value(), [](double v) { return std::exp(v); }), {x},
                         [](const Var& out, const Var& g, std::span<const char>) {
                           return std::vector<Var>{mul(g, out)};
                         });
}

Var log(const Var& x) {
  return x.tape().record(unary_kernel(x.value(), [](double v) { return std::log(v); }), {x},
                         [x](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{mul(g, pow(x, -1.0))};
                         });
}

Var log1p(const Var& x) {
  return x.tape().record(unary_kernel(x.value(), [](double v) { return std::log1p(v); }), {x},
                         [x](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{mul(g, pow(add_scalar(x, 1.0), -1.0))};
                         });
}

Var pow(const Var& x, double exponent) {
  return x.tape().record(unary_kernel(x.value(), [exponent](double v) { return std::pow(v, exponent); }), {x},
                         [x, exponent](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{mul(g, scale(pow(x, exponent - 1.0), exponent))};
                         });
}

Var abs(const Var& x) {
  return x.tape().record(unary_kernel(x.value(), [](double v) { return std::abs(v); }), {x},
                         [x](const Var&, const Var& g, std::span<const char>) {
                           Tensor sign = unary_kernel(x.value(), [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
                           return std::vector<Var>{mul(g, x.tape().constant(std::move(sign)))};
                         });
}

Var gelu_derivative(const Var& x, int order) {
  if (order < 0 || order > 5) throw std::invalid_argument("gelu derivative order out of range");
  return x.tape().record(unary_kernel(x.value(), [order](double v) { return gelu_nth(v, order); }), {x},
                         [x, order](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{mul(g, gelu_derivative(x, order + 1))};
                         });
}

Var gelu(const Var& x) { return gelu_derivative(x, 0); }

// ---------------------------------------------------------------------------
// Linear algebra and normalization

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  return a.tape().record(kernels::matmul(a.value(), b.value()), {a, b},
                         [a, b](const Var&, const Var& g, std::span<const char> needs) {
                           return std::vector<Var>{needs[0] ? sum_to(matmul(g, transpose(b)), a.shape()) : Var{},
                                                   needs[1] ? sum_to(matmul(transpose(a), g), b.shape()) : Var{}};
                         });
}

Var softmax(const Var& x, std::size_t axis) {
  return x.tape().record(kernels::softmax(x.value(), axis), {x},
                         [axis](const Var& out, const Var& g, std::span<const char>) {
                           const Var gy = mul(g, out);
                           return std::vector<Var>{sub(gy, mul(out, sum_axis(gy, axis, true)))};
                         });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (x.shape().empty()) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t axis = x.shape().size() - 1;
  const double inv_d = 1.0 / static_cast<double>(x.shape()[axis]);
  const Var centered = sub(x, scale(sum_axis(x, axis, true), inv_d));
  const Var var = scale(sum_axis(mul(centered, centered), axis, true), inv_d);
  const Var normed = mul(centered, pow(add_scalar(var, eps), -0.5));
  return add(mul(normed, gain), bias);
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(const Var& x, Shape shape) {
  if (shape == x.shape()) return x;
  Shape original = x.shape();
  return x.tape().record(x.value().reshaped(std::move(shape)), {x},
                         [original](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{reshape(g, original)};
                         });
}

Var permute(const Var& x, std::vector<std::size_t> axes) {
  std::vector<std::size_t> inverse(axes.size());
  Tensor value = kernels::permute(x.value(), axes);
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  return x.tape().record(std::move(value), {x},
                         [inverse](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{permute(g, inverse)};
                         });
}

Var transpose(const Var& x) {
  if (x.shape().size() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, std::move(axes));
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  Shape original = x.shape();
  return x.tape().record(Tensor::scalar(total), {x}, [original](const Var&, const Var& g, std::span<const char>) {
    return std::vector<Var>{broadcast_to(g, original)};
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var sum_axis(const Var& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape kept = x.shape();
  kept[axis] = 1;
  Tensor out(kept);
  const Tensor& v = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const std::size_t base = (o * s.n + j) * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += v[base + in];
    }
  }
  if (!keepdim) {
    Shape squeezed = x.shape();
    squeezed.erase(squeezed.begin() + static_cast<std::ptrdiff_t>(axis));
    out = out.reshaped(std::move(squeezed));
  }
  Shape original = x.shape();
  return x.tape().record(std::move(out), {x},
                         [original, kept](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{broadcast_to(reshape(g, kept), original)};
                         });
}

Var sum_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape original = x.shape();
  return x.tape().record(reduce_to(x.value(), shape), {x},
                         [original](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{broadcast_to(g, original)};
                         });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape original = x.shape();
  return x.tape().record(expand_to(x.value(), shape), {x},
                         [original](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{sum_to(g, original)};
                         });
}

// ---------------------------------------------------------------------------
// Indexing

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  if (t.rank() < 1) throw ShapeError("gather_rows needs a table of rank >= 1");
  const std::size_t rows = t.shape()[0];
  const std::size_t width = rows ? t.size() / rows : 0;
  Shape out_shape = t.shape();
  out_shape[0] = ids.size();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw ShapeError("gather index " + std::to_string(ids[i]) + " out of range for table " + shape_str(t.shape()));
    }
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<std::size_t> index(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table},
                             [index, rows](const Var&, const Var& g, std::span<const char>) {
                               return std::vector<Var>{scatter_add_rows(g, index, rows)};
                             });
}

Var scatter_add_rows(const Var& x, std::span<const std::size_t> ids, std::size_t rows) {
  const Tensor& v = x.value();
  if (v.rank() < 1 || v.shape()[0] != ids.size()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(ids.size()) + " ids for shape " + shape_str(v.shape()));
  }
  const std::size_t width = ids.empty() ? shape_size(Shape(v.shape().begin() + 1, v.shape().end())) : v.size() / ids.size();
  Shape out_shape = v.shape();
  out_shape[0] = rows;
  Tensor out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) throw ShapeError("scatter index out of range");
    for (std::size_t j = 0; j < width; ++j) out[ids[i] * width + j] += v[i * width + j];
  }
  std::vector<std::size_t> index(ids.begin(), ids.end());
  return x.tape().record(std::move(out), {x}, [index](const Var&, const Var& g, std::span<const char>) {
    return std::vector<Var>{gather_rows(g, index)};
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for shape " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lengths;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
    lengths.push_back(s[axis]);
  }
  const AxisSplit total = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t chunk = lengths[p] * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * total.n + offset) * total.inner));
    }
    offset += lengths[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), inputs,
                                [axis, lengths](const Var&, const Var& g, std::span<const char> needs) {
                                  std::vector<Var> grads(lengths.size());
                                  std::size_t start = 0;
                                  for (std::size_t i = 0; i < lengths.size(); ++i) {
                                    if (needs[i]) grads[i] = slice(g, axis, start, lengths[i]);
                                    start += lengths[i];
                                  }
                                  return grads;
                                });
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (start + length > s.n) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const Tensor& v = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>((o * s.n + start) * s.inner), length * s.inner,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  }
  const std::size_t full = s.n;
  return x.tape().record(std::move(out), {x},
                         [axis, start, full](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{embed_slice(g, axis, start, full)};
                         });
}

Var embed_slice(const Var& x, std::size_t axis, std::size_t start, std::size_t full) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (start + s.n > full) throw ShapeError("embed_slice range exceeds target length");
  Shape out_shape = x.shape();
  out_shape[axis] = full;
  Tensor out(out_shape);
  const Tensor& v = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner), s.n * s.inner,
                out.data().begin() + static_cast<std::ptrdiff_t>((o * full + start) * s.inner));
  }
  const std::size_t length = s.n;
  return x.tape().record(std::move(out), {x},
                         [axis, start, length](const Var&, const Var& g, std::span<const char>) {
                           return std::vector<Var>{slice(g, axis, start, length)};
                         });
}

Var detach(const Var& x) { return x.tape().constant(x.value()); }

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<double(const ParamValues&)>& f, const ParamValues& params,
                         const ParamValues& analytic, double h, FdStencil stencil) {
  double worst = 0.0;
  ParamValues probe = params;
  for (const auto& [name, value] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw std::invalid_argument("no analytic gradient for " + name);
    if (it->second.shape() != value.shape()) {
      throw ShapeError("gradient shape " + shape_str(it->second.shape()) + " does not match parameter " + name +
                       " shape " + shape_str(value.shape()));
    }
    Tensor& slot = probe.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = slot[i];
      const auto at = [&](double offset) {
        slot[i] = original + offset;
        const double v = f(probe);
        slot[i] = original;
        return v;
      };
      double numeric;
      if (stencil == FdStencil::two_point) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        // differences first, so a locally constant f gives exactly zero
        numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      }
      const double a = it->second[i];
      worst = std::max(worst, std::abs(a - numeric) / (std::abs(a) + 1e-8));
    }
  }
  return worst;
}

}  // namespace mjplab
