#pragma once

// Tape-based reverse-mode differentiation over real and complex tensors.
//
// A Tape owns every node created while evaluating an expression. Nodes are
// appended in evaluation order, so the tape is already topologically sorted
// and backward() visits it once in reverse.

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "uno/fft.hpp"
#include "uno/tensor.hpp"

namespace uno::ad {

enum class Kind {
  Leaf,
  Add,
  Sub,
  Scale,
  Mul,
  ChannelLinear,
  ComplexMul,
  ModeMix,
  Gelu,
  Concat,
  Slice,
  ModeTruncate,
  ModeEmbed,
  Rfft,
  Irfft,
  Resample,
  Sum,
  Mean,
  RelativeL2,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Leaf: return "leaf";
    case Kind::Add: return "add";
    case Kind::Sub: return "sub";
    case Kind::Scale: return "scalar-mul";
    case Kind::Mul: return "elementwise-mul";
    case Kind::ChannelLinear: return "channel-linear";
    case Kind::ComplexMul: return "complex-mul";
    case Kind::ModeMix: return "mode-mix";
    case Kind::Gelu: return "gelu";
    case Kind::Concat: return "concat-channels";
    case Kind::Slice: return "slice";
    case Kind::ModeTruncate: return "mode-truncate";
    case Kind::ModeEmbed: return "pad-zeros";
    case Kind::Rfft: return "rfft-nd";
    case Kind::Irfft: return "irfft-nd";
    case Kind::Resample: return "linear-interp-resample";
    case Kind::Sum: return "sum";
    case Kind::Mean: return "mean";
    case Kind::RelativeL2: return "relative-l2";
  }
  return "?";
}

using Value = std::variant<Tensor, ComplexTensor>;

inline const Shape& shape_of(const Value& v) {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, v);
}

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const ComplexTensor& cvalue() const;
  bool is_complex() const;
  const Shape& shape() const;
};

struct Node {
  Kind kind = Kind::Leaf;
  std::vector<std::size_t> inputs;
  Value value;
  std::optional<Value> grad;
  bool is_param = false;
  // Accumulates this node's gradient into the gradients of its inputs.
  std::function<void(Tape&, std::size_t)> adjoint;
};

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  Node& node(std::size_t id) { return nodes_.at(id); }

  Var leaf(Value v, bool is_param = false) {
    Node n;
    n.value = std::move(v);
    n.is_param = is_param;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }
  Var param(Value v) { return leaf(std::move(v), true); }
  Var constant(Value v) { return leaf(std::move(v), false); }

  Var push(Kind kind, std::vector<std::size_t> inputs, Value out,
           std::function<void(Tape&, std::size_t)> adjoint) {
    const bool finite = std::visit([](const auto& t) { return all_finite(t.data()); }, out);
    if (!finite)
      throw NumericalError(std::string("non-finite output from primitive ") + kind_name(kind));
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.value = std::move(out);
    if (recording_) n.adjoint = std::move(adjoint);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor& real(std::size_t id) const {
    const auto* t = std::get_if<Tensor>(&nodes_.at(id).value);
    if (!t) throw ShapeError("expected a real tensor operand");
    return *t;
  }
  const ComplexTensor& complex(std::size_t id) const {
    const auto* t = std::get_if<ComplexTensor>(&nodes_.at(id).value);
    if (!t) throw ShapeError("expected a complex tensor operand");
    return *t;
  }

  const Tensor& real_grad(std::size_t id) const { return std::get<Tensor>(*nodes_.at(id).grad); }
  const ComplexTensor& complex_grad(std::size_t id) const {
    return std::get<ComplexTensor>(*nodes_.at(id).grad);
  }
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.has_value(); }

  /// Gradient of a node, or zeros if nothing flowed into it.
  Value grad_or_zero(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad) return *n.grad;
    return std::visit([](const auto& t) -> Value {
      using T = std::decay_t<decltype(t)>;
      return T(t.shape());
    }, n.value);
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto& dst = std::get<Tensor>(*n.grad);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
  }
  void accumulate(std::size_t id, const ComplexTensor& g) {
    Node& n = nodes_.at(id);
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto& dst = std::get<ComplexTensor>(*n.grad);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
  }

  /// Reverse sweep seeded at `output`; gradients land in Node::grad.
  void backward(Var output, const Value& seed) {
    if (!recording_) throw std::logic_error("backward on a non-recording tape");
    if (output.tape != this || output.id >= nodes_.size())
      throw std::invalid_argument("backward: output does not belong to this tape");
    if (seed.index() != nodes_[output.id].value.index() ||
        shape_of(seed) != shape_of(nodes_[output.id].value))
      throw ShapeError("backward: seed shape " + to_string(shape_of(seed)) +
                       " does not match output shape " +
                       to_string(shape_of(nodes_[output.id].value)));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      for (auto in : nodes_[i].inputs)
        if (in >= i) throw std::logic_error("backward: cycle detected in tape");
      nodes_[i].grad.reset();
    }
    nodes_[output.id].grad = seed;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.adjoint) continue;
      n.adjoint(*this, i);
    }
  }

  /// Convenience: seed a scalar output with 1.
  void backward(Var output) {
    const auto& v = real(output.id);
    backward(output, Tensor(v.shape(), 1.0));
  }

 private:
  bool recording_;
  // deque: references to existing nodes survive appends.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->real(id); }
inline const ComplexTensor& Var::cvalue() const { return tape->complex(id); }
inline bool Var::is_complex() const {
  return std::holds_alternative<ComplexTensor>(tape->node(id).value);
}
inline const Shape& Var::shape() const { return shape_of(tape->node(id).value); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_same_shape(x.shape(), y.shape(), "add");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  return t.push(Kind::Add, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor g = tp.real_grad(self);
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_same_shape(x.shape(), y.shape(), "sub");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
  return t.push(Kind::Sub, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    Tensor g = tp.real_grad(self);
    tp.accumulate(ia, g);
    for (auto& v : g.vec()) v = -v;
    tp.accumulate(ib, g);
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  for (auto& v : out.vec()) v *= s;
  return t.push(Kind::Scale, {a.id}, std::move(out), [ia = a.id, s](Tape& tp, std::size_t self) {
    Tensor g = tp.real_grad(self);
    for (auto& v : g.vec()) v *= s;
    tp.accumulate(ia, g);
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_same_shape(x.shape(), y.shape(), "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return t.push(Kind::Mul, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.real_grad(self);
    const Tensor& x = tp.real(ia);
    const Tensor& y = tp.real(ib);
    Tensor gx(x.shape()), gy(y.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx[i] = g[i] * y[i];
      gy[i] = g[i] * x[i];
    }
    tp.accumulate(ia, gx);
    tp.accumulate(ib, gy);
  });
}

/// Elementwise complex product.
inline Var cmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const ComplexTensor& x = a.cvalue();
  const ComplexTensor& y = b.cvalue();
  detail::require_same_shape(x.shape(), y.shape(), "complex-mul");
  ComplexTensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return t.push(Kind::ComplexMul, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const ComplexTensor& g = tp.complex_grad(self);
    const ComplexTensor& x = tp.complex(ia);
    const ComplexTensor& y = tp.complex(ib);
    ComplexTensor gx(x.shape()), gy(y.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx[i] = g[i] * std::conj(y[i]);
      gy[i] = g[i] * std::conj(x[i]);
    }
    tp.accumulate(ia, gx);
    tp.accumulate(ib, gy);
  });
}

inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
}
inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

/// Exact GELU, x * Phi(x).
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  // The derivative is kept from the forward pass so erf runs once per entry.
  auto slope = std::make_shared<std::vector<double>>(out.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = out[i];
    const double cdf = 0.5 * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    out[i] = x * cdf;
    (*slope)[i] = cdf + x * pdf;
  }
  return t.push(Kind::Gelu, {a.id}, std::move(out), [ia = a.id, slope](Tape& tp, std::size_t self) {
    Tensor g = tp.real_grad(self);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= (*slope)[i];
    tp.accumulate(ia, g);
  });
}

// ---------------------------------------------------------------------------
// Channel maps. Layout is [batch, channels, points...].

/// 1x1 map across the channel axis: y[b,o,p] = sum_i W[o,i] x[b,i,p] + bias[o].
inline Var channel_linear(Var x, Var weight, std::optional<Var> bias = std::nullopt) {
  Tape& t = detail::same_tape(x, weight);
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  if (xv.rank() < 2 || w.rank() != 2 || w.extent(1) != xv.extent(1))
    throw ShapeError("channel-linear: weight " + to_string(w.shape()) +
                     " incompatible with input " + to_string(xv.shape()));
  const std::size_t batch = xv.extent(0), cin = xv.extent(1), cout = w.extent(0);
  const std::size_t pts = xv.numel() / (batch * cin);
  if (bias) {
    if (bias->tape != &t) throw std::invalid_argument("bias on a different tape");
    if (bias->value().shape() != Shape{cout}) throw ShapeError("channel-linear: bias shape");
  }
  Shape out_shape = xv.shape();
  out_shape[1] = cout;
  Tensor out(out_shape);
  detail::ConstRowMap wm(w.data().data(), cout, cin);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::ConstRowMap xb(xv.data().data() + b * cin * pts, cin, pts);
    detail::RowMap yb(out.data().data() + b * cout * pts, cout, pts);
    yb.noalias() = wm * xb;
    if (bias) {
      const Tensor& bv = bias->value();
      for (std::size_t o = 0; o < cout; ++o) yb.row(o).array() += bv[o];
    }
  }
  std::vector<std::size_t> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  return t.push(Kind::ChannelLinear, std::move(inputs), std::move(out),
                [ix = x.id, iw = weight.id, ib = bias ? std::optional<std::size_t>(bias->id) : std::nullopt,
                 batch, cin, cout, pts](Tape& tp, std::size_t self) {
    const Tensor& g = tp.real_grad(self);
    const Tensor& xv = tp.real(ix);
    const Tensor& w = tp.real(iw);
    detail::ConstRowMap wm(w.data().data(), cout, cin);
    Tensor gx(xv.shape()), gw(w.shape());
    detail::RowMap gwm(gw.data().data(), cout, cin);
    Tensor gb(Shape{cout});
    for (std::size_t b = 0; b < batch; ++b) {
      detail::ConstRowMap gb_m(g.data().data() + b * cout * pts, cout, pts);
      detail::ConstRowMap xb(xv.data().data() + b * cin * pts, cin, pts);
      detail::RowMap gxb(gx.data().data() + b * cin * pts, cin, pts);
      gxb.noalias() = wm.transpose() * gb_m;
      gwm.noalias() += gb_m * xb.transpose();
      if (ib)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += gb_m.row(o).sum();
    }
    tp.accumulate(ix, gx);
    tp.accumulate(iw, gw);
    if (ib) tp.accumulate(*ib, gb);
  });
}

/// Per-mode complex channel contraction: Y[b,o,m] = sum_i R[o,i,m] X[b,i,m].
inline Var mode_mix(Var x, Var weights) {
  Tape& t = detail::same_tape(x, weights);
  const ComplexTensor& xv = x.cvalue();
  const ComplexTensor& r = weights.cvalue();
  if (xv.rank() < 3 || r.rank() != xv.rank() || r.extent(1) != xv.extent(1))
    throw ShapeError("mode-mix: weights " + to_string(r.shape()) + " incompatible with " +
                     to_string(xv.shape()));
  for (std::size_t a = 2; a < xv.rank(); ++a)
    if (r.extent(a) != xv.extent(a)) throw ShapeError("mode-mix: mode block mismatch");
  const std::size_t batch = xv.extent(0), cin = xv.extent(1), cout = r.extent(0);
  const std::size_t modes = xv.numel() / (batch * cin);
  Shape out_shape = xv.shape();
  out_shape[1] = cout;
  ComplexTensor out(out_shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      cdouble* y = out.data().data() + (b * cout + o) * modes;
      for (std::size_t i = 0; i < cin; ++i) {
        const cdouble* xi = xv.data().data() + (b * cin + i) * modes;
        const cdouble* ri = r.data().data() + (o * cin + i) * modes;
        for (std::size_t m = 0; m < modes; ++m) y[m] += ri[m] * xi[m];
      }
    }
  return t.push(Kind::ModeMix, {x.id, weights.id}, std::move(out),
                [ix = x.id, ir = weights.id, batch, cin, cout, modes](Tape& tp, std::size_t self) {
    const ComplexTensor& g = tp.complex_grad(self);
    const ComplexTensor& xv = tp.complex(ix);
    const ComplexTensor& r = tp.complex(ir);
    ComplexTensor gx(xv.shape()), gr(r.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o) {
        const cdouble* gy = g.data().data() + (b * cout + o) * modes;
        for (std::size_t i = 0; i < cin; ++i) {
          const cdouble* xi = xv.data().data() + (b * cin + i) * modes;
          const cdouble* ri = r.data().data() + (o * cin + i) * modes;
          cdouble* gxi = gx.data().data() + (b * cin + i) * modes;
          cdouble* gri = gr.data().data() + (o * cin + i) * modes;
          for (std::size_t m = 0; m < modes; ++m) {
            gxi[m] += gy[m] * std::conj(ri[m]);
            gri[m] += gy[m] * std::conj(xi[m]);
          }
        }
      }
    tp.accumulate(ix, gx);
    tp.accumulate(ir, gr);
  });
}

// ---------------------------------------------------------------------------
// Structural

namespace detail {

// Copies a [outer, n_src*inner] block layout into [outer, n_dst*inner] at an
// offset along the middle axis.
template <class T>
void copy_axis_block(std::span<const T> src, std::size_t src_n, std::span<T> dst,
                     std::size_t dst_n, std::size_t dst_offset, std::size_t count,
                     std::size_t src_offset, std::size_t outer, std::size_t inner, bool add) {
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < count; ++k) {
      const T* s = src.data() + (o * src_n + src_offset + k) * inner;
      T* d = dst.data() + (o * dst_n + dst_offset + k) * inner;
      if (add)
        for (std::size_t i = 0; i < inner; ++i) d[i] += s[i];
      else
        std::copy_n(s, inner, d);
    }
}

inline std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  return {outer, inner};
}

}  // namespace detail

/// Concatenation of real tensors along `axis` (default: channel axis).
inline Var concat(const std::vector<Var>& parts, std::size_t axis = 1) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = *parts.front().tape;
  Shape out_shape = parts.front().value().shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  out_shape[axis] = 0;
  std::vector<std::size_t> ids, sizes;
  for (const auto& p : parts) {
    if (p.tape != &t) throw std::invalid_argument("concat: operands on different tapes");
    Shape s = p.value().shape();
    const std::size_t n = s.at(axis);
    s[axis] = 0;
    Shape ref = out_shape;
    ref[axis] = 0;
    if (s != ref) throw ShapeError("concat: non-matching extents " + to_string(p.value().shape()));
    out_shape[axis] += n;
    ids.push_back(p.id);
    sizes.push_back(n);
  }
  Tensor out(out_shape);
  auto [outer, inner] = detail::outer_inner(out_shape, axis);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    detail::copy_axis_block<double>(parts[k].value().data(), sizes[k], out.data(), out_shape[axis],
                                    off, sizes[k], 0, outer, inner, false);
    off += sizes[k];
  }
  return t.push(Kind::Concat, ids, std::move(out),
                [ids, sizes, axis, outer, inner, total = out_shape[axis]](Tape& tp, std::size_t self) {
    const Tensor& g = tp.real_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor gk(tp.real(ids[k]).shape());
      detail::copy_axis_block<double>(g.data(), total, gk.data(), sizes[k], 0, sizes[k], off,
                                      outer, inner, false);
      tp.accumulate(ids[k], gk);
      off += sizes[k];
    }
  });
}

/// Contiguous slice [start, start+count) along `axis`.
inline Var slice(Var x, std::size_t axis, std::size_t start, std::size_t count) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  if (axis >= xv.rank() || count == 0 || start + count > xv.extent(axis))
    throw ShapeError("slice: range out of bounds for " + to_string(xv.shape()));
  Shape out_shape = xv.shape();
  out_shape[axis] = count;
  Tensor out(out_shape);
  auto [outer, inner] = detail::outer_inner(xv.shape(), axis);
  const std::size_t n = xv.extent(axis);
  detail::copy_axis_block<double>(xv.data(), n, out.data(), count, 0, count, start, outer, inner, false);
  return t.push(Kind::Slice, {x.id}, std::move(out),
                [ix = x.id, n, start, count, outer, inner](Tape& tp, std::size_t self) {
    const Tensor& g = tp.real_grad(self);
    Tensor gx(tp.real(ix).shape());
    detail::copy_axis_block<double>(g.data(), count, gx.data(), n, start, count, 0, outer, inner, false);
    tp.accumulate(ix, gx);
  });
}

// ---------------------------------------------------------------------------
// Spectral truncation and zero-padding.
//
// A half spectrum over d transformed axes has shape [..., n_1, ..., n_{d-1}, n_d/2+1].
// The retained block has shape [..., 2k_1, ..., 2k_{d-1}, k_d]: along every
// non-trailing axis the first k_j and last k_j indices (both signs of the low
// frequencies), along the trailing axis the first k_d.

namespace detail {

// Index in the full axis of length n for block index j of a signed block of 2k.
inline std::size_t signed_source(std::size_t j, std::size_t k, std::size_t n) {
  return j < k ? j : n - 2 * k + j;
}

// Calls fn(block_offset, spectrum_offset) for every element of the block.
template <class Fn>
void for_each_mode(const Shape& spec_shape, const Shape& block_shape, std::size_t naxes,
                   const std::vector<std::size_t>& modes, Fn&& fn) {
  const std::size_t rank = spec_shape.size();
  const std::size_t lead = rank - naxes;
  std::size_t outer = 1;
  for (std::size_t a = 0; a < lead; ++a) outer *= spec_shape[a];
  const std::size_t block_inner = numel(Shape(block_shape.begin() + lead, block_shape.end()));
  const std::size_t spec_inner = numel(Shape(spec_shape.begin() + lead, spec_shape.end()));
  const Shape bstr = strides_of(Shape(block_shape.begin() + lead, block_shape.end()));
  const Shape sstr = strides_of(Shape(spec_shape.begin() + lead, spec_shape.end()));
  std::vector<std::size_t> idx(naxes, 0);
  for (std::size_t e = 0; e < block_inner; ++e) {
    std::size_t rem = e, soff = 0;
    for (std::size_t a = 0; a < naxes; ++a) {
      const std::size_t j = rem / bstr[a];
      rem %= bstr[a];
      const std::size_t src = (a + 1 == naxes) ? j
                              : signed_source(j, modes[a], spec_shape[lead + a]);
      soff += src * sstr[a];
    }
    for (std::size_t o = 0; o < outer; ++o) fn(o * block_inner + e, o * spec_inner + soff);
  }
}

inline Shape block_shape_for(const Shape& spec_shape, std::size_t naxes,
                             const std::vector<std::size_t>& modes) {
  if (modes.size() != naxes) throw ShapeError("mode count does not match transformed axes");
  Shape s = spec_shape;
  const std::size_t lead = s.size() - naxes;
  for (std::size_t a = 0; a < naxes; ++a) s[lead + a] = (a + 1 == naxes) ? modes[a] : 2 * modes[a];
  return s;
}

// Every retained mode must be representable on a grid whose half spectrum
// has shape `spec_shape`: 2k_j <= n_j on leading axes, k_d <= n_d/2 on the
// trailing axis (full extent recoverable from the half-spectrum extent).
inline void check_modes_fit(const Shape& spec_shape, std::size_t naxes,
                            const std::vector<std::size_t>& modes, std::size_t last_extent) {
  const std::size_t lead = spec_shape.size() - naxes;
  for (std::size_t a = 0; a < naxes; ++a) {
    const std::size_t n = (a + 1 == naxes) ? last_extent : spec_shape[lead + a];
    if (modes[a] < 1 || modes[a] > n / 2)
      throw ShapeError("retained modes " + std::to_string(modes[a]) +
                       " exceed the Nyquist limit of a grid of extent " + std::to_string(n));
  }
}

}  // namespace detail

/// Gather the retained low-frequency block from a half spectrum. `last_extent`
/// is the real-space extent of the trailing axis.
inline Var mode_truncate(Var spec, std::size_t naxes, const std::vector<std::size_t>& modes,
                         std::size_t last_extent) {
  Tape& t = *spec.tape;
  const ComplexTensor& s = spec.cvalue();
  detail::check_modes_fit(s.shape(), naxes, modes, last_extent);
  const Shape bshape = detail::block_shape_for(s.shape(), naxes, modes);
  ComplexTensor out(bshape);
  detail::for_each_mode(s.shape(), bshape, naxes, modes,
                        [&](std::size_t b, std::size_t o) { out[b] = s[o]; });
  return t.push(Kind::ModeTruncate, {spec.id}, std::move(out),
                [is = spec.id, naxes, modes, bshape](Tape& tp, std::size_t self) {
    const ComplexTensor& g = tp.complex_grad(self);
    ComplexTensor gs(tp.complex(is).shape());
    detail::for_each_mode(gs.shape(), bshape, naxes, modes,
                          [&](std::size_t b, std::size_t o) { gs[o] += g[b]; });
    tp.accumulate(is, gs);
  });
}

/// Scatter a retained block, multiplied by `scale`, into a zero half
/// spectrum of shape `spec_shape`.
inline Var mode_embed(Var block, std::size_t naxes, const std::vector<std::size_t>& modes,
                      const Shape& spec_shape, std::size_t last_extent, double scale = 1.0) {
  Tape& t = *block.tape;
  const ComplexTensor& bv = block.cvalue();
  detail::check_modes_fit(spec_shape, naxes, modes, last_extent);
  if (detail::block_shape_for(spec_shape, naxes, modes) != bv.shape())
    throw ShapeError("pad-zeros: block " + to_string(bv.shape()) + " does not fit spectrum " +
                     to_string(spec_shape));
  ComplexTensor out(spec_shape);
  detail::for_each_mode(spec_shape, bv.shape(), naxes, modes,
                        [&](std::size_t b, std::size_t o) { out[o] = scale * bv[b]; });
  return t.push(Kind::ModeEmbed, {block.id}, std::move(out),
                [ib = block.id, naxes, modes, spec_shape, scale](Tape& tp, std::size_t self) {
    const ComplexTensor& g = tp.complex_grad(self);
    ComplexTensor gb(tp.complex(ib).shape());
    detail::for_each_mode(spec_shape, gb.shape(), naxes, modes,
                          [&](std::size_t b, std::size_t o) { gb[b] = scale * g[o]; });
    tp.accumulate(ib, gb);
  });
}

// ---------------------------------------------------------------------------
// Fourier transforms over the trailing `naxes` axes.

inline Var rfft(Var x, std::size_t naxes) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  for (std::size_t a = xv.rank() - naxes; a < xv.rank(); ++a)
    if (xv.extent(a) < 2) throw ShapeError("rfft-nd: transformed extents must be >= 2");
  ComplexTensor out = fft::rfftn(xv, naxes);
  return t.push(Kind::Rfft, {x.id}, std::move(out),
                [ix = x.id, naxes, n = xv.shape().back()](Tape& tp, std::size_t self) {
    tp.accumulate(ix, fft::rfftn_adjoint(tp.complex_grad(self), naxes, n));
  });
}

inline Var irfft(Var spec, std::size_t naxes, std::size_t last_extent) {
  Tape& t = *spec.tape;
  Tensor out = fft::irfftn(spec.cvalue(), naxes, last_extent);
  return t.push(Kind::Irfft, {spec.id}, std::move(out), [is = spec.id, naxes](Tape& tp, std::size_t self) {
    tp.accumulate(is, fft::irfftn_adjoint(tp.real_grad(self), naxes));
  });
}

// ---------------------------------------------------------------------------
// Multilinear resampling over the trailing axes.

enum class Boundary { Periodic, Clamped };

/// Two-point stencil along one axis: out[j] = (1-w[j]) in[lo[j]] + w[j] in[hi[j]].
struct AxisStencil {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w;
};

/// Sample positions keep their relative location in the (scaled) domain:
/// periodic grids sample x_j = j/n, clamped grids include both end nodes.
inline AxisStencil make_stencil(std::size_t n_in, std::size_t n_out, Boundary boundary) {
  AxisStencil s;
  s.lo.resize(n_out);
  s.hi.resize(n_out);
  s.w.resize(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    double pos;
    if (boundary == Boundary::Periodic)
      pos = double(j) * double(n_in) / double(n_out);
    else
      pos = n_out == 1 ? 0.0 : double(j) * double(n_in - 1) / double(n_out - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - double(i0);
    if (frac < 1e-13) frac = 0.0;
    if (boundary == Boundary::Clamped) {
      if (i0 >= n_in - 1) {
        i0 = n_in - 1;
        frac = 0.0;
      }
      s.lo[j] = i0;
      s.hi[j] = std::min(i0 + 1, n_in - 1);
    } else {
      i0 %= n_in;
      s.lo[j] = i0;
      s.hi[j] = (i0 + 1) % n_in;
    }
    s.w[j] = frac;
  }
  return s;
}

namespace detail {

inline Tensor apply_stencil(const Tensor& x, std::size_t axis, const AxisStencil& st) {
  Shape out_shape = x.shape();
  const std::size_t n_in = x.extent(axis);
  const std::size_t n_out = st.w.size();
  out_shape[axis] = n_out;
  Tensor out(out_shape);
  auto [outer, inner] = outer_inner(x.shape(), axis);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n_out; ++j) {
      const double* a = x.data().data() + (o * n_in + st.lo[j]) * inner;
      const double* b = x.data().data() + (o * n_in + st.hi[j]) * inner;
      double* d = out.data().data() + (o * n_out + j) * inner;
      const double w = st.w[j];
      for (std::size_t i = 0; i < inner; ++i) d[i] = (1.0 - w) * a[i] + w * b[i];
    }
  return out;
}

inline Tensor apply_stencil_adjoint(const Tensor& g, std::size_t axis, const AxisStencil& st,
                                    std::size_t n_in) {
  Shape in_shape = g.shape();
  in_shape[axis] = n_in;
  Tensor out(in_shape);
  const std::size_t n_out = st.w.size();
  auto [outer, inner] = outer_inner(g.shape(), axis);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n_out; ++j) {
      const double* s = g.data().data() + (o * n_out + j) * inner;
      double* a = out.data().data() + (o * n_in + st.lo[j]) * inner;
      double* b = out.data().data() + (o * n_in + st.hi[j]) * inner;
      const double w = st.w[j];
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += (1.0 - w) * s[i];
        b[i] += w * s[i];
      }
    }
  return out;
}

}  // namespace detail

/// Resample the trailing axes onto `out_extents` by multilinear interpolation.
/// `boundary` gives the boundary rule per resampled axis.
inline Var resample(Var x, const std::vector<std::size_t>& out_extents,
                    const std::vector<Boundary>& boundary) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  const std::size_t naxes = out_extents.size();
  if (naxes == 0 || naxes > xv.rank() || boundary.size() != naxes)
    throw ShapeError("resample: axis specification mismatch");
  const std::size_t lead = xv.rank() - naxes;
  std::vector<AxisStencil> stencils;
  std::vector<std::size_t> in_extents;
  for (std::size_t a = 0; a < naxes; ++a) {
    if (out_extents[a] < 2) throw ShapeError("resample: output extents must be >= 2");
    in_extents.push_back(xv.extent(lead + a));
    stencils.push_back(make_stencil(xv.extent(lead + a), out_extents[a], boundary[a]));
  }
  Tensor out = xv;
  for (std::size_t a = 0; a < naxes; ++a)
    if (out_extents[a] != in_extents[a]) out = detail::apply_stencil(out, lead + a, stencils[a]);
  return t.push(Kind::Resample, {x.id}, std::move(out),
                [ix = x.id, lead, stencils, in_extents, out_extents](Tape& tp, std::size_t self) {
    Tensor g = tp.real_grad(self);
    for (std::size_t a = stencils.size(); a-- > 0;)
      if (out_extents[a] != in_extents[a])
        g = detail::apply_stencil_adjoint(g, lead + a, stencils[a], in_extents[a]);
    tp.accumulate(ix, g);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  Tape& t = *x.tape;
  double s = 0;
  for (double v : x.value().data()) s += v;
  return t.push(Kind::Sum, {x.id}, Tensor(Shape{1}, s), [ix = x.id](Tape& tp, std::size_t self) {
    tp.accumulate(ix, Tensor(tp.real(ix).shape(), tp.real_grad(self)[0]));
  });
}

inline Var mean(Var x) {
  Tape& t = *x.tape;
  double s = 0;
  for (double v : x.value().data()) s += v;
  const double n = double(x.value().numel());
  return t.push(Kind::Mean, {x.id}, Tensor(Shape{1}, s / n), [ix = x.id, n](Tape& tp, std::size_t self) {
    tp.accumulate(ix, Tensor(tp.real(ix).shape(), tp.real_grad(self)[0] / n));
  });
}

/// Batch mean of ||pred_b - truth_b|| / ||truth_b|| (a fraction, not percent).
/// The leading axis is the batch; `truth` is a constant.
inline Var relative_l2(Var pred, const Tensor& truth) {
  Tape& t = *pred.tape;
  const Tensor& p = pred.value();
  detail::require_same_shape(p.shape(), truth.shape(), "relative-l2");
  const std::size_t batch = p.extent(0);
  const std::size_t per = p.numel() / batch;
  std::vector<double> diff_norm(batch), truth_norm(batch);
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double dn = 0, tn = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double d = p[i] - truth[i];
      dn += d * d;
      tn += truth[i] * truth[i];
    }
    if (tn == 0) throw std::invalid_argument("relative-l2: truth has zero norm");
    diff_norm[b] = std::sqrt(dn);
    truth_norm[b] = std::sqrt(tn);
    total += diff_norm[b] / truth_norm[b];
  }
  return t.push(Kind::RelativeL2, {pred.id}, Tensor(Shape{1}, total / double(batch)),
                [ip = pred.id, truth, diff_norm, truth_norm, batch, per](Tape& tp, std::size_t self) {
    const double g = tp.real_grad(self)[0];
    const Tensor& p = tp.real(ip);
    Tensor gp(p.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      if (diff_norm[b] == 0) continue;
      const double c = g / (double(batch) * diff_norm[b] * truth_norm[b]);
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) gp[i] = c * (p[i] - truth[i]);
    }
    tp.accumulate(ip, gp);
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Coordinates checked per parameter tensor; 0 checks every coordinate.
  std::size_t samples_per_param = 10;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;  // real coordinate (complex tensors: 2*element + imag)
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  bool ok = true;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  GradCheckEntry worst;
  bool passed() const { return failures == 0; }
};

/// Builds a scalar objective on `tape` from leaves holding `params`.
using Objective = std::function<Var(Tape&, const std::vector<Var>&)>;

namespace detail {

inline std::size_t real_coords(const Value& v) {
  return std::visit([](const auto& t) {
    using T = std::decay_t<decltype(t)>;
    return std::is_same_v<T, ComplexTensor> ? 2 * t.numel() : t.numel();
  }, v);
}

inline double& coord(Value& v, std::size_t i) {
  if (auto* t = std::get_if<Tensor>(&v)) return (*t)[i];
  auto& c = std::get<ComplexTensor>(v);
  return reinterpret_cast<double*>(c.data().data())[i];
}

inline double coord(const Value& v, std::size_t i) { return coord(const_cast<Value&>(v), i); }

inline double evaluate(const Objective& f, const std::vector<Value>& params, bool record,
                       std::vector<Value>* grads) {
  Tape tape(record);
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.param(p));
  Var out = f(tape, leaves);
  if (out.value().numel() != 1) throw ShapeError("grad_check: objective must be scalar");
  const double value = out.value()[0];
  if (grads) {
    tape.backward(out);
    grads->clear();
    for (const auto& l : leaves) grads->push_back(tape.grad_or_zero(l.id));
  }
  return value;
}

}  // namespace detail

/// Central-difference check of the tape gradient of `f` at `params`.
///
/// A coordinate passes when |fd - g| / max(|g|, 1e-8) <= tolerance, or when
/// |fd - g| is below the rounding floor of the difference quotient
/// (64 * eps * |f| / step), which no finite-difference estimate can resolve.
inline GradCheckReport grad_check(const Objective& f, const std::vector<Value>& params,
                                  const GradCheckOptions& opt = {}) {
  if (opt.step <= 0) throw std::invalid_argument("grad_check: step must be positive");
  std::vector<Value> grads;
  const double f0 = detail::evaluate(f, params, true, &grads);
  const double floor_abs = 64.0 * std::numeric_limits<double>::epsilon() *
                           std::max(1.0, std::abs(f0)) / opt.step;
  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  report.worst.rel_error = -1;
  std::vector<Value> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = detail::real_coords(params[p]);
    std::vector<std::size_t> coords;
    if (opt.samples_per_param == 0 || opt.samples_per_param >= n) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t s = 0; s < opt.samples_per_param; ++s) coords.push_back(pick(rng));
    }
    for (auto c : coords) {
      const double orig = detail::coord(work[p], c);
      detail::coord(work[p], c) = orig + opt.step;
      const double fp = detail::evaluate(f, work, false, nullptr);
      detail::coord(work[p], c) = orig - opt.step;
      const double fm = detail::evaluate(f, work, false, nullptr);
      detail::coord(work[p], c) = orig;
      GradCheckEntry e;
      e.param = p;
      e.index = c;
      e.analytic = detail::coord(grads[p], c);
      e.numeric = (fp - fm) / (2 * opt.step);
      const double diff = std::abs(e.numeric - e.analytic);
      e.rel_error = diff / std::max(std::abs(e.analytic), 1e-8);
      e.ok = e.rel_error <= opt.tolerance || diff <= floor_abs;
      ++report.checked;
      if (!e.ok) ++report.failures;
      // Failures outrank passes; within each group the larger error wins.
      const bool replace = report.worst.ok == e.ok ? e.rel_error > report.worst.rel_error
                                                   : !e.ok;
      if (replace) report.worst = e;
    }
  }
  return report;
}

}  // namespace uno::ad
