// Copyright (c) 2026 The Disentangle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over a recorded operation list.
//
// Nodes are evaluated eagerly as they are recorded, so values are available
// while a loss is still being assembled (the texture term needs the
// generated images before it can build their Laplacians). `forward()` replays
// the whole record after named leaves change.
//
// Gradients are themselves recorded as graph nodes. A plain `backward()`
// builds and evaluates them; `gradients()` returns the nodes so that a loss
// may depend on an input gradient, which is how the gradient penalty gets
// its parameter derivatives. Every adjoint is expressed with operators whose
// own adjoints are defined, so the recorded gradient can be differentiated
// once more.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disentangle/kernels.hpp"
#include "disentangle/sparse.hpp"
#include "disentangle/tensor.hpp"

namespace disentangle {

enum class Op {
  kConstant,
  kInput,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddScalar,
  kMulScalar,
  kMatMul,
  kConv2d,
  kConvTranspose2d,
  kConv2dWeightGrad,
  kLeakyRelu,
  kLeakyReluGrad,
  kTanh,
  kLog,
  kAbs,
  kSign,
  kSquare,
  kSqrt,
  kReshape,
  kConcat,
  kSlice,
  kSliceAdjoint,
  kSumTo,
  kBroadcastTo,
  kStopGradient,
  kSparseMatVec,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kInput: return "input";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kConvTranspose2d: return "conv_transpose2d";
    case Op::kConv2dWeightGrad: return "conv2d_weight_grad";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kLeakyReluGrad: return "leaky_relu_grad";
    case Op::kTanh: return "tanh";
    case Op::kLog: return "log";
    case Op::kAbs: return "abs";
    case Op::kSign: return "sign";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kReshape: return "reshape";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kSliceAdjoint: return "slice_adjoint";
    case Op::kSumTo: return "sum_to";
    case Op::kBroadcastTo: return "broadcast_to";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kSparseMatVec: return "sparse_matvec";
  }
  return "?";
}

/// Handle to a graph node.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
  friend bool operator==(Var a, Var b) { return a.id == b.id; }
};

class GraphError : public std::runtime_error {
 public:
  GraphError(int node, const std::string& what) : std::runtime_error(what), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

class NonFiniteError : public GraphError {
 public:
  using GraphError::GraphError;
};

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

template <typename T>
class Graph {
 public:
  using TensorT = Tensor<T>;
  using Matrix = SparseSymmetricMatrix<T>;

  // Leaves.
  Var constant(TensorT value, std::string label = {}) {
    return leaf(Op::kConstant, std::move(value), std::move(label));
  }
  Var constant(T scalar) { return constant(TensorT::scalar(scalar)); }
  /// Named non-trainable leaf; may be replaced through forward(inputs).
  Var input(std::string name, TensorT value) {
    return leaf(Op::kInput, std::move(value), std::move(name));
  }
  /// Named trainable leaf; backward() reports its gradient under `name`.
  Var parameter(std::string name, TensorT value) {
    return leaf(Op::kParameter, std::move(value), std::move(name));
  }

  // Elementwise, with numpy-style broadcasting.
  Var add(Var a, Var b) { return record(Op::kAdd, {a, b}); }
  Var sub(Var a, Var b) { return record(Op::kSub, {a, b}); }
  Var mul(Var a, Var b) { return record(Op::kMul, {a, b}); }
  Var div(Var a, Var b) { return record(Op::kDiv, {a, b}); }
  Var add_scalar(Var a, T s) { return record(Op::kAddScalar, {a}, Attrs{.scalar = s}); }
  Var mul_scalar(Var a, T s) { return record(Op::kMulScalar, {a}, Attrs{.scalar = s}); }
  Var neg(Var a) { return mul_scalar(a, T(-1)); }

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    return record(Op::kMatMul, {a, b}, Attrs{.trans_a = trans_a, .trans_b = trans_b});
  }
  Var conv2d(Var x, Var w, int stride, int pad) {
    return record(Op::kConv2d, {x, w}, Attrs{.stride = stride, .pad = pad});
  }
  /// Output extent defaults to (in - 1) * stride - 2 * pad + kernel.
  Var conv_transpose2d(Var x, Var w, int stride, int pad, int out_h = 0, int out_w = 0) {
    if (out_h == 0 || out_w == 0) {
      const int k = shape(w).at(2);
      out_h = (shape(x).at(2) - 1) * stride - 2 * pad + k;
      out_w = (shape(x).at(3) - 1) * stride - 2 * pad + k;
    }
    return record(Op::kConvTranspose2d, {x, w},
                  Attrs{.stride = stride, .pad = pad, .out_h = out_h, .out_w = out_w});
  }
  Var conv2d_weight_grad(Var x, Var gout, int kernel, int stride, int pad) {
    return record(Op::kConv2dWeightGrad, {x, gout},
                  Attrs{.stride = stride, .pad = pad, .kernel = kernel});
  }

  Var leaky_relu(Var x) { return record(Op::kLeakyRelu, {x}); }
  /// g scaled by the leaky-rectifier slope at x.
  Var leaky_relu_grad(Var x, Var g) { return record(Op::kLeakyReluGrad, {x, g}); }
  Var tanh(Var x) { return record(Op::kTanh, {x}); }
  Var log(Var x) { return record(Op::kLog, {x}); }
  Var abs(Var x) { return record(Op::kAbs, {x}); }
  Var sign(Var x) { return record(Op::kSign, {x}); }
  Var square(Var x) { return record(Op::kSquare, {x}); }
  Var sqrt(Var x) { return record(Op::kSqrt, {x}); }

  Var reshape(Var x, Shape target) { return record(Op::kReshape, {x}, Attrs{.target = std::move(target)}); }
  Var concat(std::span<const Var> parts, int axis) {
    return record(Op::kConcat, std::vector<Var>(parts.begin(), parts.end()), Attrs{.axis = axis});
  }
  Var concat(std::initializer_list<Var> parts, int axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
  }
  Var slice(Var x, int axis, int start, int length) {
    return record(Op::kSlice, {x}, Attrs{.axis = axis, .start = start, .length = length});
  }
  Var slice_adjoint(Var g, int axis, int start, int full) {
    return record(Op::kSliceAdjoint, {g}, Attrs{.axis = axis, .start = start, .length = full});
  }
  Var sum_to(Var x, Shape target) { return record(Op::kSumTo, {x}, Attrs{.target = std::move(target)}); }
  Var broadcast_to(Var x, Shape target) {
    return record(Op::kBroadcastTo, {x}, Attrs{.target = std::move(target)});
  }
  Var stop_gradient(Var x) { return record(Op::kStopGradient, {x}); }
  /// Applies a symmetric sparse matrix along the last axis of v.
  Var sparse_matvec(std::shared_ptr<const Matrix> matrix, Var v) {
    return record(Op::kSparseMatVec, {v}, Attrs{.matrix = std::move(matrix)});
  }

  // Reductions, built from sum_to.
  Var sum(Var x) { return sum_to(x, Shape{1}); }
  Var sum(Var x, int axis, bool keepdim = false) {
    Shape s = shape(x);
    if (axis < 0) axis += static_cast<int>(s.size());
    s.at(static_cast<std::size_t>(axis)) = 1;
    Var r = sum_to(x, s);
    if (keepdim) return r;
    s.erase(s.begin() + axis);
    if (s.empty()) s = {1};
    return reshape(r, s);
  }
  Var mean(Var x) { return mul_scalar(sum(x), T(1) / static_cast<T>(numel(shape(x)))); }
  Var mean(Var x, int axis, bool keepdim = false) {
    const Shape& s = shape(x);
    const int n = s.at(static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(s.size()) : axis));
    return mul_scalar(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
  }
  /// x / ||x||_2 along the last axis.
  Var l2_normalize(Var x) {
    Var norm = sqrt(sum(square(x), -1, true));
    return div(x, norm);
  }

  const TensorT& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  Op op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }
  bool evaluated() const { return !stale_; }

  /// Registers a named output reported by forward().
  void output(std::string name, Var v) {
    node(v);
    outputs_[std::move(name)] = v;
  }

  /// Replaces the value of a named input or parameter leaf. The graph is
  /// stale until forward() runs.
  void set_input(const std::string& name, TensorT value) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw GraphError(-1, "no leaf named '" + name + "'");
    Node& n = nodes_[static_cast<std::size_t>(it->second)];
    if (value.shape() != n.value.shape())
      throw GraphError(it->second, describe(it->second) + ": new value shape " +
                                       shape_str(value.shape()) + " differs from " +
                                       shape_str(n.value.shape()));
    n.value = std::move(value);
    stale_ = true;
  }

  /// Re-evaluates every node after applying `inputs`, returning the registered outputs.
  NamedTensors<T> forward(const NamedTensors<T>& inputs = {}) {
    for (const auto& [name, value] : inputs) set_input(name, value);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!is_leaf(nodes_[i].op)) evaluate(static_cast<int>(i));
    stale_ = false;
    NamedTensors<T> out;
    for (const auto& [name, v] : outputs_) out.emplace(name, value(v));
    return out;
  }

  /// Records d(out)/d(wrt) as graph nodes. `out` must be a one-element node
  /// unless a seed of the same shape is given. Unreached targets get a zero constant.
  std::vector<Var> gradients(Var out, std::span<const Var> wrt, std::optional<Var> seed = {}) {
    require_evaluated();
    const int top = out.id;
    node(out);
    if (!seed && numel(shape(out)) != 1)
      throw GraphError(top, describe(top) + ": gradient of non-scalar output " +
                                shape_str(shape(out)));
    std::vector<char> target(nodes_.size(), 0), dep(static_cast<std::size_t>(top) + 1, 0);
    for (Var w : wrt) target.at(static_cast<std::size_t>(node_index(w))) = 1;
    for (int i = 0; i <= top; ++i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (target[static_cast<std::size_t>(i)]) {
        dep[static_cast<std::size_t>(i)] = 1;
        continue;
      }
      if (is_leaf(n.op) || n.op == Op::kStopGradient || n.op == Op::kSign) continue;
      for (Var in : n.inputs)
        if (dep[static_cast<std::size_t>(in.id)]) dep[static_cast<std::size_t>(i)] = 1;
    }

    std::vector<std::optional<Var>> grad(static_cast<std::size_t>(top) + 1);
    if (dep[static_cast<std::size_t>(top)])
      grad[static_cast<std::size_t>(top)] = seed ? *seed : constant(TensorT(shape(out), T(1)));
    for (int i = top; i >= 0; --i) {
      auto& g = grad[static_cast<std::size_t>(i)];
      if (!g || !dep[static_cast<std::size_t>(i)]) continue;
      const Op kind = nodes_[static_cast<std::size_t>(i)].op;
      if (is_leaf(kind)) continue;
      const auto contributions = adjoint(i, *g);
      const auto inputs = nodes_[static_cast<std::size_t>(i)].inputs;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const int in = inputs[k].id;
        if (!contributions[k] || !dep[static_cast<std::size_t>(in)]) continue;
        auto& slot = grad[static_cast<std::size_t>(in)];
        slot = slot ? add(*slot, *contributions[k]) : *contributions[k];
      }
    }
    std::vector<Var> result;
    result.reserve(wrt.size());
    for (Var w : wrt) {
      const auto& g = w.id <= top ? grad[static_cast<std::size_t>(w.id)] : std::optional<Var>{};
      result.push_back(g ? *g : constant(TensorT(shape(w), T(0))));
    }
    return result;
  }

  /// Gradient of a one-element output with respect to every parameter leaf.
  NamedTensors<T> backward(Var out) {
    require_evaluated();
    std::vector<Var> params;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::kParameter) {
        params.push_back(Var{static_cast<int>(i)});
        names.push_back(nodes_[i].label);
      }
    const auto grads = gradients(out, params);
    NamedTensors<T> result;
    for (std::size_t i = 0; i < grads.size(); ++i) result.emplace(names[i], value(grads[i]));
    return result;
  }

  /// "node 12 (conv2d <- 3 'x', 4 'disc.conv0.w')".
  std::string describe(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) return "node " + std::to_string(id);
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
    if (!n.label.empty()) s += " '" + n.label + "'";
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const Node& in = nodes_[static_cast<std::size_t>(n.inputs[k].id)];
      s += (k ? ", " : " <- ") + std::to_string(n.inputs[k].id);
      if (!in.label.empty()) s += " '" + in.label + "'";
    }
    return s + ")";
  }

 private:
  struct Attrs {
    int stride = 1;
    int pad = 0;
    int kernel = 0;
    int axis = 0;
    int start = 0;
    int length = 0;
    int out_h = 0;
    int out_w = 0;
    bool trans_a = false;
    bool trans_b = false;
    T scalar = 0;
    Shape target{};
    std::shared_ptr<const Matrix> matrix{};
  };

  struct Node {
    Op op;
    std::vector<Var> inputs;
    Attrs attrs;
    std::string label;
    TensorT value;
  };

  static bool is_leaf(Op op) {
    return op == Op::kConstant || op == Op::kInput || op == Op::kParameter;
  }

  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(node_index(v))); }

  int node_index(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw GraphError(v.id, "invalid node handle " + std::to_string(v.id));
    return v.id;
  }

  void require_evaluated() const {
    if (stale_) throw GraphError(-1, "graph has not been evaluated since its inputs changed");
  }

  Var leaf(Op op, TensorT value, std::string label) {
    const int id = static_cast<int>(nodes_.size());
    if (!value.all_finite())
      throw NonFiniteError(id, "node " + std::to_string(id) + " (" + op_name(op) + " '" + label +
                                   "'): non-finite leaf value");
    if (op != Op::kConstant) {
      if (label.empty()) throw GraphError(id, std::string(op_name(op)) + " leaves need a name");
      if (!leaves_.emplace(label, id).second)
        throw GraphError(id, "duplicate leaf name '" + label + "'");
    }
    nodes_.push_back(Node{op, {}, Attrs{}, std::move(label), std::move(value)});
    return Var{id};
  }

  Var record(Op op, std::vector<Var> inputs, Attrs attrs = {}) {
    for (Var in : inputs) node_index(in);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{op, std::move(inputs), std::move(attrs), {}, {}});
    try {
      evaluate(id);
    } catch (...) {
      nodes_.pop_back();
      throw;
    }
    return Var{id};
  }

  void evaluate(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    try {
      n.value = compute(n);
    } catch (const ShapeError& e) {
      throw GraphError(id, describe(id) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw GraphError(id, describe(id) + ": " + e.what());
    }
    if (!n.value.all_finite())
      throw NonFiniteError(id, describe(id) + ": non-finite output");
  }

  const TensorT& in(const Node& n, std::size_t k) const {
    return nodes_[static_cast<std::size_t>(n.inputs[k].id)].value;
  }

  TensorT compute(const Node& n) const {
    const Attrs& a = n.attrs;
    switch (n.op) {
      case Op::kConstant:
      case Op::kInput:
      case Op::kParameter:
        return n.value;
      case Op::kAdd:
        return kernels::binary(in(n, 0), in(n, 1), [](T x, T y) { return x + y; });
      case Op::kSub:
        return kernels::binary(in(n, 0), in(n, 1), [](T x, T y) { return x - y; });
      case Op::kMul:
        return kernels::binary(in(n, 0), in(n, 1), [](T x, T y) { return x * y; });
      case Op::kDiv:
        return kernels::binary(in(n, 0), in(n, 1), [](T x, T y) { return x / y; });
      case Op::kAddScalar:
        return kernels::unary(in(n, 0), [s = a.scalar](T x) { return x + s; });
      case Op::kMulScalar:
        return kernels::unary(in(n, 0), [s = a.scalar](T x) { return x * s; });
      case Op::kMatMul:
        return kernels::matmul(in(n, 0), in(n, 1), a.trans_a, a.trans_b);
      case Op::kConv2d:
        return kernels::conv2d(in(n, 0), in(n, 1), a.stride, a.pad);
      case Op::kConvTranspose2d:
        return kernels::conv_transpose2d(in(n, 0), in(n, 1), a.stride, a.pad, a.out_h, a.out_w);
      case Op::kConv2dWeightGrad:
        return kernels::conv2d_weight_grad(in(n, 0), in(n, 1), a.kernel, a.stride, a.pad);
      case Op::kLeakyRelu:
        return kernels::unary(in(n, 0), [](T x) {
          return x > T(0) ? x : static_cast<T>(kernels::kLeakySlope) * x;
        });
      case Op::kLeakyReluGrad: {
        const TensorT& x = in(n, 0);
        const TensorT& g = in(n, 1);
        if (x.shape() != g.shape()) throw ShapeError("leaky_relu_grad operands differ in shape");
        TensorT out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
          out[i] = x[i] > T(0) ? g[i] : static_cast<T>(kernels::kLeakySlope) * g[i];
        return out;
      }
      case Op::kTanh:
        return kernels::unary(in(n, 0), [](T x) { return std::tanh(x); });
      case Op::kLog:
        return kernels::unary(in(n, 0), [](T x) { return std::log(x); });
      case Op::kAbs:
        return kernels::unary(in(n, 0), [](T x) { return std::abs(x); });
      case Op::kSign:
        return kernels::unary(in(n, 0), [](T x) { return T((x > T(0)) - (x < T(0))); });
      case Op::kSquare:
        return kernels::unary(in(n, 0), [](T x) { return x * x; });
      case Op::kSqrt:
        return kernels::unary(in(n, 0), [](T x) { return std::sqrt(x); });
      case Op::kReshape:
        if (numel(a.target) != in(n, 0).size())
          throw ShapeError("cannot reshape " + shape_str(in(n, 0).shape()) + " to " +
                           shape_str(a.target));
        return in(n, 0).reshaped(a.target);
      case Op::kConcat: {
        std::vector<const TensorT*> parts;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(&in(n, k));
        return kernels::concat(parts, a.axis);
      }
      case Op::kSlice:
        return kernels::slice(in(n, 0), a.axis, a.start, a.length);
      case Op::kSliceAdjoint:
        return kernels::slice_adjoint(in(n, 0), a.axis, a.start, a.length);
      case Op::kSumTo:
        return kernels::sum_to(in(n, 0), a.target);
      case Op::kBroadcastTo:
        return kernels::broadcast_to(in(n, 0), a.target);
      case Op::kStopGradient:
        return in(n, 0);
      case Op::kSparseMatVec: {
        const TensorT& v = in(n, 0);
        const Matrix& m = *a.matrix;
        if (v.dim(-1) != m.n)
          throw ShapeError("sparse_matvec: last axis " + std::to_string(v.dim(-1)) +
                           " does not match matrix size " + std::to_string(m.n));
        TensorT out(v.shape());
        const std::size_t rows = v.size() / static_cast<std::size_t>(m.n);
        for (std::size_t r = 0; r < rows; ++r)
          m.multiply(v.values().subspan(r * m.n, m.n), out.values().subspan(r * m.n, m.n));
        return out;
      }
    }
    throw GraphError(-1, "unknown op");
  }

  /// Contribution of node `id` to the gradient of each of its inputs, given
  /// the gradient g flowing into the node.
  std::vector<std::optional<Var>> adjoint(int id, Var g) {
    // Copy what we need: recording new nodes may reallocate nodes_.
    const Op kind = nodes_[static_cast<std::size_t>(id)].op;
    const std::vector<Var> ins = nodes_[static_cast<std::size_t>(id)].inputs;
    const Attrs a = nodes_[static_cast<std::size_t>(id)].attrs;
    const Var self{id};
    auto shape_of = [&](std::size_t k) -> Shape { return shape(ins[k]); };
    std::vector<std::optional<Var>> out(ins.size());
    switch (kind) {
      case Op::kConstant:
      case Op::kInput:
      case Op::kParameter:
      case Op::kStopGradient:
      case Op::kSign:
        break;
      case Op::kAdd:
        out[0] = sum_to(g, shape_of(0));
        out[1] = sum_to(g, shape_of(1));
        break;
      case Op::kSub:
        out[0] = sum_to(g, shape_of(0));
        out[1] = sum_to(neg(g), shape_of(1));
        break;
      case Op::kMul:
        out[0] = sum_to(mul(g, ins[1]), shape_of(0));
        out[1] = sum_to(mul(g, ins[0]), shape_of(1));
        break;
      case Op::kDiv:
        out[0] = sum_to(div(g, ins[1]), shape_of(0));
        out[1] = sum_to(neg(div(mul(g, self), ins[1])), shape_of(1));
        break;
      case Op::kAddScalar:
        out[0] = g;
        break;
      case Op::kMulScalar:
        out[0] = mul_scalar(g, a.scalar);
        break;
      case Op::kMatMul: {
        const bool ta = a.trans_a, tb = a.trans_b;
        out[0] = ta ? matmul(ins[1], g, tb, true) : matmul(g, ins[1], false, !tb);
        out[1] = tb ? matmul(g, ins[0], true, ta) : matmul(ins[0], g, !ta, false);
        break;
      }
      case Op::kConv2d: {
        const Shape xs = shape_of(0);
        out[0] = conv_transpose2d(g, ins[1], a.stride, a.pad, xs[2], xs[3]);
        out[1] = conv2d_weight_grad(ins[0], g, shape_of(1)[2], a.stride, a.pad);
        break;
      }
      case Op::kConvTranspose2d:
        out[0] = conv2d(g, ins[1], a.stride, a.pad);
        out[1] = conv2d_weight_grad(g, ins[0], shape_of(1)[2], a.stride, a.pad);
        break;
      case Op::kConv2dWeightGrad: {
        // <G, wgrad(x, h)> = <conv2d(x, G), h>
        const Shape xs = shape_of(0);
        out[0] = conv_transpose2d(ins[1], g, a.stride, a.pad, xs[2], xs[3]);
        out[1] = conv2d(ins[0], g, a.stride, a.pad);
        break;
      }
      case Op::kLeakyRelu:
        out[0] = leaky_relu_grad(ins[0], g);
        break;
      case Op::kLeakyReluGrad:
        // Piecewise constant in x.
        out[1] = leaky_relu_grad(ins[0], g);
        break;
      case Op::kTanh:
        out[0] = mul(g, add_scalar(neg(square(self)), T(1)));
        break;
      case Op::kLog:
        out[0] = div(g, ins[0]);
        break;
      case Op::kAbs:
        out[0] = mul(g, sign(ins[0]));
        break;
      case Op::kSquare:
        out[0] = mul(g, mul_scalar(ins[0], T(2)));
        break;
      case Op::kSqrt:
        out[0] = div(g, mul_scalar(self, T(2)));
        break;
      case Op::kReshape:
        out[0] = reshape(g, shape_of(0));
        break;
      case Op::kConcat: {
        int start = 0;
        for (std::size_t k = 0; k < ins.size(); ++k) {
          const int len = shape_of(k)[static_cast<std::size_t>(a.axis)];
          out[k] = slice(g, a.axis, start, len);
          start += len;
        }
        break;
      }
      case Op::kSlice:
        out[0] = slice_adjoint(g, a.axis, a.start, shape_of(0)[static_cast<std::size_t>(a.axis)]);
        break;
      case Op::kSliceAdjoint:
        out[0] = slice(g, a.axis, a.start, shape_of(0)[static_cast<std::size_t>(a.axis)]);
        break;
      case Op::kSumTo:
        out[0] = broadcast_to(g, shape_of(0));
        break;
      case Op::kBroadcastTo:
        out[0] = sum_to(g, shape_of(0));
        break;
      case Op::kSparseMatVec:
        out[0] = sparse_matvec(a.matrix, g);
        break;
    }
    return out;
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaves_;
  std::map<std::string, Var> outputs_;
  bool stale_ = false;
};

}  // namespace disentangle
