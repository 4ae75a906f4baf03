/*
 * Copyright 2026 The sslst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Reverse-mode differentiation over a tape of tensor operations.
//
// A Graph is built eagerly ("define by run"): every builder call validates
// shapes, appends a node and evaluates it, so the node list is always in
// topological order. The recorded node kinds and attributes are enough to
// replay the whole tape with rebound inputs (`forward`), which is what the
// finite-difference checks use. `backward` walks the tape in reverse and
// accumulates into parameter gradients.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "sslst/numerics/params.hpp"
#include "sslst/numerics/tensor.hpp"

namespace sslst {

using NodeId = std::size_t;

enum class Op {
  Input,
  Constant,
  Param,
  Affine,
  MatMul,
  BatchMatMul,
  Conv1d,
  Conv2d,
  Tanh,
  Sigmoid,
  Relu,
  Softmax,
  LogSoftmax,
  MaskedSoftmax,
  Add,
  Mul,
  Scale,
  AddBroadcast,
  Concat,
  Slice,
  Reshape,
  Permute0213,
  Select,
  Stack,
  LstmStep,
  LayerNorm,
  Embedding,
  GatherRows,
  MaskRows,
  CrossEntropy,
  LogisticLoss,
  RowDotGather,
  Sum,
  Mean,
  Quantize,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::BatchMatMul: return "batch_matmul";
    case Op::Conv1d: return "conv1d";
    case Op::Conv2d: return "conv2d";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::MaskedSoftmax: return "masked_softmax";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddBroadcast: return "add_broadcast";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::Permute0213: return "permute0213";
    case Op::Select: return "select";
    case Op::Stack: return "stack";
    case Op::LstmStep: return "lstm_step";
    case Op::LayerNorm: return "layer_norm";
    case Op::Embedding: return "embedding";
    case Op::GatherRows: return "gather_rows";
    case Op::MaskRows: return "mask_rows";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::LogisticLoss: return "logistic_loss";
    case Op::RowDotGather: return "row_dot_gather";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Quantize: return "quantize";
  }
  return "?";
}

class GraphError : public Error {
 public:
  GraphError(const std::string& what, NodeId node) : Error(what), node_(node) {}
  NodeId node() const noexcept { return node_; }

 private:
  NodeId node_;
};

class ShapeError : public GraphError {
 public:
  ShapeError(NodeId node, Op op, const std::string& what)
      : GraphError("shape mismatch at node " + std::to_string(node) + " (" + op_name(op) +
                       "): " + what,
                   node) {}
  const char* category() const noexcept override { return "shape"; }
};

class NonFiniteError : public GraphError {
 public:
  NonFiniteError(NodeId node, Op op)
      : GraphError("non-finite value produced at node " + std::to_string(node) + " (" +
                       op_name(op) + ")",
                   node) {}
  const char* category() const noexcept override { return "non-finite"; }
};

template <typename T>
struct Node {
  Op op = Op::Constant;
  std::vector<NodeId> in;
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool needs_grad = false;
  std::string name;
  Parameter<T>* param = nullptr;
  std::vector<long> ia;  // integer attributes (ids, strides, axis ...)
  std::vector<T> ra;     // real attributes (masks, labels, codebook ...)
  Shape sa;              // shape attribute (reshape target, leading dims ...)
  double fa = 0.0;       // scalar attribute
  std::vector<T> cache;  // forward intermediates needed by backward
};

template <typename T>
class Graph {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using RowV = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using MapR = Eigen::Map<RowV>;
  using CMapR = Eigen::Map<const RowV>;
  using SMapM = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using CSMapM = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

 public:
  static constexpr NodeId none = static_cast<NodeId>(-1);

  Graph() = default;
  explicit Graph(bool check_finite) : check_finite_(check_finite) {}

  std::size_t size() const { return nodes_.size(); }
  const Node<T>& node(NodeId id) const { return nodes_.at(id); }
  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  const Shape& shape(NodeId id) const { return nodes_.at(id).value.shape; }
  bool has_grad(NodeId id) const { return nodes_.at(id).has_grad; }
  const Tensor<T>& grad(NodeId id) const { return nodes_.at(id).grad; }
  void set_name(NodeId id, std::string name) { nodes_.at(id).name = std::move(name); }

  // ---- leaves -------------------------------------------------------------

  NodeId input(const std::string& name, Tensor<T> t) {
    Node<T> n;
    n.op = Op::Input;
    n.name = name;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    return push_leaf(std::move(n));
  }

  NodeId constant(Tensor<T> t) {
    Node<T> n;
    n.op = Op::Constant;
    n.value = std::move(t);
    return push_leaf(std::move(n));
  }

  NodeId param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node<T> n;
    n.op = Op::Param;
    n.name = p.name;
    n.param = &p;
    n.needs_grad = p.trainable;
    n.value = p.value;
    NodeId id = push_leaf(std::move(n));
    param_nodes_.emplace(&p, id);
    return id;
  }

  // ---- dense layers -------------------------------------------------------

  // x[..., in] * W[in, out] + b[out]; pass `none` for no bias.
  NodeId affine(NodeId x, NodeId w, NodeId b = none) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    if (ws.size() != 2 || xs.empty() || xs.back() != ws[0])
      fail(Op::Affine, "x " + shape_str(xs) + " vs W " + shape_str(ws));
    if (b != none && (shape(b).size() != 1 || shape(b)[0] != ws[1]))
      fail(Op::Affine, "bias " + shape_str(shape(b)) + " vs W " + shape_str(ws));
    Node<T> n = make(Op::Affine, b == none ? std::vector<NodeId>{x, w} : std::vector<NodeId>{x, w, b});
    return push(std::move(n));
  }

  // a[m, k] * b[k, n], or a * b^T when b is [n, k] and trans_b is set.
  NodeId matmul(NodeId a, NodeId b, bool trans_b = false) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 2 || bs.size() != 2 || as[1] != (trans_b ? bs[1] : bs[0]))
      fail(Op::MatMul, shape_str(as) + " x " + shape_str(bs) + (trans_b ? "^T" : ""));
    Node<T> n = make(Op::MatMul, {a, b});
    n.ia = {trans_b ? 1L : 0L};
    return push(std::move(n));
  }

  // Batched a[N, m, k] * b[N, k, n] (or b[N, n, k] transposed).
  NodeId batch_matmul(NodeId a, NodeId b, bool trans_b = false) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] ||
        as[2] != (trans_b ? bs[2] : bs[1]))
      fail(Op::BatchMatMul, shape_str(as) + " x " + shape_str(bs) + (trans_b ? "^T" : ""));
    Node<T> n = make(Op::BatchMatMul, {a, b});
    n.ia = {trans_b ? 1L : 0L};
    return push(std::move(n));
  }

  // x[B, L, Cin] with W[K, Cin, Cout], b[Cout]. Zero padding on the left only,
  // so output frame t sees inputs up to t*stride + K - 1 - pad_left.
  NodeId conv1d(NodeId x, NodeId w, NodeId b, long stride, long pad_left) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    if (xs.size() != 3 || ws.size() != 3 || xs[2] != ws[1])
      fail(Op::Conv1d, "x " + shape_str(xs) + " vs W " + shape_str(ws));
    if (shape(b) != Shape{ws[2]}) fail(Op::Conv1d, "bias " + shape_str(shape(b)));
    if (stride < 1 || pad_left < 0) fail(Op::Conv1d, "bad stride/padding");
    if (static_cast<long>(xs[1]) + pad_left < static_cast<long>(ws[0]))
      fail(Op::Conv1d, "input length " + std::to_string(xs[1]) + " shorter than kernel");
    Node<T> n = make(Op::Conv1d, {x, w, b});
    n.ia = {stride, pad_left};
    return push(std::move(n));
  }

  // x[B, H, W, Cin] with W[KH, KW, Cin, Cout], b[Cout]; symmetric zero padding.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, long stride_h, long stride_w, long pad_h,
                long pad_w) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    if (xs.size() != 4 || ws.size() != 4 || xs[3] != ws[2])
      fail(Op::Conv2d, "x " + shape_str(xs) + " vs W " + shape_str(ws));
    if (shape(b) != Shape{ws[3]}) fail(Op::Conv2d, "bias " + shape_str(shape(b)));
    if (static_cast<long>(xs[1]) + 2 * pad_h < static_cast<long>(ws[0]) ||
        static_cast<long>(xs[2]) + 2 * pad_w < static_cast<long>(ws[1]))
      fail(Op::Conv2d, "input smaller than kernel");
    Node<T> n = make(Op::Conv2d, {x, w, b});
    n.ia = {stride_h, stride_w, pad_h, pad_w};
    return push(std::move(n));
  }

  // ---- elementwise --------------------------------------------------------

  NodeId tanh(NodeId x) { return push(make(Op::Tanh, {x})); }
  NodeId sigmoid(NodeId x) { return push(make(Op::Sigmoid, {x})); }
  NodeId relu(NodeId x) { return push(make(Op::Relu, {x})); }

  NodeId add(NodeId a, NodeId b) {
    if (shape(a) != shape(b)) fail(Op::Add, shape_str(shape(a)) + " + " + shape_str(shape(b)));
    return push(make(Op::Add, {a, b}));
  }

  NodeId mul(NodeId a, NodeId b) {
    if (shape(a) != shape(b)) fail(Op::Mul, shape_str(shape(a)) + " * " + shape_str(shape(b)));
    return push(make(Op::Mul, {a, b}));
  }

  NodeId scale(NodeId x, double c) {
    Node<T> n = make(Op::Scale, {x});
    n.fa = c;
    return push(std::move(n));
  }

  // a + b where b has a's shape with `axis` removed (b is repeated along it).
  NodeId add_broadcast(NodeId a, NodeId b, std::size_t axis) {
    Shape expect = shape(a);
    if (axis >= expect.size()) fail(Op::AddBroadcast, "axis out of range");
    expect.erase(expect.begin() + static_cast<long>(axis));
    if (shape(b) != expect)
      fail(Op::AddBroadcast, shape_str(shape(a)) + " + " + shape_str(shape(b)) + " on axis " +
                                 std::to_string(axis));
    Node<T> n = make(Op::AddBroadcast, {a, b});
    n.ia = {static_cast<long>(axis)};
    return push(std::move(n));
  }

  // Rows (all but the last dimension) multiplied by mask[row] in {0, 1}.
  NodeId mask_rows(NodeId x, const std::vector<T>& mask) {
    if (mask.size() != value(x).rows())
      fail(Op::MaskRows, "mask of " + std::to_string(mask.size()) + " for " +
                             std::to_string(value(x).rows()) + " rows");
    Node<T> n = make(Op::MaskRows, {x});
    n.ra = mask;
    return push(std::move(n));
  }

  // ---- normalizers over the last dimension --------------------------------

  NodeId softmax(NodeId x) { return push(make(Op::Softmax, {x})); }
  NodeId log_softmax(NodeId x) { return push(make(Op::LogSoftmax, {x})); }

  // Softmax restricted to cells with mask 1; masked cells get exactly 0.
  NodeId masked_softmax(NodeId x, const std::vector<T>& mask) {
    if (mask.size() != value(x).size()) fail(Op::MaskedSoftmax, "mask size mismatch");
    Node<T> n = make(Op::MaskedSoftmax, {x});
    n.ra = mask;
    return push(std::move(n));
  }

  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5) {
    const auto& xs = shape(x);
    if (xs.empty() || shape(gamma) != Shape{xs.back()} || shape(beta) != Shape{xs.back()})
      fail(Op::LayerNorm, "x " + shape_str(xs) + " gamma " + shape_str(shape(gamma)));
    Node<T> n = make(Op::LayerNorm, {x, gamma, beta});
    n.fa = eps;
    return push(std::move(n));
  }

  // ---- structure ----------------------------------------------------------

  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis) {
    if (parts.empty()) fail(Op::Concat, "no inputs");
    const Shape& s0 = shape(parts[0]);
    if (axis >= s0.size()) fail(Op::Concat, "axis out of range");
    for (NodeId p : parts) {
      Shape a = shape(p), b = s0;
      if (a.size() != b.size()) fail(Op::Concat, "rank mismatch");
      a[axis] = b[axis] = 0;
      if (a != b) fail(Op::Concat, shape_str(shape(p)) + " vs " + shape_str(s0));
    }
    Node<T> n = make(Op::Concat, parts);
    n.ia = {static_cast<long>(axis)};
    return push(std::move(n));
  }

  NodeId slice(NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto& xs = shape(x);
    if (axis >= xs.size() || begin >= end || end > xs[axis])
      fail(Op::Slice, shape_str(xs) + " axis " + std::to_string(axis) + " [" +
                          std::to_string(begin) + "," + std::to_string(end) + ")");
    Node<T> n = make(Op::Slice, {x});
    n.ia = {static_cast<long>(axis), static_cast<long>(begin), static_cast<long>(end)};
    return push(std::move(n));
  }

  NodeId reshape(NodeId x, Shape s) {
    if (numel(s) != value(x).size())
      fail(Op::Reshape, shape_str(shape(x)) + " -> " + shape_str(s));
    Node<T> n = make(Op::Reshape, {x});
    n.sa = std::move(s);
    return push(std::move(n));
  }

  // [A, B, C, D] -> [A, C, B, D]
  NodeId permute0213(NodeId x) {
    if (shape(x).size() != 4) fail(Op::Permute0213, "rank must be 4");
    return push(make(Op::Permute0213, {x}));
  }

  // x[B, T, F] -> x[:, t, :]
  NodeId select(NodeId x, std::size_t t) {
    const auto& xs = shape(x);
    if (xs.size() != 3 || t >= xs[1]) fail(Op::Select, shape_str(xs) + " at " + std::to_string(t));
    Node<T> n = make(Op::Select, {x});
    n.ia = {static_cast<long>(t)};
    return push(std::move(n));
  }

  // Stack the first `cols` columns of each [B, C] input into [B, n, cols].
  NodeId stack(const std::vector<NodeId>& parts, std::size_t cols) {
    if (parts.empty()) fail(Op::Stack, "no inputs");
    const Shape s0 = shape(parts[0]);
    if (s0.size() != 2 || cols == 0 || cols > s0[1]) fail(Op::Stack, "bad part shape");
    for (NodeId p : parts)
      if (shape(p) != s0) fail(Op::Stack, shape_str(shape(p)) + " vs " + shape_str(s0));
    Node<T> n = make(Op::Stack, parts);
    n.ia = {static_cast<long>(cols)};
    return push(std::move(n));
  }

  // One LSTM step. `xw` holds the precomputed input projections x*Wx + b for
  // all steps ([B, T, 4H], gate order i, f, g, o); `state` is [B, 2H] = [h, c].
  // Rows with mask 0 carry the previous state through unchanged.
  NodeId lstm_step(NodeId xw, std::size_t t, NodeId state, NodeId wh,
                   const std::vector<T>& mask = {}) {
    const auto& xs = shape(xw);
    const auto& ss = shape(state);
    const auto& ws = shape(wh);
    if (ss.size() != 2 || ss[1] % 2 != 0) fail(Op::LstmStep, "state " + shape_str(ss));
    const std::size_t b = ss[0], h = ss[1] / 2;
    if (xs.size() != 3 || xs[0] != b || xs[2] != 4 * h || t >= xs[1])
      fail(Op::LstmStep, "xw " + shape_str(xs) + " vs state " + shape_str(ss));
    if (ws != Shape{h, 4 * h}) fail(Op::LstmStep, "Wh " + shape_str(ws));
    if (!mask.empty() && mask.size() != b) fail(Op::LstmStep, "mask size");
    Node<T> n = make(Op::LstmStep, {xw, state, wh});
    n.ia = {static_cast<long>(t)};
    n.ra = mask;
    return push(std::move(n));
  }

  // table[V, E] looked up at ids; result has shape lead ++ [E].
  NodeId embedding(NodeId table, const std::vector<long>& ids, Shape lead) {
    const auto& ts = shape(table);
    if (ts.size() != 2 || numel(lead) != ids.size()) fail(Op::Embedding, "bad table or ids");
    for (long id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= ts[0])
        fail(Op::Embedding, "id " + std::to_string(id) + " outside table of " +
                                std::to_string(ts[0]));
    Node<T> n = make(Op::Embedding, {table});
    n.ia = ids;
    n.sa = std::move(lead);
    return push(std::move(n));
  }

  // Rows of x (viewed as [R, F]) at the given indices -> [n, F].
  NodeId gather_rows(NodeId x, const std::vector<long>& rows) {
    const std::size_t r = value(x).rows();
    for (long i : rows)
      if (i < 0 || static_cast<std::size_t>(i) >= r) fail(Op::GatherRows, "row index out of range");
    Node<T> n = make(Op::GatherRows, {x});
    n.ia = rows;
    return push(std::move(n));
  }

  // out[n, j] = pred[n] . z[index[n * J + j]]
  NodeId row_dot_gather(NodeId pred, NodeId z, const std::vector<long>& index, std::size_t j) {
    const auto& ps = shape(pred);
    const auto& zs = shape(z);
    if (ps.size() != 2 || zs.size() != 2 || ps[1] != zs[1] || index.size() != ps[0] * j)
      fail(Op::RowDotGather, shape_str(ps) + " . " + shape_str(zs));
    for (long i : index)
      if (i < 0 || static_cast<std::size_t>(i) >= zs[0]) fail(Op::RowDotGather, "index out of range");
    Node<T> n = make(Op::RowDotGather, {pred, z});
    n.ia = index;
    n.sa = {ps[0], j};
    return push(std::move(n));
  }

  // ---- losses and reductions ---------------------------------------------

  // Sum over rows with target >= 0 of -log softmax(logits)[target], divided by
  // `divisor` (0 means the number of scored rows). Target -1 marks padding.
  NodeId cross_entropy(NodeId logits, const std::vector<long>& targets, double divisor = 0.0) {
    const auto& ls = shape(logits);
    if (ls.size() != 2 || targets.size() != ls[0]) fail(Op::CrossEntropy, "logits " + shape_str(ls));
    std::size_t scored = 0;
    for (long t : targets) {
      if (t >= static_cast<long>(ls[1]) || t < -1) fail(Op::CrossEntropy, "target out of range");
      scored += t >= 0;
    }
    if (divisor == 0.0 && scored == 0) fail(Op::CrossEntropy, "no scored rows");
    Node<T> n = make(Op::CrossEntropy, {logits});
    n.ia = targets;
    n.fa = divisor == 0.0 ? static_cast<double>(scored) : divisor;
    return push(std::move(n));
  }

  // Sum of -log sigmoid(x) for label 1 and -log sigmoid(-x) for label 0,
  // divided by `divisor`.
  NodeId logistic_loss(NodeId logits, const std::vector<T>& labels, double divisor) {
    if (labels.size() != value(logits).size()) fail(Op::LogisticLoss, "label count mismatch");
    Node<T> n = make(Op::LogisticLoss, {logits});
    n.ra = labels;
    n.fa = divisor;
    return push(std::move(n));
  }

  NodeId sum(NodeId x) { return push(make(Op::Sum, {x})); }
  NodeId mean(NodeId x) { return push(make(Op::Mean, {x})); }

  // Nearest-centroid replacement of each row of z; the backward pass hands
  // the output gradient to z unchanged (straight-through).
  NodeId quantize(NodeId z, const Tensor<T>& codebook) {
    const auto& zs = shape(z);
    if (codebook.rank() != 2 || zs.empty() || zs.back() != codebook.shape[1])
      fail(Op::Quantize, "z " + shape_str(zs) + " vs codebook " + shape_str(codebook.shape));
    Node<T> n = make(Op::Quantize, {z});
    n.ra = codebook.data;
    n.sa = codebook.shape;
    return push(std::move(n));
  }

  // Token chosen for each row by a quantize node.
  std::vector<long> quantize_tokens(NodeId q) const {
    const auto& n = nodes_.at(q);
    if (n.op != Op::Quantize) throw InvalidArgument("node is not a quantize node");
    return std::vector<long>(n.cache.begin(), n.cache.end());
  }

  // ---- evaluation ---------------------------------------------------------

  // Replay every node with the given inputs rebound by name. Returns the
  // values of all named nodes.
  TensorMap<T> forward(const TensorMap<T>& bindings) {
    for (const auto& [name, t] : bindings) {
      bool found = false;
      for (NodeId id = 0; id < nodes_.size(); ++id) {
        auto& n = nodes_[id];
        if (n.op == Op::Input && n.name == name) {
          if (n.value.shape != t.shape)
            throw ShapeError(id, Op::Input, "binding '" + name + "' has shape " +
                                                shape_str(t.shape) + ", expected " +
                                                shape_str(n.value.shape));
          n.value.data = t.data;
          found = true;
        }
      }
      if (!found) throw InvalidArgument("no input named '" + name + "'");
    }
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      auto& n = nodes_[id];
      n.has_grad = false;
      if (n.op == Op::Param) n.value.data = n.param->value.data;
      if (n.op != Op::Input && n.op != Op::Constant && n.op != Op::Param) evaluate(id);
    }
    TensorMap<T> out;
    for (const auto& n : nodes_)
      if (!n.name.empty()) out.insert_or_assign(n.name, n.value);
    return out;
  }

  // Accumulate d(loss)/d(parameter) into every trainable parameter's grad.
  void backward(NodeId loss) {
    if (value(loss).size() != 1)
      throw ShapeError(loss, nodes_.at(loss).op,
                       "loss must be scalar, got " + shape_str(shape(loss)));
    for (auto& n : nodes_) n.has_grad = false;
    gbuf(loss).data[0] = T(1);
    for (NodeId id = loss + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.has_grad || !n.needs_grad) continue;
      if (n.op == Op::Param) {
        auto& pg = n.param->grad.data;
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[i];
        continue;
      }
      if (n.op == Op::Input || n.op == Op::Constant) continue;
      backprop(id);
    }
  }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& n : nodes_)
      if (n.op == Op::Param) out.push_back(n.param);
    return out;
  }

 private:
  std::deque<Node<T>> nodes_;  // deque: references to values stay valid as the tape grows
  std::unordered_map<const Parameter<T>*, NodeId> param_nodes_;
  bool check_finite_ = true;

  [[noreturn]] void fail(Op op, const std::string& what) const {
    throw ShapeError(nodes_.size(), op, what);
  }

  Node<T> make(Op op, std::vector<NodeId> in) const {
    Node<T> n;
    n.op = op;
    n.in = std::move(in);
    for (NodeId i : n.in) n.needs_grad = n.needs_grad || nodes_.at(i).needs_grad;
    return n;
  }

  NodeId push_leaf(Node<T> n) {
    if (check_finite_ && !n.value.all_finite()) throw NonFiniteError(nodes_.size(), n.op);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push(Node<T> n) {
    nodes_.push_back(std::move(n));
    NodeId id = nodes_.size() - 1;
    try {
      evaluate(id);
    } catch (...) {
      nodes_.pop_back();
      throw;
    }
    return id;
  }

  const Tensor<T>& in_val(const Node<T>& n, std::size_t k) const { return nodes_[n.in[k]].value; }

  bool in_needs(const Node<T>& n, std::size_t k) const { return nodes_[n.in[k]].needs_grad; }

  Tensor<T>& gbuf(NodeId id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
      if (n.grad.shape != n.value.shape || n.grad.data.size() != n.value.data.size())
        n.grad = Tensor<T>(n.value.shape);
      else
        n.grad.fill(T(0));
      n.has_grad = true;
    }
    return n.grad;
  }

  void evaluate(NodeId id) {
    Node<T>& n = nodes_[id];
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
      case Op::Param: break;
      case Op::Affine: fwd_affine(n); break;
      case Op::MatMul: fwd_matmul(n); break;
      case Op::BatchMatMul: fwd_bmm(n); break;
      case Op::Conv1d: fwd_conv1d(n); break;
      case Op::Conv2d: fwd_conv2d(n); break;
      case Op::Tanh: unary(n, [](T v) { return std::tanh(v); }); break;
      case Op::Sigmoid: unary(n, [](T v) { return sigm(v); }); break;
      case Op::Relu: unary(n, [](T v) { return v > T(0) ? v : T(0); }); break;
      case Op::Softmax: fwd_softmax(n, false); break;
      case Op::LogSoftmax: fwd_softmax(n, true); break;
      case Op::MaskedSoftmax: fwd_masked_softmax(n); break;
      case Op::Add: {
        const auto& a = in_val(n, 0);
        const auto& b = in_val(n, 1);
        n.value = Tensor<T>(a.shape);
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
        break;
      }
      case Op::Mul: {
        const auto& a = in_val(n, 0);
        const auto& b = in_val(n, 1);
        n.value = Tensor<T>(a.shape);
        for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a.data[i] * b.data[i];
        break;
      }
      case Op::Scale: {
        const T c = static_cast<T>(n.fa);
        unary(n, [c](T v) { return c * v; });
        break;
      }
      case Op::AddBroadcast: fwd_add_broadcast(n); break;
      case Op::MaskRows: {
        const auto& x = in_val(n, 0);
        n.value = Tensor<T>(x.shape);
        const std::size_t f = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t j = 0; j < f; ++j)
            n.value.data[r * f + j] = n.ra[r] != T(0) ? x.data[r * f + j] : T(0);
        break;
      }
      case Op::Concat: fwd_concat(n); break;
      case Op::Slice: fwd_slice(n); break;
      case Op::Reshape: n.value = Tensor<T>(n.sa, in_val(n, 0).data); break;
      case Op::Permute0213: fwd_permute(n); break;
      case Op::Select: fwd_select(n); break;
      case Op::Stack: fwd_stack(n); break;
      case Op::LstmStep: fwd_lstm(n); break;
      case Op::LayerNorm: fwd_layer_norm(n); break;
      case Op::Embedding: fwd_embedding(n); break;
      case Op::GatherRows: fwd_gather_rows(n); break;
      case Op::CrossEntropy: fwd_cross_entropy(n); break;
      case Op::LogisticLoss: fwd_logistic(n); break;
      case Op::RowDotGather: fwd_row_dot(n); break;
      case Op::Sum: {
        T s = 0;
        for (T v : in_val(n, 0).data) s += v;
        n.value = Tensor<T>::scalar(s);
        break;
      }
      case Op::Mean: {
        const auto& x = in_val(n, 0);
        T s = 0;
        for (T v : x.data) s += v;
        n.value = Tensor<T>::scalar(s / static_cast<T>(x.size()));
        break;
      }
      case Op::Quantize: fwd_quantize(n); break;
    }
    if (check_finite_ && !n.value.all_finite()) throw NonFiniteError(id, n.op);
  }

  void backprop(NodeId id) {
    Node<T>& n = nodes_[id];
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
      case Op::Param: break;
      case Op::Affine: bwd_affine(n); break;
      case Op::MatMul: bwd_matmul(n); break;
      case Op::BatchMatMul: bwd_bmm(n); break;
      case Op::Conv1d: bwd_conv1d(n); break;
      case Op::Conv2d: bwd_conv2d(n); break;
      case Op::Tanh:
        unary_bwd(n, [](T y, T) { return T(1) - y * y; });
        break;
      case Op::Sigmoid:
        unary_bwd(n, [](T y, T) { return y * (T(1) - y); });
        break;
      case Op::Relu:
        unary_bwd(n, [](T y, T) { return y > T(0) ? T(1) : T(0); });
        break;
      case Op::Scale: {
        const T c = static_cast<T>(n.fa);
        unary_bwd(n, [c](T, T) { return c; });
        break;
      }
      case Op::Softmax: bwd_softmax(n); break;
      case Op::MaskedSoftmax: bwd_softmax(n); break;
      case Op::LogSoftmax: bwd_log_softmax(n); break;
      case Op::Add:
        for (std::size_t k = 0; k < 2; ++k)
          if (in_needs(n, k)) axpy(gbuf(n.in[k]).data, n.grad.data);
        break;
      case Op::Mul:
        for (std::size_t k = 0; k < 2; ++k) {
          if (!in_needs(n, k)) continue;
          auto& g = gbuf(n.in[k]).data;
          const auto& other = in_val(n, 1 - k).data;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad.data[i] * other[i];
        }
        break;
      case Op::AddBroadcast: bwd_add_broadcast(n); break;
      case Op::MaskRows: {
        if (!in_needs(n, 0)) break;
        auto& g = gbuf(n.in[0]).data;
        const std::size_t f = n.value.cols();
        for (std::size_t r = 0; r < n.value.rows(); ++r)
          if (n.ra[r] != T(0))
            for (std::size_t j = 0; j < f; ++j) g[r * f + j] += n.grad.data[r * f + j];
        break;
      }
      case Op::Concat: bwd_concat(n); break;
      case Op::Slice: bwd_slice(n); break;
      case Op::Reshape:
        if (in_needs(n, 0)) axpy(gbuf(n.in[0]).data, n.grad.data);
        break;
      case Op::Permute0213: bwd_permute(n); break;
      case Op::Select: bwd_select(n); break;
      case Op::Stack: bwd_stack(n); break;
      case Op::LstmStep: bwd_lstm(n); break;
      case Op::LayerNorm: bwd_layer_norm(n); break;
      case Op::Embedding: bwd_embedding(n); break;
      case Op::GatherRows: bwd_gather_rows(n); break;
      case Op::CrossEntropy: bwd_cross_entropy(n); break;
      case Op::LogisticLoss: bwd_logistic(n); break;
      case Op::RowDotGather: bwd_row_dot(n); break;
      case Op::Sum:
        if (in_needs(n, 0)) {
          auto& g = gbuf(n.in[0]).data;
          for (auto& v : g) v += n.grad.data[0];
        }
        break;
      case Op::Mean:
        if (in_needs(n, 0)) {
          auto& g = gbuf(n.in[0]).data;
          const T s = n.grad.data[0] / static_cast<T>(g.size());
          for (auto& v : g) v += s;
        }
        break;
      case Op::Quantize:
        if (in_needs(n, 0)) axpy(gbuf(n.in[0]).data, n.grad.data);
        break;
    }
  }

  static T sigm(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

  static T softplus(T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); }

  // Column sums of a row-major [rows, cols] block in a fixed order; Eigen's
  // vectorized reduction varies with buffer alignment.
  static void add_col_sums(T* dst, const T* src, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[r * cols + c];
  }

  static void axpy(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  template <typename F>
  void unary(Node<T>& n, F f) {
    const auto& x = in_val(n, 0);
    n.value = Tensor<T>(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = f(x.data[i]);
  }

  // f(y, x) is the local derivative given output y and input x.
  template <typename F>
  void unary_bwd(Node<T>& n, F f) {
    if (!in_needs(n, 0)) return;
    auto& g = gbuf(n.in[0]).data;
    const auto& x = in_val(n, 0).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad.data[i] * f(n.value.data[i], x[i]);
  }

  // ---- affine / matmul ----------------------------------------------------

  void fwd_affine(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const std::size_t in = w.shape[0], out = w.shape[1], rows = x.size() / in;
    Shape s = x.shape;
    s.back() = out;
    n.value = Tensor<T>(s);
    MapM y(n.value.ptr(), rows, out);
    y.noalias() = CMapM(x.ptr(), rows, in) * CMapM(w.ptr(), in, out);
    if (n.in.size() == 3) y.rowwise() += CMapR(in_val(n, 2).ptr(), out);
  }

  void bwd_affine(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const std::size_t in = w.shape[0], out = w.shape[1], rows = x.size() / in;
    CMapM dy(n.grad.ptr(), rows, out);
    if (in_needs(n, 0)) MapM(gbuf(n.in[0]).ptr(), rows, in).noalias() += dy * CMapM(w.ptr(), in, out).transpose();
    if (in_needs(n, 1)) MapM(gbuf(n.in[1]).ptr(), in, out).noalias() += CMapM(x.ptr(), rows, in).transpose() * dy;
    if (n.in.size() == 3 && in_needs(n, 2)) add_col_sums(gbuf(n.in[2]).ptr(), n.grad.ptr(), dy.rows(), out);
  }

  void fwd_matmul(Node<T>& n) {
    const auto& a = in_val(n, 0);
    const auto& b = in_val(n, 1);
    const bool tb = n.ia[0] != 0;
    const std::size_t m = a.shape[0], k = a.shape[1], c = tb ? b.shape[0] : b.shape[1];
    n.value = Tensor<T>(Shape{m, c});
    MapM y(n.value.ptr(), m, c);
    if (tb)
      y.noalias() = CMapM(a.ptr(), m, k) * CMapM(b.ptr(), c, k).transpose();
    else
      y.noalias() = CMapM(a.ptr(), m, k) * CMapM(b.ptr(), k, c);
  }

  void bwd_matmul(Node<T>& n) {
    const auto& a = in_val(n, 0);
    const auto& b = in_val(n, 1);
    const bool tb = n.ia[0] != 0;
    const std::size_t m = a.shape[0], k = a.shape[1], c = tb ? b.shape[0] : b.shape[1];
    CMapM dy(n.grad.ptr(), m, c);
    if (tb) {
      if (in_needs(n, 0)) MapM(gbuf(n.in[0]).ptr(), m, k).noalias() += dy * CMapM(b.ptr(), c, k);
      if (in_needs(n, 1)) MapM(gbuf(n.in[1]).ptr(), c, k).noalias() += dy.transpose() * CMapM(a.ptr(), m, k);
    } else {
      if (in_needs(n, 0)) MapM(gbuf(n.in[0]).ptr(), m, k).noalias() += dy * CMapM(b.ptr(), k, c).transpose();
      if (in_needs(n, 1)) MapM(gbuf(n.in[1]).ptr(), k, c).noalias() += CMapM(a.ptr(), m, k).transpose() * dy;
    }
  }

  void fwd_bmm(Node<T>& n) {
    const auto& a = in_val(n, 0);
    const auto& b = in_val(n, 1);
    const bool tb = n.ia[0] != 0;
    const std::size_t N = a.shape[0], m = a.shape[1], k = a.shape[2];
    const std::size_t c = tb ? b.shape[1] : b.shape[2];
    n.value = Tensor<T>(Shape{N, m, c});
    for (std::size_t i = 0; i < N; ++i) {
      MapM y(n.value.ptr() + i * m * c, m, c);
      CMapM am(a.ptr() + i * m * k, m, k);
      if (tb)
        y.noalias() = am * CMapM(b.ptr() + i * c * k, c, k).transpose();
      else
        y.noalias() = am * CMapM(b.ptr() + i * k * c, k, c);
    }
  }

  void bwd_bmm(Node<T>& n) {
    const auto& a = in_val(n, 0);
    const auto& b = in_val(n, 1);
    const bool tb = n.ia[0] != 0;
    const std::size_t N = a.shape[0], m = a.shape[1], k = a.shape[2];
    const std::size_t c = tb ? b.shape[1] : b.shape[2];
    T* ga = in_needs(n, 0) ? gbuf(n.in[0]).ptr() : nullptr;
    T* gb = in_needs(n, 1) ? gbuf(n.in[1]).ptr() : nullptr;
    for (std::size_t i = 0; i < N; ++i) {
      CMapM dy(n.grad.ptr() + i * m * c, m, c);
      CMapM am(a.ptr() + i * m * k, m, k);
      if (tb) {
        CMapM bm(b.ptr() + i * c * k, c, k);
        if (ga) MapM(ga + i * m * k, m, k).noalias() += dy * bm;
        if (gb) MapM(gb + i * c * k, c, k).noalias() += dy.transpose() * am;
      } else {
        CMapM bm(b.ptr() + i * k * c, k, c);
        if (ga) MapM(ga + i * m * k, m, k).noalias() += dy * bm.transpose();
        if (gb) MapM(gb + i * k * c, k, c).noalias() += am.transpose() * dy;
      }
    }
  }

  // ---- convolutions (im2col + GEMM) ---------------------------------------

  void fwd_conv1d(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const long stride = n.ia[0], pad = n.ia[1];
    const std::size_t B = x.shape[0], L = x.shape[1], cin = x.shape[2];
    const std::size_t K = w.shape[0], cout = w.shape[2];
    const std::size_t lout = (L + pad - K) / stride + 1;
    const std::size_t kc = K * cin;
    n.cache.assign(B * lout * kc, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < lout; ++t) {
        T* row = n.cache.data() + (b * lout + t) * kc;
        const long start = static_cast<long>(t) * stride - pad;
        for (std::size_t k = 0; k < K; ++k) {
          const long src = start + static_cast<long>(k);
          if (src < 0 || src >= static_cast<long>(L)) continue;
          std::copy_n(x.ptr() + (b * L + src) * cin, cin, row + k * cin);
        }
      }
    n.value = Tensor<T>(Shape{B, lout, cout});
    MapM y(n.value.ptr(), B * lout, cout);
    y.noalias() = CMapM(n.cache.data(), B * lout, kc) * CMapM(w.ptr(), kc, cout);
    y.rowwise() += CMapR(in_val(n, 2).ptr(), cout);
  }

  void bwd_conv1d(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const long stride = n.ia[0], pad = n.ia[1];
    const std::size_t B = x.shape[0], L = x.shape[1], cin = x.shape[2];
    const std::size_t K = w.shape[0], cout = w.shape[2];
    const std::size_t lout = n.value.shape[1], kc = K * cin;
    CMapM dy(n.grad.ptr(), B * lout, cout);
    if (in_needs(n, 1)) MapM(gbuf(n.in[1]).ptr(), kc, cout).noalias() += CMapM(n.cache.data(), B * lout, kc).transpose() * dy;
    if (in_needs(n, 2)) add_col_sums(gbuf(n.in[2]).ptr(), n.grad.ptr(), dy.rows(), cout);
    if (in_needs(n, 0)) {
      Mat dcol = dy * CMapM(w.ptr(), kc, cout).transpose();
      T* gx = gbuf(n.in[0]).ptr();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < lout; ++t) {
          const T* row = dcol.data() + (b * lout + t) * kc;
          const long start = static_cast<long>(t) * stride - pad;
          for (std::size_t k = 0; k < K; ++k) {
            const long src = start + static_cast<long>(k);
            if (src < 0 || src >= static_cast<long>(L)) continue;
            T* dst = gx + (b * L + src) * cin;
            for (std::size_t c = 0; c < cin; ++c) dst[c] += row[k * cin + c];
          }
        }
    }
  }

  void fwd_conv2d(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const long sh = n.ia[0], sw = n.ia[1], ph = n.ia[2], pw = n.ia[3];
    const std::size_t B = x.shape[0], H = x.shape[1], W = x.shape[2], cin = x.shape[3];
    const std::size_t KH = w.shape[0], KW = w.shape[1], cout = w.shape[3];
    const std::size_t ho = (H + 2 * ph - KH) / sh + 1, wo = (W + 2 * pw - KW) / sw + 1;
    const std::size_t kc = KH * KW * cin;
    n.cache.assign(B * ho * wo * kc, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          T* row = n.cache.data() + ((b * ho + i) * wo + j) * kc;
          for (std::size_t ki = 0; ki < KH; ++ki) {
            const long si = static_cast<long>(i) * sh - ph + static_cast<long>(ki);
            if (si < 0 || si >= static_cast<long>(H)) continue;
            for (std::size_t kj = 0; kj < KW; ++kj) {
              const long sj = static_cast<long>(j) * sw - pw + static_cast<long>(kj);
              if (sj < 0 || sj >= static_cast<long>(W)) continue;
              std::copy_n(x.ptr() + ((b * H + si) * W + sj) * cin, cin, row + (ki * KW + kj) * cin);
            }
          }
        }
    n.value = Tensor<T>(Shape{B, ho, wo, cout});
    MapM y(n.value.ptr(), B * ho * wo, cout);
    y.noalias() = CMapM(n.cache.data(), B * ho * wo, kc) * CMapM(w.ptr(), kc, cout);
    y.rowwise() += CMapR(in_val(n, 2).ptr(), cout);
  }

  void bwd_conv2d(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& w = in_val(n, 1);
    const long sh = n.ia[0], sw = n.ia[1], ph = n.ia[2], pw = n.ia[3];
    const std::size_t B = x.shape[0], H = x.shape[1], W = x.shape[2], cin = x.shape[3];
    const std::size_t KH = w.shape[0], KW = w.shape[1], cout = w.shape[3];
    const std::size_t ho = n.value.shape[1], wo = n.value.shape[2], kc = KH * KW * cin;
    const std::size_t rows = B * ho * wo;
    CMapM dy(n.grad.ptr(), rows, cout);
    if (in_needs(n, 1)) MapM(gbuf(n.in[1]).ptr(), kc, cout).noalias() += CMapM(n.cache.data(), rows, kc).transpose() * dy;
    if (in_needs(n, 2)) add_col_sums(gbuf(n.in[2]).ptr(), n.grad.ptr(), dy.rows(), cout);
    if (in_needs(n, 0)) {
      Mat dcol = dy * CMapM(w.ptr(), kc, cout).transpose();
      T* gx = gbuf(n.in[0]).ptr();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j) {
            const T* row = dcol.data() + ((b * ho + i) * wo + j) * kc;
            for (std::size_t ki = 0; ki < KH; ++ki) {
              const long si = static_cast<long>(i) * sh - ph + static_cast<long>(ki);
              if (si < 0 || si >= static_cast<long>(H)) continue;
              for (std::size_t kj = 0; kj < KW; ++kj) {
                const long sj = static_cast<long>(j) * sw - pw + static_cast<long>(kj);
                if (sj < 0 || sj >= static_cast<long>(W)) continue;
                T* dst = gx + ((b * H + si) * W + sj) * cin;
                const T* src = row + (ki * KW + kj) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
    }
  }

  // ---- softmax family -----------------------------------------------------

  void fwd_softmax(Node<T>& n, bool log) {
    const auto& x = in_val(n, 0);
    n.value = Tensor<T>(x.shape);
    const std::size_t f = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const T* xi = x.ptr() + r * f;
      T* yi = n.value.ptr() + r * f;
      const T mx = *std::max_element(xi, xi + f);
      T s = 0;
      for (std::size_t j = 0; j < f; ++j) s += std::exp(xi[j] - mx);
      if (log) {
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < f; ++j) yi[j] = xi[j] - lse;
      } else {
        for (std::size_t j = 0; j < f; ++j) yi[j] = std::exp(xi[j] - mx) / s;
      }
    }
  }

  void fwd_masked_softmax(Node<T>& n) {
    const auto& x = in_val(n, 0);
    n.value = Tensor<T>(x.shape);
    const std::size_t f = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const T* xi = x.ptr() + r * f;
      const T* mi = n.ra.data() + r * f;
      T* yi = n.value.ptr() + r * f;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < f; ++j)
        if (mi[j] != T(0)) mx = std::max(mx, xi[j]);
      if (!std::isfinite(mx)) continue;  // fully masked row stays zero
      T s = 0;
      for (std::size_t j = 0; j < f; ++j)
        if (mi[j] != T(0)) s += std::exp(xi[j] - mx);
      for (std::size_t j = 0; j < f; ++j) yi[j] = mi[j] != T(0) ? std::exp(xi[j] - mx) / s : T(0);
    }
  }

  // Shared by softmax and masked softmax (masked cells have y = 0).
  void bwd_softmax(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    auto& g = gbuf(n.in[0]).data;
    const std::size_t f = n.value.cols();
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
      const T* y = n.value.ptr() + r * f;
      const T* dy = n.grad.ptr() + r * f;
      T dot = 0;
      for (std::size_t j = 0; j < f; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < f; ++j) g[r * f + j] += y[j] * (dy[j] - dot);
    }
  }

  void bwd_log_softmax(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    auto& g = gbuf(n.in[0]).data;
    const std::size_t f = n.value.cols();
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
      const T* y = n.value.ptr() + r * f;
      const T* dy = n.grad.ptr() + r * f;
      T s = 0;
      for (std::size_t j = 0; j < f; ++j) s += dy[j];
      for (std::size_t j = 0; j < f; ++j) g[r * f + j] += dy[j] - std::exp(y[j]) * s;
    }
  }

  // ---- structural kernels -------------------------------------------------

  static void outer_inner(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }

  void fwd_add_broadcast(Node<T>& n) {
    const auto& a = in_val(n, 0);
    const auto& b = in_val(n, 1);
    const std::size_t axis = n.ia[0];
    std::size_t outer, inner;
    outer_inner(a.shape, axis, outer, inner);
    const std::size_t k = a.shape[axis];
    n.value = Tensor<T>(a.shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < k; ++j) {
        const T* ai = a.ptr() + (o * k + j) * inner;
        const T* bi = b.ptr() + o * inner;
        T* yi = n.value.ptr() + (o * k + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) yi[i] = ai[i] + bi[i];
      }
  }

  void bwd_add_broadcast(Node<T>& n) {
    if (in_needs(n, 0)) axpy(gbuf(n.in[0]).data, n.grad.data);
    if (!in_needs(n, 1)) return;
    const std::size_t axis = n.ia[0];
    std::size_t outer, inner;
    outer_inner(n.value.shape, axis, outer, inner);
    const std::size_t k = n.value.shape[axis];
    T* gb = gbuf(n.in[1]).ptr();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < k; ++j) {
        const T* dy = n.grad.ptr() + (o * k + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) gb[o * inner + i] += dy[i];
      }
  }

  void fwd_concat(Node<T>& n) {
    const std::size_t axis = n.ia[0];
    Shape s = in_val(n, 0).shape;
    std::size_t total = 0;
    for (std::size_t k = 0; k < n.in.size(); ++k) total += in_val(n, k).shape[axis];
    s[axis] = total;
    std::size_t outer, inner;
    outer_inner(s, axis, outer, inner);
    n.value = Tensor<T>(s);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.in.size(); ++k) {
      const auto& x = in_val(n, k);
      const std::size_t ak = x.shape[axis];
      for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.ptr() + o * ak * inner, ak * inner, n.value.ptr() + (o * total + off) * inner);
      off += ak;
    }
  }

  void bwd_concat(Node<T>& n) {
    const std::size_t axis = n.ia[0];
    const std::size_t total = n.value.shape[axis];
    std::size_t outer, inner;
    outer_inner(n.value.shape, axis, outer, inner);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.in.size(); ++k) {
      const std::size_t ak = in_val(n, k).shape[axis];
      if (in_needs(n, k)) {
        T* g = gbuf(n.in[k]).ptr();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = n.grad.ptr() + (o * total + off) * inner;
          T* dst = g + o * ak * inner;
          for (std::size_t i = 0; i < ak * inner; ++i) dst[i] += src[i];
        }
      }
      off += ak;
    }
  }

  void fwd_slice(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const std::size_t axis = n.ia[0], b = n.ia[1], e = n.ia[2];
    std::size_t outer, inner;
    outer_inner(x.shape, axis, outer, inner);
    Shape s = x.shape;
    const std::size_t k = s[axis];
    s[axis] = e - b;
    n.value = Tensor<T>(s);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.ptr() + (o * k + b) * inner, (e - b) * inner, n.value.ptr() + o * (e - b) * inner);
  }

  void bwd_slice(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const auto& x = in_val(n, 0);
    const std::size_t axis = n.ia[0], b = n.ia[1], e = n.ia[2];
    std::size_t outer, inner;
    outer_inner(x.shape, axis, outer, inner);
    const std::size_t k = x.shape[axis], w = (e - b) * inner;
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = n.grad.ptr() + o * w;
      T* dst = g + (o * k + b) * inner;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
  }

  void fwd_permute(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const std::size_t A = x.shape[0], B = x.shape[1], C = x.shape[2], D = x.shape[3];
    n.value = Tensor<T>(Shape{A, C, B, D});
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          std::copy_n(x.ptr() + ((a * B + b) * C + c) * D, D, n.value.ptr() + ((a * C + c) * B + b) * D);
  }

  void bwd_permute(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const auto& x = in_val(n, 0);
    const std::size_t A = x.shape[0], B = x.shape[1], C = x.shape[2], D = x.shape[3];
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* src = n.grad.ptr() + ((a * C + c) * B + b) * D;
          T* dst = g + ((a * B + b) * C + c) * D;
          for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  }

  void fwd_select(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const std::size_t B = x.shape[0], T_ = x.shape[1], F = x.shape[2], t = n.ia[0];
    n.value = Tensor<T>(Shape{B, F});
    for (std::size_t b = 0; b < B; ++b) std::copy_n(x.ptr() + (b * T_ + t) * F, F, n.value.ptr() + b * F);
  }

  void bwd_select(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const auto& x = in_val(n, 0);
    const std::size_t B = x.shape[0], T_ = x.shape[1], F = x.shape[2], t = n.ia[0];
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f) g[(b * T_ + t) * F + f] += n.grad.data[b * F + f];
  }

  void fwd_stack(Node<T>& n) {
    const std::size_t cols = n.ia[0], steps = n.in.size();
    const std::size_t B = in_val(n, 0).shape[0], C = in_val(n, 0).shape[1];
    n.value = Tensor<T>(Shape{B, steps, cols});
    for (std::size_t s = 0; s < steps; ++s) {
      const auto& x = in_val(n, s);
      for (std::size_t b = 0; b < B; ++b) std::copy_n(x.ptr() + b * C, cols, n.value.ptr() + (b * steps + s) * cols);
    }
  }

  void bwd_stack(Node<T>& n) {
    const std::size_t cols = n.ia[0], steps = n.in.size();
    const std::size_t B = in_val(n, 0).shape[0], C = in_val(n, 0).shape[1];
    for (std::size_t s = 0; s < steps; ++s) {
      if (!in_needs(n, s)) continue;
      T* g = gbuf(n.in[s]).ptr();
      for (std::size_t b = 0; b < B; ++b) {
        const T* src = n.grad.ptr() + (b * steps + s) * cols;
        for (std::size_t c = 0; c < cols; ++c) g[b * C + c] += src[c];
      }
    }
  }

  // ---- LSTM ---------------------------------------------------------------

  void fwd_lstm(Node<T>& n) {
    const auto& xw = in_val(n, 0);
    const auto& st = in_val(n, 1);
    const auto& wh = in_val(n, 2);
    const std::size_t B = st.shape[0], H = st.shape[1] / 2, T_ = xw.shape[1], t = n.ia[0];
    const std::size_t G = 4 * H;
    // cache: activated gates [B, 4H] followed by tanh(c) [B, H]
    n.cache.assign(B * G + B * H, T(0));
    MapM gates(n.cache.data(), B, G);
    for (std::size_t b = 0; b < B; ++b) std::copy_n(xw.ptr() + (b * T_ + t) * G, G, n.cache.data() + b * G);
    gates.noalias() += CSMapM(st.ptr(), B, H, Eigen::OuterStride<>(2 * H)) * CMapM(wh.ptr(), H, G);
    n.value = Tensor<T>(st.shape);
    T* tc = n.cache.data() + B * G;
    for (std::size_t b = 0; b < B; ++b) {
      T* g = n.cache.data() + b * G;
      const T* prev = st.ptr() + b * 2 * H;
      T* out = n.value.ptr() + b * 2 * H;
      for (std::size_t j = 0; j < H; ++j) {
        g[j] = sigm(g[j]);
        g[H + j] = sigm(g[H + j]);
        g[2 * H + j] = std::tanh(g[2 * H + j]);
        g[3 * H + j] = sigm(g[3 * H + j]);
        const T c = g[H + j] * prev[H + j] + g[j] * g[2 * H + j];
        tc[b * H + j] = std::tanh(c);
        out[j] = g[3 * H + j] * tc[b * H + j];
        out[H + j] = c;
      }
      if (!n.ra.empty() && n.ra[b] == T(0)) std::copy_n(prev, 2 * H, out);
    }
  }

  void bwd_lstm(Node<T>& n) {
    const auto& xw = in_val(n, 0);
    const auto& st = in_val(n, 1);
    const auto& wh = in_val(n, 2);
    const std::size_t B = st.shape[0], H = st.shape[1] / 2, T_ = xw.shape[1], t = n.ia[0];
    const std::size_t G = 4 * H;
    Mat dg = Mat::Zero(B, G);
    T* gprev = in_needs(n, 1) ? gbuf(n.in[1]).ptr() : nullptr;
    const T* tc = n.cache.data() + B * G;
    for (std::size_t b = 0; b < B; ++b) {
      const T* dout = n.grad.ptr() + b * 2 * H;
      if (!n.ra.empty() && n.ra[b] == T(0)) {
        if (gprev)
          for (std::size_t j = 0; j < 2 * H; ++j) gprev[b * 2 * H + j] += dout[j];
        continue;
      }
      const T* g = n.cache.data() + b * G;
      const T* prev = st.ptr() + b * 2 * H;
      T* d = dg.data() + b * G;
      for (std::size_t j = 0; j < H; ++j) {
        const T i_ = g[j], f_ = g[H + j], gg = g[2 * H + j], o_ = g[3 * H + j];
        const T tcj = tc[b * H + j];
        const T dh = dout[j];
        const T dc = dout[H + j] + dh * o_ * (T(1) - tcj * tcj);
        d[j] = dc * gg * i_ * (T(1) - i_);
        d[H + j] = dc * prev[H + j] * f_ * (T(1) - f_);
        d[2 * H + j] = dc * i_ * (T(1) - gg * gg);
        d[3 * H + j] = dh * tcj * o_ * (T(1) - o_);
        if (gprev) gprev[b * 2 * H + H + j] += dc * f_;
      }
    }
    if (in_needs(n, 0)) {
      T* gx = gbuf(n.in[0]).ptr();
      for (std::size_t b = 0; b < B; ++b) {
        T* dst = gx + (b * T_ + t) * G;
        const T* src = dg.data() + b * G;
        for (std::size_t j = 0; j < G; ++j) dst[j] += src[j];
      }
    }
    if (gprev) SMapM(gprev, B, H, Eigen::OuterStride<>(2 * H)).noalias() += dg * CMapM(wh.ptr(), H, G).transpose();
    if (in_needs(n, 2))
      MapM(gbuf(n.in[2]).ptr(), H, G).noalias() +=
          CSMapM(st.ptr(), B, H, Eigen::OuterStride<>(2 * H)).transpose() * dg;
  }

  // ---- layer norm ---------------------------------------------------------

  void fwd_layer_norm(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const auto& gamma = in_val(n, 1);
    const auto& beta = in_val(n, 2);
    const std::size_t f = x.cols(), rows = x.rows();
    // cache: xhat [rows * f] then rstd [rows]
    n.cache.assign(rows * f + rows, T(0));
    n.value = Tensor<T>(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xi = x.ptr() + r * f;
      T mu = 0;
      for (std::size_t j = 0; j < f; ++j) mu += xi[j];
      mu /= static_cast<T>(f);
      T var = 0;
      for (std::size_t j = 0; j < f; ++j) var += (xi[j] - mu) * (xi[j] - mu);
      var /= static_cast<T>(f);
      const T rstd = T(1) / std::sqrt(var + static_cast<T>(n.fa));
      n.cache[rows * f + r] = rstd;
      for (std::size_t j = 0; j < f; ++j) {
        const T xh = (xi[j] - mu) * rstd;
        n.cache[r * f + j] = xh;
        n.value.data[r * f + j] = xh * gamma.data[j] + beta.data[j];
      }
    }
  }

  void bwd_layer_norm(Node<T>& n) {
    const auto& gamma = in_val(n, 1);
    const std::size_t f = n.value.cols(), rows = n.value.rows();
    T* gx = in_needs(n, 0) ? gbuf(n.in[0]).ptr() : nullptr;
    T* gg = in_needs(n, 1) ? gbuf(n.in[1]).ptr() : nullptr;
    T* gb = in_needs(n, 2) ? gbuf(n.in[2]).ptr() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = n.grad.ptr() + r * f;
      const T* xh = n.cache.data() + r * f;
      const T rstd = n.cache[rows * f + r];
      T m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < f; ++j) {
        const T dxh = dy[j] * gamma.data[j];
        m1 += dxh;
        m2 += dxh * xh[j];
        if (gg) gg[j] += dy[j] * xh[j];
        if (gb) gb[j] += dy[j];
      }
      m1 /= static_cast<T>(f);
      m2 /= static_cast<T>(f);
      if (gx)
        for (std::size_t j = 0; j < f; ++j)
          gx[r * f + j] += rstd * (dy[j] * gamma.data[j] - m1 - xh[j] * m2);
    }
  }

  // ---- lookups ------------------------------------------------------------

  void fwd_embedding(Node<T>& n) {
    const auto& tab = in_val(n, 0);
    const std::size_t E = tab.shape[1];
    Shape s = n.sa;
    s.push_back(E);
    n.value = Tensor<T>(s);
    for (std::size_t i = 0; i < n.ia.size(); ++i) std::copy_n(tab.ptr() + n.ia[i] * E, E, n.value.ptr() + i * E);
  }

  void bwd_embedding(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const std::size_t E = in_val(n, 0).shape[1];
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t i = 0; i < n.ia.size(); ++i)
      for (std::size_t e = 0; e < E; ++e) g[n.ia[i] * E + e] += n.grad.data[i * E + e];
  }

  void fwd_gather_rows(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const std::size_t F = x.cols();
    n.value = Tensor<T>(Shape{n.ia.size(), F});
    for (std::size_t i = 0; i < n.ia.size(); ++i) std::copy_n(x.ptr() + n.ia[i] * F, F, n.value.ptr() + i * F);
  }

  void bwd_gather_rows(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const std::size_t F = n.value.cols();
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t i = 0; i < n.ia.size(); ++i)
      for (std::size_t f = 0; f < F; ++f) g[n.ia[i] * F + f] += n.grad.data[i * F + f];
  }

  void fwd_row_dot(Node<T>& n) {
    const auto& p = in_val(n, 0);
    const auto& z = in_val(n, 1);
    const std::size_t N = n.sa[0], J = n.sa[1], D = p.shape[1];
    n.value = Tensor<T>(Shape{N, J});
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const T* a = p.ptr() + i * D;
        const T* b = z.ptr() + n.ia[i * J + j] * D;
        T s = 0;
        for (std::size_t d = 0; d < D; ++d) s += a[d] * b[d];
        n.value.data[i * J + j] = s;
      }
  }

  void bwd_row_dot(Node<T>& n) {
    const auto& p = in_val(n, 0);
    const auto& z = in_val(n, 1);
    const std::size_t N = n.sa[0], J = n.sa[1], D = p.shape[1];
    T* gp = in_needs(n, 0) ? gbuf(n.in[0]).ptr() : nullptr;
    T* gz = in_needs(n, 1) ? gbuf(n.in[1]).ptr() : nullptr;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        const T g = n.grad.data[i * J + j];
        const std::size_t zi = n.ia[i * J + j];
        if (gp)
          for (std::size_t d = 0; d < D; ++d) gp[i * D + d] += g * z.data[zi * D + d];
        if (gz)
          for (std::size_t d = 0; d < D; ++d) gz[zi * D + d] += g * p.data[i * D + d];
      }
  }

  // ---- losses -------------------------------------------------------------

  void fwd_cross_entropy(Node<T>& n) {
    const auto& x = in_val(n, 0);
    const std::size_t N = x.shape[0], V = x.shape[1];
    n.cache.assign(N * V, T(0));
    T total = 0;
    for (std::size_t r = 0; r < N; ++r) {
      if (n.ia[r] < 0) continue;
      const T* xi = x.ptr() + r * V;
      const T mx = *std::max_element(xi, xi + V);
      T s = 0;
      for (std::size_t j = 0; j < V; ++j) s += std::exp(xi[j] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t j = 0; j < V; ++j) n.cache[r * V + j] = std::exp(xi[j] - lse);
      total += lse - xi[n.ia[r]];
    }
    n.value = Tensor<T>::scalar(total / static_cast<T>(n.fa));
  }

  void bwd_cross_entropy(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const auto& x = in_val(n, 0);
    const std::size_t N = x.shape[0], V = x.shape[1];
    const T s = n.grad.data[0] / static_cast<T>(n.fa);
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t r = 0; r < N; ++r) {
      if (n.ia[r] < 0) continue;
      for (std::size_t j = 0; j < V; ++j) g[r * V + j] += s * n.cache[r * V + j];
      g[r * V + n.ia[r]] -= s;
    }
  }

  void fwd_logistic(Node<T>& n) {
    const auto& x = in_val(n, 0);
    T total = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      total += n.ra[i] != T(0) ? softplus(-x.data[i]) : softplus(x.data[i]);
    n.value = Tensor<T>::scalar(total / static_cast<T>(n.fa));
  }

  void bwd_logistic(Node<T>& n) {
    if (!in_needs(n, 0)) return;
    const auto& x = in_val(n, 0);
    const T s = n.grad.data[0] / static_cast<T>(n.fa);
    T* g = gbuf(n.in[0]).ptr();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T sg = sigm(x.data[i]);
      g[i] += s * (n.ra[i] != T(0) ? sg - T(1) : sg);
    }
  }

  void fwd_quantize(Node<T>& n) {
    const auto& z = in_val(n, 0);
    const std::size_t V = n.sa[0], D = n.sa[1], rows = z.size() / D;
    n.value = Tensor<T>(z.shape);
    n.cache.assign(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      const T* zr = z.ptr() + r * D;
      std::size_t best = 0;
      T best_d = std::numeric_limits<T>::infinity();
      for (std::size_t v = 0; v < V; ++v) {
        const T* c = n.ra.data() + v * D;
        T d = 0;
        for (std::size_t k = 0; k < D; ++k) d += (zr[k] - c[k]) * (zr[k] - c[k]);
        if (d < best_d) {
          best_d = d;
          best = v;
        }
      }
      n.cache[r] = static_cast<T>(best);
      std::copy_n(n.ra.data() + best * D, D, n.value.ptr() + r * D);
    }
  }
};

// Re-evaluate the graph with `inputs` rebound and return the named outputs.
template <typename T>
TensorMap<T> forward(Graph<T>& g, const TensorMap<T>& inputs) {
  return g.forward(inputs);
}

// d(loss)/d(parameter) for every trainable parameter reachable in `g`,
// computed after rebinding `inputs`. Parameter grad buffers are left holding
// exactly these values.
template <typename T>
TensorMap<T> gradients(Graph<T>& g, const TensorMap<T>& inputs, NodeId loss) {
  g.forward(inputs);
  auto params = g.parameters();
  for (auto* p : params) p->grad.fill(T(0));
  g.backward(loss);
  TensorMap<T> out;
  for (auto* p : params)
    if (p->trainable) out.insert_or_assign(p->name, p->grad);
  return out;
}

}  // namespace sslst
