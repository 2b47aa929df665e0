#pragma once
// Reverse-mode autodiff on an append-only tape. Nodes hold their forward
// value; gradients are allocated lazily during backward. backward() can
// target a subset of nodes, in which case it only walks tape segments that
// lie on a path from a target to the loss — this is what makes the in-loop
// gradient queries cheap (weight gradients are skipped entirely) and it
// doubles as the barrier that keeps those queries from crossing iteration
// boundaries.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slotvae/tensor.hpp"

namespace slotvae {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddS,
  kMulS,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kElu,
  kSoftplus,
  kSqrt,
  kMatmul,
  kConv2d,
  kReduceSum,
  kBroadcastTo,
  kReshape,
  kSlice,
  kConcat,
  kSoftmax,
  kLogsumexp,
  kLayerNorm,
  kSpatialBroadcast,
  kStopGrad,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kAddS: return "adds";
    case Op::kMulS: return "muls";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kElu: return "elu";
    case Op::kSoftplus: return "softplus";
    case Op::kSqrt: return "sqrt";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kBroadcastTo: return "broadcast_to";
    case Op::kReshape: return "reshape";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kSoftmax: return "softmax";
    case Op::kLogsumexp: return "logsumexp";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kSpatialBroadcast: return "spatial_broadcast";
    case Op::kStopGrad: return "stop_gradient";
  }
  return "?";
}

template <typename S>
class Graph;

// Lightweight handle into a graph. Copyable; valid as long as the graph lives.
template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<S>& val() const { return g->value(id); }
  const Shape& shape() const { return g->value(id).shape; }
};

template <typename S>
class Graph {
 public:
  struct Node {
    Op op = Op::kLeaf;
    int nin = 0;
    std::array<int, 3> in{{-1, -1, -1}};
    std::vector<int> extra;  // concat: extra inputs; reduce_sum: axes
    Tensor<S> val;
    Tensor<S> grad;
    bool has_grad = false;
    bool needs_grad = false;
    int i0 = 0, i1 = 0, i2 = 0;  // op-specific ints (axis, stride, ...)
    S s0 = S(0);                 // op-specific scalar
  };

  // When set, every pushed node is checked for NaN/Inf (slow; tests enable it).
  bool check_finite = false;

  Var<S> leaf(Tensor<S> v, bool trainable) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(v);
    n.needs_grad = trainable;
    return push(std::move(n));
  }
  Var<S> constant(Tensor<S> v) { return leaf(std::move(v), false); }

  Var<S> push(Node n) {
    if (check_finite && !n.val.all_finite())
      fail(std::string("non-finite values out of op ") + op_name(n.op));
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(int id) const { return nodes_[id].val; }
  Tensor<S>& value_mut(int id) { return nodes_[id].val; }
  const Node& node(int id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  bool has_grad(int id) const { return nodes_[id].has_grad; }
  const Tensor<S>& grad(int id) const {
    if (!nodes_[id].has_grad) fail("grad requested on node without gradient");
    return nodes_[id].grad;
  }
  Tensor<S>& ensure_grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      // careful: a default-constructed grad has shape {} just like a rank-0
      // scalar, so compare storage sizes too before reusing the buffer
      if (n.grad.shape == n.val.shape && n.grad.data.size() == n.val.data.size()) {
        for (auto& v : n.grad.data) v = S(0);
      } else {
        n.grad = Tensor<S>(n.val.shape);
      }
      n.has_grad = true;
    }
    return n.grad;
  }

  void clear_grads() {
    for (auto& n : nodes_) n.has_grad = false;
  }

  // Full backward: gradients reach every node with needs_grad on a path to
  // the loss. With `targets`, only paths target -> loss are walked.
  void backward(int loss_id, const std::vector<int>& targets = {}) {
    if (nodes_[loss_id].val.numel() != 1)
      fail("backward: loss must be a scalar, got " +
           shape_str(nodes_[loss_id].val.shape));
    clear_grads();
    rf_.assign(nodes_.size(), 0);
    if (targets.empty()) {
      for (size_t i = 0; i <= static_cast<size_t>(loss_id); ++i)
        rf_[i] = nodes_[i].needs_grad ? 1 : 0;
    } else {
      for (int t : targets)
        if (nodes_[t].needs_grad) rf_[t] = 1;
      for (int i = 0; i <= loss_id; ++i) {
        if (rf_[i] || !nodes_[i].needs_grad) continue;
        const Node& n = nodes_[i];
        bool hit = false;
        for (int k = 0; k < n.nin && !hit; ++k) hit = rf_[n.in[k]] != 0;
        if (n.op == Op::kConcat)
          for (size_t k = 0; k < n.extra.size() && !hit; ++k) hit = rf_[n.extra[k]] != 0;
        if (hit) rf_[i] = 1;
      }
    }
    ensure_grad(loss_id)[0] = S(1);
    if (!rf_[loss_id] && !targets.empty()) {
      // loss unreachable from the targets: all requested grads are zero
      for (int t : targets) ensure_grad(t);
      return;
    }
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (!targets.empty() && !rf_[i]) continue;
      if (n.op == Op::kLeaf || n.op == Op::kStopGrad) continue;
      backprop_node(i);
    }
    // subset mode: a target the loss doesn't depend on still reports zeros
    for (int t : targets) ensure_grad(t);
  }

  bool reachable(int id) const { return rf_[id] != 0; }

 private:
  void backprop_node(int i);  // defined in ops.hpp (needs the kernels)

  std::vector<Node> nodes_;
  std::vector<char> rf_;
};

}  // namespace slotvae
