#pragma once
// Differentiable op library. Each builder validates shapes, runs the forward
// kernel eagerly, and appends one node to the tape; Graph::backprop_node at
// the bottom dispatches the matching VJPs. Matmul and conv2d lower to Eigen
// GEMMs (conv via im2col); everything else is plain loops over the dense
// storage.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "slotvae/graph.hpp"

namespace slotvae {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

enum class Pad { kSame, kValid };

namespace detail {

template <typename S>
Graph<S>* same_graph(std::initializer_list<Var<S>> vs) {
  Graph<S>* g = nullptr;
  for (const auto& v : vs) {
    if (!v.valid()) fail("op input is not bound to a graph");
    if (g && v.g != g) fail("op inputs come from different graphs");
    g = v.g;
  }
  return g;
}

// Sums in ascending value order, so the result depends only on the multiset
// of addends. softmax and logsumexp reduce with this, which makes the
// mixture log-likelihood exactly invariant under permutations of the slot
// axis instead of merely close.
template <typename S>
S ordered_sum(S* v, std::int64_t n) {
  std::sort(v, v + n);
  S s = S(0);
  for (std::int64_t i = 0; i < n; ++i) s += v[i];
  return s;
}

inline void axis_decomp(const Shape& s, int axis, std::int64_t& outer, std::int64_t& n,
                        std::int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
S stable_softplus(S x) {
  const S ax = x < S(0) ? -x : x;
  return std::max(x, S(0)) + std::log1p(std::exp(-ax));
}

// ----- conv2d geometry + im2col -----

struct ConvGeom {
  int N, Ci, H, W, Co, kh, kw, stride, Ho, Wo, ph, pw;
  std::int64_t P, CK;
  bool batched;  // rank-4 input
};

inline ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, Pad pad) {
  if (ws.size() != 4) fail("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(ws));
  if (xs.size() != 3 && xs.size() != 4)
    fail("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(xs));
  if (stride != 1 && stride != 2) fail("conv2d: stride must be 1 or 2");
  ConvGeom g{};
  g.batched = xs.size() == 4;
  g.N = g.batched ? xs[0] : 1;
  g.Ci = xs[g.batched ? 1 : 0];
  g.H = xs[g.batched ? 2 : 1];
  g.W = xs[g.batched ? 3 : 2];
  g.Co = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.stride = stride;
  if (ws[1] != g.Ci)
    fail("conv2d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
         std::to_string(g.Ci));
  if (pad == Pad::kSame) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) fail("conv2d: same padding requires odd kernels");
    g.Ho = (g.H + stride - 1) / stride;
    g.Wo = (g.W + stride - 1) / stride;
    const int pth = std::max(0, (g.Ho - 1) * stride + g.kh - g.H);
    const int ptw = std::max(0, (g.Wo - 1) * stride + g.kw - g.W);
    g.ph = pth / 2;  // floor-split: extra padding goes to bottom/right
    g.pw = ptw / 2;
  } else {
    if (g.H < g.kh || g.W < g.kw)
      fail("conv2d: valid padding needs input >= kernel, got " + shape_str(xs));
    g.Ho = (g.H - g.kh) / stride + 1;
    g.Wo = (g.W - g.kw) / stride + 1;
    g.ph = g.pw = 0;
  }
  g.P = static_cast<std::int64_t>(g.Ho) * g.Wo;
  g.CK = static_cast<std::int64_t>(g.Ci) * g.kh * g.kw;
  return g;
}

// col is (CK x P), column-major: column p holds the receptive field of output
// pixel p, so each column is one contiguous run.
template <typename S>
void im2col(const S* x, const ConvGeom& g, S* col) {
  for (int oh = 0; oh < g.Ho; ++oh) {
    for (int ow = 0; ow < g.Wo; ++ow) {
      S* cp = col + (static_cast<std::int64_t>(oh) * g.Wo + ow) * g.CK;
      for (int c = 0; c < g.Ci; ++c) {
        const S* xc = x + static_cast<std::int64_t>(c) * g.H * g.W;
        for (int i = 0; i < g.kh; ++i) {
          const int y = oh * g.stride - g.ph + i;
          if (y < 0 || y >= g.H) {
            for (int j = 0; j < g.kw; ++j) *cp++ = S(0);
            continue;
          }
          const S* xrow = xc + static_cast<std::int64_t>(y) * g.W;
          for (int j = 0; j < g.kw; ++j) {
            const int xx = ow * g.stride - g.pw + j;
            *cp++ = (xx >= 0 && xx < g.W) ? xrow[xx] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, const ConvGeom& g, S* gx) {
  for (int oh = 0; oh < g.Ho; ++oh) {
    for (int ow = 0; ow < g.Wo; ++ow) {
      const S* cp = col + (static_cast<std::int64_t>(oh) * g.Wo + ow) * g.CK;
      for (int c = 0; c < g.Ci; ++c) {
        S* xc = gx + static_cast<std::int64_t>(c) * g.H * g.W;
        for (int i = 0; i < g.kh; ++i) {
          const int y = oh * g.stride - g.ph + i;
          if (y < 0 || y >= g.H) {
            cp += g.kw;
            continue;
          }
          S* xrow = xc + static_cast<std::int64_t>(y) * g.W;
          for (int j = 0; j < g.kw; ++j) {
            const int xx = ow * g.stride - g.pw + j;
            if (xx >= 0 && xx < g.W) xrow[xx] += *cp;
            ++cp;
          }
        }
      }
    }
  }
}

template <typename S>
std::vector<S>& conv_scratch() {
  thread_local std::vector<S> buf;
  return buf;
}

template <typename S>
void conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const ConvGeom& g,
                    Tensor<S>& y) {
  auto& col = conv_scratch<S>();
  col.resize(static_cast<size_t>(g.CK * g.P));
  Eigen::Map<const MatRM<S>> wm(w.ptr(), g.Co, g.CK);
  const std::int64_t xstep = static_cast<std::int64_t>(g.Ci) * g.H * g.W;
  const std::int64_t ystep = static_cast<std::int64_t>(g.Co) * g.P;
  for (int n = 0; n < g.N; ++n) {
    im2col(x.ptr() + n * xstep, g, col.data());
    Eigen::Map<const MatCM<S>> cm(col.data(), g.CK, g.P);
    Eigen::Map<MatRM<S>> ym(y.ptr() + n * ystep, g.Co, g.P);
    ym.noalias() = wm * cm;
  }
}

template <typename S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy,
                     const ConvGeom& g, Tensor<S>* gx, Tensor<S>* gw) {
  auto& col = conv_scratch<S>();
  thread_local std::vector<S> dcol;
  if (gw) col.resize(static_cast<size_t>(g.CK * g.P));
  if (gx) dcol.resize(static_cast<size_t>(g.CK * g.P));
  Eigen::Map<const MatRM<S>> wm(w.ptr(), g.Co, g.CK);
  const std::int64_t xstep = static_cast<std::int64_t>(g.Ci) * g.H * g.W;
  const std::int64_t ystep = static_cast<std::int64_t>(g.Co) * g.P;
  for (int n = 0; n < g.N; ++n) {
    Eigen::Map<const MatRM<S>> dym(gy.ptr() + n * ystep, g.Co, g.P);
    if (gw) {
      im2col(x.ptr() + n * xstep, g, col.data());
      Eigen::Map<const MatCM<S>> cm(col.data(), g.CK, g.P);
      Eigen::Map<MatRM<S>> gwm(gw->ptr(), g.Co, g.CK);
      gwm.noalias() += dym * cm.transpose();
    }
    if (gx) {
      Eigen::Map<MatCM<S>> dcm(dcol.data(), g.CK, g.P);
      dcm.noalias() = wm.transpose() * dym;
      col2im_add(dcol.data(), g, gx->ptr() + n * xstep);
    }
  }
}

}  // namespace detail

// ============================== builders ==============================

template <typename S>
Var<S> binary_op(Op op, Var<S> a, Var<S> b) {
  Graph<S>* g = detail::same_graph<S>({a, b});
  const Tensor<S>& A = a.val();
  const Tensor<S>& B = b.val();
  Tensor<S> out(broadcast_shapes(A.shape, B.shape));
  switch (op) {
    case Op::kAdd: for_each_bcast(A, B, out, [](S x, S y) { return x + y; }); break;
    case Op::kSub: for_each_bcast(A, B, out, [](S x, S y) { return x - y; }); break;
    case Op::kMul: for_each_bcast(A, B, out, [](S x, S y) { return x * y; }); break;
    case Op::kDiv: for_each_bcast(A, B, out, [](S x, S y) { return x / y; }); break;
    default: fail(std::string("not a binary elementwise op: ") + op_name(op));
  }
  typename Graph<S>::Node n;
  n.op = op;
  n.nin = 2;
  n.in = {a.id, b.id, -1};
  n.val = std::move(out);
  n.needs_grad = g->node(a.id).needs_grad || g->node(b.id).needs_grad;
  return g->push(std::move(n));
}

template <typename S> Var<S> add(Var<S> a, Var<S> b) { return binary_op(Op::kAdd, a, b); }
template <typename S> Var<S> sub(Var<S> a, Var<S> b) { return binary_op(Op::kSub, a, b); }
template <typename S> Var<S> mul(Var<S> a, Var<S> b) { return binary_op(Op::kMul, a, b); }
template <typename S> Var<S> div(Var<S> a, Var<S> b) { return binary_op(Op::kDiv, a, b); }

template <typename S>
Var<S> unary_op(Op op, Var<S> a, S s0 = S(0)) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  Tensor<S> out(A.shape);
  const std::int64_t n = A.numel();
  switch (op) {
    case Op::kAddS: for (std::int64_t i = 0; i < n; ++i) out[i] = A[i] + s0; break;
    case Op::kMulS: for (std::int64_t i = 0; i < n; ++i) out[i] = A[i] * s0; break;
    case Op::kNeg: for (std::int64_t i = 0; i < n; ++i) out[i] = -A[i]; break;
    case Op::kExp: for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(A[i]); break;
    case Op::kLog: for (std::int64_t i = 0; i < n; ++i) out[i] = std::log(A[i]); break;
    case Op::kTanh: for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(A[i]); break;
    case Op::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = detail::stable_sigmoid(A[i]);
      break;
    case Op::kElu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = A[i] > S(0) ? A[i] : std::expm1(A[i]);
      break;
    case Op::kSoftplus:
      for (std::int64_t i = 0; i < n; ++i) out[i] = detail::stable_softplus(A[i]);
      break;
    case Op::kSqrt: for (std::int64_t i = 0; i < n; ++i) out[i] = std::sqrt(A[i]); break;
    default: fail(std::string("not a unary elementwise op: ") + op_name(op));
  }
  typename Graph<S>::Node nd;
  nd.op = op;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.s0 = s0;
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S> Var<S> adds(Var<S> a, S c) { return unary_op(Op::kAddS, a, c); }
template <typename S> Var<S> muls(Var<S> a, S c) { return unary_op(Op::kMulS, a, c); }
template <typename S> Var<S> neg(Var<S> a) { return unary_op(Op::kNeg, a); }
template <typename S> Var<S> exp(Var<S> a) { return unary_op(Op::kExp, a); }
template <typename S> Var<S> log(Var<S> a) { return unary_op(Op::kLog, a); }
template <typename S> Var<S> tanh(Var<S> a) { return unary_op(Op::kTanh, a); }
template <typename S> Var<S> sigmoid(Var<S> a) { return unary_op(Op::kSigmoid, a); }
template <typename S> Var<S> elu(Var<S> a) { return unary_op(Op::kElu, a); }
template <typename S> Var<S> softplus(Var<S> a) { return unary_op(Op::kSoftplus, a); }
template <typename S> Var<S> sqrt(Var<S> a) { return unary_op(Op::kSqrt, a); }

// operators (elementwise, broadcasting)
template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S> Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S> Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }
template <typename S> Var<S> operator+(Var<S> a, S c) { return adds(a, c); }
template <typename S> Var<S> operator+(S c, Var<S> a) { return adds(a, c); }
template <typename S> Var<S> operator-(Var<S> a, S c) { return adds(a, -c); }
template <typename S> Var<S> operator-(Var<S> a) { return neg(a); }
template <typename S> Var<S> operator*(Var<S> a, S c) { return muls(a, c); }
template <typename S> Var<S> operator*(S c, Var<S> a) { return muls(a, c); }

// Generic dispatcher over the elementwise kinds (handy for op-sweep tests).
template <typename S>
Var<S> elementwise(Op op, Var<S> a, Var<S> b = {}) {
  switch (op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: return binary_op(op, a, b);
    case Op::kNeg:
    case Op::kExp:
    case Op::kLog:
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kElu:
    case Op::kSoftplus:
    case Op::kSqrt: return unary_op(op, a);
    default: fail(std::string("elementwise: unsupported op ") + op_name(op));
  }
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>* g = detail::same_graph<S>({a, b});
  const Tensor<S>& A = a.val();
  const Tensor<S>& B = b.val();
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
    fail("matmul: incompatible shapes " + shape_str(A.shape) + " x " + shape_str(B.shape));
  const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor<S> out({m, n});
  Eigen::Map<const MatRM<S>> am(A.ptr(), m, k);
  Eigen::Map<const MatRM<S>> bm(B.ptr(), k, n);
  Eigen::Map<MatRM<S>> om(out.ptr(), m, n);
  om.noalias() = am * bm;
  typename Graph<S>::Node nd;
  nd.op = Op::kMatmul;
  nd.nin = 2;
  nd.in = {a.id, b.id, -1};
  nd.val = std::move(out);
  nd.needs_grad = g->node(a.id).needs_grad || g->node(b.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, int stride, Pad pad) {
  Graph<S>* g = detail::same_graph<S>({x, w});
  const detail::ConvGeom geo = detail::conv_geom(x.shape(), w.val().shape, stride, pad);
  Shape os = geo.batched ? Shape{geo.N, geo.Co, geo.Ho, geo.Wo}
                         : Shape{geo.Co, geo.Ho, geo.Wo};
  Tensor<S> out(os);
  detail::conv2d_forward(x.val(), w.val(), geo, out);
  typename Graph<S>::Node nd;
  nd.op = Op::kConv2d;
  nd.nin = 2;
  nd.in = {x.id, w.id, -1};
  nd.val = std::move(out);
  nd.i0 = stride;
  nd.i1 = pad == Pad::kSame ? 1 : 0;
  nd.needs_grad = g->node(x.id).needs_grad || g->node(w.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> reduce_sum(Var<S> a, std::vector<int> axes, bool keepdims = false) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  std::sort(axes.begin(), axes.end());
  for (size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= A.rank())
      fail("reduce_sum: axis " + std::to_string(axes[i]) + " out of range for " +
           shape_str(A.shape));
    if (i && axes[i] == axes[i - 1]) fail("reduce_sum: duplicate axis");
  }
  Shape keep = A.shape;
  for (int ax : axes) keep[ax] = 1;
  Tensor<S> acc(keep);
  add_sum_to(acc, A);
  if (!keepdims) {
    Shape squeezed;
    for (int i = 0; i < A.rank(); ++i)
      if (std::find(axes.begin(), axes.end(), i) == axes.end())
        squeezed.push_back(A.shape[i]);
    acc.shape = std::move(squeezed);
  }
  typename Graph<S>::Node nd;
  nd.op = Op::kReduceSum;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(acc);
  nd.i0 = keepdims ? 1 : 0;
  nd.extra = std::move(axes);
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  std::vector<int> axes(a.val().rank());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_sum(a, std::move(axes), false);
}

template <typename S>
Var<S> reduce_mean(Var<S> a, std::vector<int> axes, bool keepdims = false) {
  std::int64_t cnt = 1;
  for (int ax : axes) cnt *= a.val().shape[ax];
  return muls(reduce_sum(a, std::move(axes), keepdims), S(1) / static_cast<S>(cnt));
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return muls(sum_all(a), S(1) / static_cast<S>(a.val().numel()));
}

template <typename S>
Var<S> broadcast_to(Var<S> a, Shape target) {
  Graph<S>* g = detail::same_graph<S>({a});
  if (broadcast_shapes(a.val().shape, target) != target)
    fail("broadcast_to: cannot expand " + shape_str(a.val().shape) + " to " +
         shape_str(target));
  Tensor<S> out(target);
  bcast_expand(out, a.val(), /*accumulate=*/false);
  typename Graph<S>::Node nd;
  nd.op = Op::kBroadcastTo;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> reshape(Var<S> a, Shape target) {
  Graph<S>* g = detail::same_graph<S>({a});
  if (shape_numel(target) != a.val().numel())
    fail("reshape: " + shape_str(a.val().shape) + " to " + shape_str(target) +
         " changes element count");
  Tensor<S> out(target, a.val().data);
  typename Graph<S>::Node nd;
  nd.op = Op::kReshape;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> slice(Var<S> a, int axis, int start, int len) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  if (axis < 0 || axis >= A.rank() || start < 0 || len <= 0 ||
      start + len > A.shape[axis])
    fail("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
         ") on axis " + std::to_string(axis) + " of " + shape_str(A.shape));
  Shape os = A.shape;
  os[axis] = len;
  Tensor<S> out(os);
  copy_axis_block(A, start, out, 0, axis, len);
  typename Graph<S>::Node nd;
  nd.op = Op::kSlice;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.i0 = axis;
  nd.i1 = start;
  nd.i2 = len;
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> concat(int axis, const std::vector<Var<S>>& parts) {
  if (parts.empty()) fail("concat: no inputs");
  Graph<S>* g = parts[0].g;
  Shape os = parts[0].val().shape;
  if (axis < 0 || axis >= static_cast<int>(os.size()))
    fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(os));
  int total = 0;
  for (const auto& p : parts) {
    if (!p.valid() || p.g != g) fail("concat: inputs from different graphs");
    const Shape& s = p.val().shape;
    if (s.size() != os.size()) fail("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != os[i])
        fail("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(os));
    total += s[axis];
  }
  os[axis] = total;
  Tensor<S> out(os);
  int off = 0;
  bool ng = false;
  typename Graph<S>::Node nd;
  for (const auto& p : parts) {
    const int len = p.val().shape[axis];
    copy_axis_block(p.val(), 0, out, off, axis, len);
    off += len;
    nd.extra.push_back(p.id);
    ng = ng || g->node(p.id).needs_grad;
  }
  nd.op = Op::kConcat;
  nd.nin = 0;
  nd.val = std::move(out);
  nd.i0 = axis;
  nd.needs_grad = ng;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> softmax(Var<S> a, int axis) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  std::int64_t outer, n, inner;
  detail::axis_decomp(A.shape, axis, outer, n, inner);
  Tensor<S> out(A.shape);
  std::vector<S> buf(n);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = A[base];
      for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, A[base + k * inner]);
      for (std::int64_t k = 0; k < n; ++k) {
        const S e = std::exp(A[base + k * inner] - mx);
        out[base + k * inner] = e;
        buf[k] = e;
      }
      const S inv = S(1) / detail::ordered_sum(buf.data(), n);
      for (std::int64_t k = 0; k < n; ++k) out[base + k * inner] *= inv;
    }
  }
  typename Graph<S>::Node nd;
  nd.op = Op::kSoftmax;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.i0 = axis;
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

// Keeps the reduced axis as size 1.
template <typename S>
Var<S> logsumexp(Var<S> a, int axis) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  std::int64_t outer, n, inner;
  detail::axis_decomp(A.shape, axis, outer, n, inner);
  Shape os = A.shape;
  os[axis] = 1;
  Tensor<S> out(os);
  std::vector<S> buf(n);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = A[base];
      for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, A[base + k * inner]);
      for (std::int64_t k = 0; k < n; ++k)
        buf[k] = std::exp(A[base + k * inner] - mx);
      out[o * inner + in] = mx + std::log(detail::ordered_sum(buf.data(), n));
    }
  }
  typename Graph<S>::Node nd;
  nd.op = Op::kLogsumexp;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.i0 = axis;
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

// Normalizes jointly over all axes from `first_axis` to the end, no affine
// parameters; eps sits inside the sqrt.
template <typename S>
Var<S> layer_norm(Var<S> a, int first_axis, S eps = S(1e-5)) {
  Graph<S>* g = detail::same_graph<S>({a});
  const Tensor<S>& A = a.val();
  if (first_axis < 0 || first_axis >= A.rank())
    fail("layer_norm: axis " + std::to_string(first_axis) + " out of range for " +
         shape_str(A.shape));
  std::int64_t rows = 1, len = 1;
  for (int i = 0; i < first_axis; ++i) rows *= A.shape[i];
  for (int i = first_axis; i < A.rank(); ++i) len *= A.shape[i];
  Tensor<S> out(A.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xp = A.ptr() + r * len;
    S* yp = out.ptr() + r * len;
    S mean = S(0);
    for (std::int64_t i = 0; i < len; ++i) mean += xp[i];
    mean /= static_cast<S>(len);
    S var = S(0);
    for (std::int64_t i = 0; i < len; ++i) {
      const S d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<S>(len);
    const S inv = S(1) / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < len; ++i) yp[i] = (xp[i] - mean) * inv;
  }
  typename Graph<S>::Node nd;
  nd.op = Op::kLayerNorm;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = std::move(out);
  nd.i0 = first_axis;
  nd.s0 = eps;
  nd.needs_grad = g->node(a.id).needs_grad;
  return g->push(std::move(nd));
}

// Coordinate grid shared by the broadcast decoder and the refinement inputs:
// channel 0 varies along width, channel 1 along height, both in [-1, 1].
template <typename S>
Tensor<S> coord_grid(int H, int W) {
  Tensor<S> t({2, H, W});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      t.at({0, h, w}) = W == 1 ? S(0) : S(-1) + S(2) * w / static_cast<S>(W - 1);
      t.at({1, h, w}) = H == 1 ? S(0) : S(-1) + S(2) * h / static_cast<S>(H - 1);
    }
  return t;
}

// z: [M] -> [M+2, H, W], or [K, M] -> [K, M+2, H, W]; the two appended
// channels are the coordinate grid.
template <typename S>
Var<S> spatial_broadcast(Var<S> z, int H, int W) {
  Graph<S>* g = detail::same_graph<S>({z});
  const Tensor<S>& Z = z.val();
  if (Z.rank() != 1 && Z.rank() != 2)
    fail("spatial_broadcast: latent must be [M] or [K,M], got " + shape_str(Z.shape));
  const int K = Z.rank() == 2 ? Z.shape[0] : 1;
  const int M = Z.shape[Z.rank() - 1];
  Shape os = Z.rank() == 2 ? Shape{K, M + 2, H, W} : Shape{M + 2, H, W};
  Tensor<S> out(os);
  const Tensor<S> grid = coord_grid<S>(H, W);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int k = 0; k < K; ++k) {
    S* base = out.ptr() + static_cast<std::int64_t>(k) * (M + 2) * plane;
    for (int m = 0; m < M; ++m) {
      const S v = Z[k * M + m];
      S* p = base + m * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] = v;
    }
    std::copy(grid.ptr(), grid.ptr() + 2 * plane, base + static_cast<std::int64_t>(M) * plane);
  }
  typename Graph<S>::Node nd;
  nd.op = Op::kSpatialBroadcast;
  nd.nin = 1;
  nd.in = {z.id, -1, -1};
  nd.val = std::move(out);
  nd.i0 = H;
  nd.i1 = W;
  nd.needs_grad = g->node(z.id).needs_grad;
  return g->push(std::move(nd));
}

template <typename S>
Var<S> stop_gradient(Var<S> a) {
  Graph<S>* g = detail::same_graph<S>({a});
  typename Graph<S>::Node nd;
  nd.op = Op::kStopGrad;
  nd.nin = 1;
  nd.in = {a.id, -1, -1};
  nd.val = a.val();
  nd.needs_grad = false;  // blocks both accumulation and propagation
  return g->push(std::move(nd));
}

// ============================== composites ==============================

// log N(x; mean, sigma) with fixed scalar sigma, elementwise with broadcast.
template <typename S>
Var<S> gaussian_logpdf(Var<S> x, Var<S> mean, S sigma) {
  const S c = S(-0.5) * std::log(S(2) * S(M_PI) * sigma * sigma);
  Var<S> d = sub(x, mean);
  return adds(muls(mul(d, d), S(-0.5) / (sigma * sigma)), c);
}

// Single LSTM step. Gate layout along the 4H axis: input, forget, cell, output.
template <typename S>
struct LstmState {
  Var<S> h, c;
};

template <typename S>
LstmState<S> lstm_cell(Var<S> x, Var<S> h, Var<S> c, Var<S> wx, Var<S> wh, Var<S> b) {
  const int hidden = h.shape()[1];
  Var<S> gates = add(add(matmul(x, wx), matmul(h, wh)), b);
  Var<S> ig = sigmoid(slice(gates, 1, 0, hidden));
  Var<S> fg = sigmoid(slice(gates, 1, hidden, hidden));
  Var<S> gg = tanh(slice(gates, 1, 2 * hidden, hidden));
  Var<S> og = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Var<S> c2 = add(mul(fg, c), mul(ig, gg));
  Var<S> h2 = mul(og, tanh(c2));
  return {h2, c2};
}

// ========================== backward dispatch ==========================

template <typename S>
void Graph<S>::backprop_node(int i) {
  Node& nd = nodes_[i];
  const Tensor<S>& g = nd.grad;
  auto want = [&](int j) { return j >= 0 && rf_[j] != 0; };
  auto in_val = [&](int k) -> const Tensor<S>& { return nodes_[nd.in[k]].val; };

  switch (nd.op) {
    case Op::kLeaf:
    case Op::kStopGrad:
      break;

    case Op::kAdd: {
      if (want(nd.in[0])) add_sum_to(ensure_grad(nd.in[0]), g);
      if (want(nd.in[1])) add_sum_to(ensure_grad(nd.in[1]), g);
      break;
    }
    case Op::kSub: {
      if (want(nd.in[0])) add_sum_to(ensure_grad(nd.in[0]), g);
      if (want(nd.in[1])) {
        Tensor<S> t(g.shape);
        for (std::int64_t k = 0; k < g.numel(); ++k) t[k] = -g[k];
        add_sum_to(ensure_grad(nd.in[1]), t);
      }
      break;
    }
    case Op::kMul: {
      if (want(nd.in[0])) {
        Tensor<S> t(g.shape);
        for_each_bcast(g, in_val(1), t, [](S x, S y) { return x * y; });
        add_sum_to(ensure_grad(nd.in[0]), t);
      }
      if (want(nd.in[1])) {
        Tensor<S> t(g.shape);
        for_each_bcast(g, in_val(0), t, [](S x, S y) { return x * y; });
        add_sum_to(ensure_grad(nd.in[1]), t);
      }
      break;
    }
    case Op::kDiv: {
      if (want(nd.in[0])) {
        Tensor<S> t(g.shape);
        for_each_bcast(g, in_val(1), t, [](S x, S y) { return x / y; });
        add_sum_to(ensure_grad(nd.in[0]), t);
      }
      if (want(nd.in[1])) {
        Tensor<S> t(g.shape);
        for_each_bcast(g, in_val(0), t, [](S x, S y) { return x * y; });
        Tensor<S> t2(g.shape);
        for_each_bcast(t, in_val(1), t2, [](S x, S y) { return -x / (y * y); });
        add_sum_to(ensure_grad(nd.in[1]), t2);
      }
      break;
    }

    case Op::kAddS: {
      if (want(nd.in[0])) {
        Tensor<S>& gi = ensure_grad(nd.in[0]);
        for (std::int64_t k = 0; k < g.numel(); ++k) gi[k] += g[k];
      }
      break;
    }
    case Op::kMulS: {
      if (want(nd.in[0])) {
        Tensor<S>& gi = ensure_grad(nd.in[0]);
        for (std::int64_t k = 0; k < g.numel(); ++k) gi[k] += g[k] * nd.s0;
      }
      break;
    }
    case Op::kNeg:
    case Op::kExp:
    case Op::kLog:
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kElu:
    case Op::kSoftplus:
    case Op::kSqrt: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      const Tensor<S>& x = in_val(0);
      const Tensor<S>& y = nd.val;
      const std::int64_t n = g.numel();
      switch (nd.op) {
        case Op::kNeg: for (std::int64_t k = 0; k < n; ++k) gi[k] -= g[k]; break;
        case Op::kExp: for (std::int64_t k = 0; k < n; ++k) gi[k] += g[k] * y[k]; break;
        case Op::kLog: for (std::int64_t k = 0; k < n; ++k) gi[k] += g[k] / x[k]; break;
        case Op::kTanh:
          for (std::int64_t k = 0; k < n; ++k) gi[k] += g[k] * (S(1) - y[k] * y[k]);
          break;
        case Op::kSigmoid:
          for (std::int64_t k = 0; k < n; ++k) gi[k] += g[k] * y[k] * (S(1) - y[k]);
          break;
        case Op::kElu:
          for (std::int64_t k = 0; k < n; ++k)
            gi[k] += y[k] > S(0) ? g[k] : g[k] * (y[k] + S(1));
          break;
        case Op::kSoftplus:
          for (std::int64_t k = 0; k < n; ++k)
            gi[k] += g[k] * detail::stable_sigmoid(x[k]);
          break;
        case Op::kSqrt:
          for (std::int64_t k = 0; k < n; ++k) gi[k] += g[k] * S(0.5) / y[k];
          break;
        default: break;
      }
      break;
    }

    case Op::kMatmul: {
      const Tensor<S>& A = in_val(0);
      const Tensor<S>& B = in_val(1);
      const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
      Eigen::Map<const MatRM<S>> gm(g.ptr(), m, n);
      if (want(nd.in[0])) {
        Eigen::Map<const MatRM<S>> bm(B.ptr(), k, n);
        Eigen::Map<MatRM<S>> gam(ensure_grad(nd.in[0]).ptr(), m, k);
        gam.noalias() += gm * bm.transpose();
      }
      if (want(nd.in[1])) {
        Eigen::Map<const MatRM<S>> am(A.ptr(), m, k);
        Eigen::Map<MatRM<S>> gbm(ensure_grad(nd.in[1]).ptr(), k, n);
        gbm.noalias() += am.transpose() * gm;
      }
      break;
    }

    case Op::kConv2d: {
      const Tensor<S>& x = in_val(0);
      const Tensor<S>& w = in_val(1);
      const detail::ConvGeom geo =
          detail::conv_geom(x.shape, w.shape, nd.i0, nd.i1 ? Pad::kSame : Pad::kValid);
      Tensor<S>* gx = want(nd.in[0]) ? &ensure_grad(nd.in[0]) : nullptr;
      Tensor<S>* gw = want(nd.in[1]) ? &ensure_grad(nd.in[1]) : nullptr;
      if (gx || gw) detail::conv2d_backward(x, w, g, geo, gx, gw);
      break;
    }

    case Op::kReduceSum: {
      if (!want(nd.in[0])) break;
      const Tensor<S>& x = in_val(0);
      Shape keep = x.shape;
      for (int ax : nd.extra) keep[ax] = 1;
      Tensor<S> gk(keep, g.data);
      bcast_expand(ensure_grad(nd.in[0]), gk, /*accumulate=*/true);
      break;
    }
    case Op::kBroadcastTo: {
      if (want(nd.in[0])) add_sum_to(ensure_grad(nd.in[0]), g);
      break;
    }
    case Op::kReshape: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      for (std::int64_t k = 0; k < g.numel(); ++k) gi[k] += g[k];
      break;
    }
    case Op::kSlice: {
      if (!want(nd.in[0])) break;
      copy_axis_block(g, 0, ensure_grad(nd.in[0]), nd.i1, nd.i0, nd.i2,
                      /*accumulate=*/true);
      break;
    }
    case Op::kConcat: {
      int off = 0;
      for (int pid : nd.extra) {
        const int len = nodes_[pid].val.shape[nd.i0];
        if (want(pid))
          copy_axis_block(g, off, ensure_grad(pid), 0, nd.i0, len, /*accumulate=*/true);
        off += len;
      }
      break;
    }

    case Op::kSoftmax: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      const Tensor<S>& y = nd.val;
      std::int64_t outer, n, inner;
      detail::axis_decomp(y.shape, nd.i0, outer, n, inner);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          S dot = S(0);
          for (std::int64_t k = 0; k < n; ++k)
            dot += g[base + k * inner] * y[base + k * inner];
          for (std::int64_t k = 0; k < n; ++k) {
            const std::int64_t idx = base + k * inner;
            gi[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
      break;
    }
    case Op::kLogsumexp: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      const Tensor<S>& x = in_val(0);
      const Tensor<S>& y = nd.val;  // keepdims
      std::int64_t outer, n, inner;
      detail::axis_decomp(x.shape, nd.i0, outer, n, inner);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          const S lse = y[o * inner + in];
          const S gv = g[o * inner + in];
          for (std::int64_t k = 0; k < n; ++k) {
            const std::int64_t idx = base + k * inner;
            gi[idx] += gv * std::exp(x[idx] - lse);
          }
        }
      }
      break;
    }
    case Op::kLayerNorm: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      const Tensor<S>& x = in_val(0);
      const Tensor<S>& y = nd.val;
      std::int64_t rows = 1, len = 1;
      for (int k = 0; k < nd.i0; ++k) rows *= x.shape[k];
      for (int k = nd.i0; k < x.rank(); ++k) len *= x.shape[k];
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* xp = x.ptr() + r * len;
        const S* yp = y.ptr() + r * len;
        const S* gp = g.ptr() + r * len;
        S* gip = gi.ptr() + r * len;
        S mean = S(0);
        for (std::int64_t k = 0; k < len; ++k) mean += xp[k];
        mean /= static_cast<S>(len);
        S var = S(0);
        for (std::int64_t k = 0; k < len; ++k) {
          const S d = xp[k] - mean;
          var += d * d;
        }
        var /= static_cast<S>(len);
        const S inv = S(1) / std::sqrt(var + nd.s0);
        S mg = S(0), mgy = S(0);
        for (std::int64_t k = 0; k < len; ++k) {
          mg += gp[k];
          mgy += gp[k] * yp[k];
        }
        mg /= static_cast<S>(len);
        mgy /= static_cast<S>(len);
        for (std::int64_t k = 0; k < len; ++k)
          gip[k] += inv * (gp[k] - mg - yp[k] * mgy);
      }
      break;
    }
    case Op::kSpatialBroadcast: {
      if (!want(nd.in[0])) break;
      Tensor<S>& gi = ensure_grad(nd.in[0]);
      const Tensor<S>& z = in_val(0);
      const int K = z.rank() == 2 ? z.shape[0] : 1;
      const int M = z.shape[z.rank() - 1];
      const std::int64_t plane = static_cast<std::int64_t>(nd.i0) * nd.i1;
      for (int k = 0; k < K; ++k) {
        const S* base = g.ptr() + static_cast<std::int64_t>(k) * (M + 2) * plane;
        for (int m = 0; m < M; ++m) {
          const S* p = base + m * plane;
          S acc = S(0);
          for (std::int64_t q = 0; q < plane; ++q) acc += p[q];
          gi[k * M + m] += acc;
        }
      }
      break;
    }
  }
}

}  // namespace slotvae
