#pragma once
// Dense row-major tensors on contiguous storage, templated on scalar type.
// Shapes are small (rank <= 6). Binary ops broadcast with numpy's
// align-right rule; the helpers at the bottom implement the three loops
// everything else is built from: elementwise-with-broadcast, reduce-into,
// and expand-from.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace slotvae {

using Shape = std::vector<int>;
inline constexpr int kMaxRank = 6;

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

// numpy align-right broadcast; throws on incompatible dims.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = ra > rb ? ra : rb;
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[i - (r - ra)];
    const int db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      fail("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  }
  Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      fail("tensor init: " + std::to_string(data.size()) + " values for shape " +
           shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
  static Tensor full(Shape sh, S v) {
    Tensor t(std::move(sh));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(S v) { return Tensor({}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }
  S& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

  S& at(std::initializer_list<int> idx) {
    std::int64_t off = 0;
    int d = 0;
    for (int i : idx) off = off * shape[d] + i, ++d;
    return data[static_cast<size_t>(off)];
  }
  const S& at(std::initializer_list<int> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
  }

  template <typename T>
  Tensor<T> to() const {
    Tensor<T> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<T>(data[i]);
    return t;
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// ============================ broadcast loops ============================

struct BcastPlan {
  int rank = 0;
  std::int64_t n = 0;
  std::array<int, kMaxRank> dims{};
  std::array<std::int64_t, kMaxRank> sa{}, sb{};  // 0 on broadcast dims
};

inline BcastPlan make_bcast_plan(const Shape& a, const Shape& b, const Shape& out) {
  BcastPlan p;
  p.rank = static_cast<int>(out.size());
  if (p.rank > kMaxRank) fail("rank > " + std::to_string(kMaxRank));
  p.n = shape_numel(out);
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  // strides computed right-to-left; 0 where the operand's dim is 1 but out's isn't
  std::int64_t sa = 1, sb = 1;
  for (int i = p.rank - 1; i >= 0; --i) {
    p.dims[i] = out[i];
    const int da = i < p.rank - ra ? 1 : a[i - (p.rank - ra)];
    const int db = i < p.rank - rb ? 1 : b[i - (p.rank - rb)];
    p.sa[i] = (da == 1 && out[i] != 1) ? 0 : sa;
    p.sb[i] = (db == 1 && out[i] != 1) ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

// out[i] = f(a[bcast i], b[bcast i]); out must be preallocated to the broadcast shape.
template <typename S, typename F>
void for_each_bcast(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out, F&& f) {
  const std::int64_t n = out.numel();
  if (shapes_equal(a.shape, b.shape)) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
    return;
  }
  if (b.numel() == 1) {
    const S bv = b[0];
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], bv);
    return;
  }
  if (a.numel() == 1) {
    const S av = a[0];
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(av, b[i]);
    return;
  }
  BcastPlan p = make_bcast_plan(a.shape, b.shape, out.shape);
  std::array<int, kMaxRank> idx{};
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t o = 0; o < p.n; ++o) {
    out[o] = f(a[oa], b[ob]);
    for (int d = p.rank - 1; d >= 0; --d) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.dims[d]) break;
      idx[d] = 0;
      oa -= p.sa[d] * p.dims[d];
      ob -= p.sb[d] * p.dims[d];
    }
  }
}

// dst += sum of src over the dims where dst's shape is 1 (or absent).
// dst.shape must broadcast to src.shape.
template <typename S>
void add_sum_to(Tensor<S>& dst, const Tensor<S>& src) {
  if (shapes_equal(dst.shape, src.shape)) {
    for (std::int64_t i = 0; i < src.numel(); ++i) dst[i] += src[i];
    return;
  }
  if (dst.numel() == 1) {
    S acc = 0;
    for (std::int64_t i = 0; i < src.numel(); ++i) acc += src[i];
    dst[0] += acc;
    return;
  }
  BcastPlan p;
  const int r = static_cast<int>(src.shape.size());
  const int rd = static_cast<int>(dst.shape.size());
  if (r > kMaxRank) fail("rank > " + std::to_string(kMaxRank));
  std::int64_t stride = 1;
  for (int i = r - 1; i >= 0; --i) {
    const int dd = i < r - rd ? 1 : dst.shape[i - (r - rd)];
    if (dd != src.shape[i] && dd != 1)
      fail("sum_to mismatch: " + shape_str(dst.shape) + " from " + shape_str(src.shape));
    p.dims[i] = src.shape[i];
    p.sa[i] = (dd == 1 && src.shape[i] != 1) ? 0 : stride;
    stride *= dd;
  }
  p.rank = r;
  p.n = shape_numel(src.shape);
  std::array<int, kMaxRank> idx{};
  std::int64_t od = 0;
  for (std::int64_t o = 0; o < p.n; ++o) {
    dst[od] += src[o];
    for (int d = p.rank - 1; d >= 0; --d) {
      ++idx[d];
      od += p.sa[d];
      if (idx[d] < p.dims[d]) break;
      idx[d] = 0;
      od -= p.sa[d] * p.dims[d];
    }
  }
}

// dst[i] (+)= src[bcast i]: expand a small tensor over a full shape.
template <typename S>
void bcast_expand(Tensor<S>& dst, const Tensor<S>& src, bool accumulate) {
  if (shapes_equal(dst.shape, src.shape)) {
    if (accumulate)
      for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
    else
      for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] = src[i];
    return;
  }
  BcastPlan p = make_bcast_plan(src.shape, src.shape, dst.shape);
  std::array<int, kMaxRank> idx{};
  std::int64_t os = 0;
  for (std::int64_t o = 0; o < p.n; ++o) {
    if (accumulate)
      dst[o] += src[os];
    else
      dst[o] = src[os];
    for (int d = p.rank - 1; d >= 0; --d) {
      ++idx[d];
      os += p.sa[d];
      if (idx[d] < p.dims[d]) break;
      idx[d] = 0;
      os -= p.sa[d] * p.dims[d];
    }
  }
}

// Copy a [pre, len_src, post] block along `axis` between tensors that agree on
// every other dim. Shared by slice/concat forward and backward.
template <typename S>
void copy_axis_block(const Tensor<S>& src, int src_start, Tensor<S>& dst, int dst_start,
                     int axis, int len, bool accumulate = false) {
  std::int64_t pre = 1, post = 1;
  for (int i = 0; i < axis; ++i) pre *= src.shape[i];
  for (int i = axis + 1; i < src.rank(); ++i) post *= src.shape[i];
  const std::int64_t src_ax = src.shape[axis], dst_ax = dst.shape[axis];
  for (std::int64_t p = 0; p < pre; ++p) {
    const S* sp = src.ptr() + (p * src_ax + src_start) * post;
    S* dp = dst.ptr() + (p * dst_ax + dst_start) * post;
    const std::int64_t cnt = len * post;
    if (accumulate)
      for (std::int64_t i = 0; i < cnt; ++i) dp[i] += sp[i];
    else
      for (std::int64_t i = 0; i < cnt; ++i) dp[i] = sp[i];
  }
}

}  // namespace slotvae
