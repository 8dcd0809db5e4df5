#include "g2sd/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "g2sd/errors.hpp"

namespace g2sd {

namespace {

template <class T>
using Impl = detail::TensorImpl<T>;

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;
template <class T>
using SMapM = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CSMapM = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;

// Float sums accumulate in double; double sums in double.
using Acc = double;

template <class T>
void check_finite(const char* op, const std::vector<T>& data) {
  for (const T v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

// Wraps forward results into a tensor and records the backward rule when
// any input participates in gradient computation.
template <class T, class Fn>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, Fn&& backward) {
  check_finite(op, data);
  auto impl = std::make_shared<Impl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  }
  if (needs) {
    auto node = std::make_shared<detail::Node<T>>();
    node->op = op;
    for (const auto* in : inputs) {
      if (in->defined()) node->inputs.push_back(in->impl());
    }
    node->backward = std::forward<Fn>(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return BasicTensor<T>(std::move(impl));
}

template <class T>
bool wants_grad(const BasicTensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <class T>
bool wants_grad(const std::shared_ptr<Impl<T>>& t) {
  return t && t->requires_grad;
}

int norm_axis(int axis, std::int64_t ndim) {
  const int n = static_cast<int>(ndim);
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw IndexError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(n));
  return axis;
}

// ---- broadcasting ---------------------------------------------------------

enum class BKind { Same, BScalar, AScalar, BSuffix, ASuffix, General };

struct Broadcast {
  Shape out;
  BKind kind = BKind::General;
  std::int64_t na = 0, nb = 0, nout = 0;
  std::vector<std::int64_t> sa, sb;  // per output dim strides (0 = broadcast)
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  const std::size_t n = std::max(a.size(), b.size());
  p.out.assign(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = da == 1 ? db : da;
  }
  p.na = shape_numel(a);
  p.nb = shape_numel(b);
  p.nout = shape_numel(p.out);
  if (a == b) {
    p.kind = BKind::Same;
  } else if (p.nb == 1 && p.na == p.nout) {
    p.kind = BKind::BScalar;
  } else if (p.na == 1 && p.nb == p.nout) {
    p.kind = BKind::AScalar;
  } else if (p.na == p.nout && is_suffix(b, a)) {
    p.kind = BKind::BSuffix;
  } else if (p.nb == p.nout && is_suffix(a, b)) {
    p.kind = BKind::ASuffix;
  } else {
    p.kind = BKind::General;
    auto strides = [&](const Shape& s) {
      std::vector<std::int64_t> st(n, 0);
      std::int64_t acc = 1;
      for (std::size_t i = n; i-- > 0;) {
        const std::size_t off = n - s.size();
        if (i < off) continue;
        const auto d = s[i - off];
        st[i] = d == 1 ? 0 : acc;
        acc *= d;
      }
      return st;
    };
    p.sa = strides(a);
    p.sb = strides(b);
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  switch (p.kind) {
    case BKind::Same:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i, i);
      return;
    case BKind::BScalar:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i, std::int64_t{0});
      return;
    case BKind::AScalar:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, std::int64_t{0}, i);
      return;
    case BKind::BSuffix:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i, i % p.nb);
      return;
    case BKind::ASuffix:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i % p.na, i);
      return;
    case BKind::General: {
      const std::size_t n = p.out.size();
      std::vector<std::int64_t> idx(n, 0);
      std::int64_t ia = 0, ib = 0;
      for (std::int64_t i = 0; i < p.nout; ++i) {
        f(i, ia, ib);
        for (std::size_t d = n; d-- > 0;) {
          ++idx[d];
          ia += p.sa[d];
          ib += p.sb[d];
          if (idx[d] < p.out[d]) break;
          ia -= p.sa[d] * p.out[d];
          ib -= p.sb[d] * p.out[d];
          idx[d] = 0;
        }
      }
      return;
    }
  }
}

template <class T, class Fwd, class GradA, class GradB>
BasicTensor<T> binary_op(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, GradA ga_fn,
                         GradB gb_fn) {
  auto plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<T> out(static_cast<std::size_t>(plan.nout));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = fwd(pa[ia], pb[ib]); });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<T>(op, plan.out, std::move(out), {&a, &b}, [ai, bi, plan, ga_fn, gb_fn](Impl<T>& o) {
    const T* g = o.grad.data();
    const T* pa = ai->data.data();
    const T* pb = bi->data.data();
    if (wants_grad(ai)) {
      T* ga = ai->ensure_grad().data();
      for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { ga[ia] += ga_fn(g[i], pa[ia], pb[ib]); });
    }
    if (wants_grad(bi)) {
      T* gb = bi->ensure_grad().data();
      for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { gb[ib] += gb_fn(g[i], pa[ia], pb[ib]); });
    }
  });
}

template <class T, class Fwd, class Grad>
BasicTensor<T> unary_op(const char* op, const BasicTensor<T>& x, Fwd fwd, Grad grad) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = fwd(v);
  auto xi = x.impl();
  return make_result<T>(op, x.shape(), std::move(out), {&x}, [xi, grad](Impl<T>& o) {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * grad(xi->data[i], o.data[i]);
  });
}

// Row-major strides.
std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return unary_op<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  return unary_op<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape) {
  auto plan = plan_broadcast(x.shape(), shape, "broadcast_to");
  if (plan.out != shape) {
    throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " does not broadcast to " + shape_str(shape));
  }
  std::vector<T> out(static_cast<std::size_t>(plan.nout));
  const T* px = x.data().data();
  for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t) { out[i] = px[ia]; });
  auto xi = x.impl();
  return make_result<T>("broadcast_to", shape, std::move(out), {&x}, [xi, plan](Impl<T>& o) {
    T* gx = xi->ensure_grad().data();
    for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t) { gx[ia] += o.grad[i]; });
  });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  static constexpr T kInvSqrt2 = T(0.70710678118654752440);
  static constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  const auto n = static_cast<Eigen::Index>(x.numel());
  Eigen::Map<const Arr> xv(x.data().data(), n);
  std::vector<T> out(static_cast<std::size_t>(n));
  Eigen::Map<Arr>(out.data(), n) = T(0.5) * xv * (T(1) + (xv * kInvSqrt2).erf());
  auto xi = x.impl();
  return make_result<T>("gelu", x.shape(), std::move(out), {&x}, [xi, n](Impl<T>& o) {
    auto& gx = xi->ensure_grad();
    Eigen::Map<const Arr> v(xi->data.data(), n);
    const Arr cdf = T(0.5) * (T(1) + (v * kInvSqrt2).erf());
    const Arr pdf = kInvSqrt2Pi * (T(-0.5) * v.square()).exp();
    Eigen::Map<Arr>(gx.data(), n) += Eigen::Map<const Arr>(o.grad.data(), n) * (cdf + v * pdf);
  });
}

template <class T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& x, T delta) {
  if (!(delta > T(0))) throw ConfigError("smooth_l1: delta must be positive");
  return unary_op<T>(
      "smooth_l1", x,
      [delta](T v) {
        const T a = std::abs(v);
        return a < delta ? T(0.5) * v * v / delta : a - T(0.5) * delta;
      },
      [delta](T v, T) {
        if (std::abs(v) < delta) return v / delta;
        return v > T(0) ? T(1) : T(-1);
      });
}

// ---- layout -------------------------------------------------------------------

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  std::int64_t infer = -1;
  std::int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1");
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw ShapeError("reshape: cannot infer extent for " + shape_str(x.shape()));
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [xi](Impl<T>& o) {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& perm) {
  const auto& in = x.shape();
  const std::size_t n = in.size();
  if (perm.size() != n) throw ShapeError("permute: permutation rank mismatch for " + shape_str(in));
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (check[i] != static_cast<int>(i)) throw ShapeError("permute: not a permutation");
  }
  Shape out_shape(n);
  for (std::size_t i = 0; i < n; ++i) out_shape[i] = in[static_cast<std::size_t>(perm[i])];
  const auto in_strides = strides_of(in);
  // src offset step for each output dim
  std::vector<std::int64_t> step(n);
  for (std::size_t i = 0; i < n; ++i) step[i] = in_strides[static_cast<std::size_t>(perm[i])];
  const std::int64_t total = x.numel();
  std::vector<std::int64_t> src_index(static_cast<std::size_t>(total));
  {
    std::vector<std::int64_t> idx(n, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < total; ++i) {
      src_index[static_cast<std::size_t>(i)] = off;
      for (std::size_t d = n; d-- > 0;) {
        ++idx[d];
        off += step[d];
        if (idx[d] < out_shape[d]) break;
        off -= step[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<T> out(static_cast<std::size_t>(total));
  const T* px = x.data().data();
  for (std::int64_t i = 0; i < total; ++i) out[i] = px[src_index[i]];
  auto xi = x.impl();
  return make_result<T>("permute", std::move(out_shape), std::move(out), {&x},
                        [xi, src = std::move(src_index)](Impl<T>& o) {
                          T* gx = xi->ensure_grad().data();
                          for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
                        });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x, int d0, int d1) {
  const auto n = x.ndim();
  d0 = norm_axis(d0, n);
  d1 = norm_axis(d1, n);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(d0)], perm[static_cast<std::size_t>(d1)]);
  return permute(x, perm);
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().shape();
  axis = norm_axis(axis, static_cast<std::int64_t>(first.size()));
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != first[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    out_shape[ax] += s[ax];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  const std::int64_t out_row = out_shape[ax] * inner;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t col = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[ax] * inner;
    const T* src = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * w, src + (o + 1) * w, out.begin() + o * out_row + col);
    }
    offsets.push_back(col);
    col += w;
  }
  std::vector<std::shared_ptr<Impl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  // make_result takes a fixed list; build the node manually for n-ary inputs.
  check_finite("concat", out);
  auto impl = std::make_shared<Impl<T>>();
  impl->shape = out_shape;
  impl->data = std::move(out);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parts) needs = needs || p.requires_grad();
  }
  if (needs) {
    auto node = std::make_shared<detail::Node<T>>();
    node->op = "concat";
    node->inputs = impls;
    node->backward = [impls, offsets, outer, inner, out_row, ax](Impl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!impls[k]->requires_grad) continue;
        const std::int64_t w = impls[k]->shape[ax] * inner;
        T* g = impls[k]->ensure_grad().data();
        for (std::int64_t r = 0; r < outer; ++r) {
          const T* src = o.grad.data() + r * out_row + offsets[k];
          for (std::int64_t j = 0; j < w; ++j) g[r * w + j] += src[j];
        }
      }
    };
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return BasicTensor<T>(std::move(impl));
}

template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::int64_t begin, std::int64_t end) {
  const auto& s = x.shape();
  axis = norm_axis(axis, x.ndim());
  const auto ax = static_cast<std::size_t>(axis);
  if (begin < 0 || end > s[ax] || begin > end) {
    throw IndexError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for axis extent " +
                     std::to_string(s[ax]));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::int64_t in_row = s[ax] * inner;
  const std::int64_t w = (end - begin) * inner;
  std::vector<T> out(static_cast<std::size_t>(outer * w));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(px + o * in_row + begin * inner, px + o * in_row + begin * inner + w, out.begin() + o * w);
  }
  auto xi = x.impl();
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&x},
                        [xi, outer, in_row, w, off = begin * inner](Impl<T>& o) {
                          T* g = xi->ensure_grad().data();
                          for (std::int64_t r = 0; r < outer; ++r) {
                            for (std::int64_t j = 0; j < w; ++j) g[r * in_row + off + j] += o.grad[r * w + j];
                          }
                        });
}

template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::int64_t> index, std::int64_t k) {
  if (x.ndim() != 3) throw ShapeError("gather_rows: expected [B,N,D], got " + shape_str(x.shape()));
  const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (static_cast<std::int64_t>(index.size()) != b * k) {
    throw ShapeError("gather_rows: index has " + std::to_string(index.size()) + " entries, expected " +
                     std::to_string(b * k));
  }
  for (const auto i : index) {
    if (i < 0 || i >= n) throw IndexError("gather_rows: row " + std::to_string(i) + " not in [0," + std::to_string(n) + ")");
  }
  std::vector<T> out(static_cast<std::size_t>(b * k * d));
  const T* px = x.data().data();
  for (std::int64_t s = 0; s < b; ++s) {
    for (std::int64_t j = 0; j < k; ++j) {
      const T* src = px + (s * n + index[s * k + j]) * d;
      std::copy(src, src + d, out.begin() + (s * k + j) * d);
    }
  }
  auto xi = x.impl();
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result<T>("gather_rows", Shape{b, k, d}, std::move(out), {&x},
                        [xi, idx = std::move(idx), b, n, k, d](Impl<T>& o) {
                          T* g = xi->ensure_grad().data();
                          for (std::int64_t s = 0; s < b; ++s) {
                            for (std::int64_t j = 0; j < k; ++j) {
                              T* dst = g + (s * n + idx[s * k + j]) * d;
                              const T* src = o.grad.data() + (s * k + j) * d;
                              for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
                            }
                          }
                        });
}

// ---- linear algebra -------------------------------------------------------------

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::int64_t m = sa[sa.size() - 2], k = sa.back();
  const std::int64_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw ShapeError("matmul: inner dimensions differ: " + shape_str(sa) + " x " + shape_str(sb));
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  auto bplan = plan_broadcast(batch_a, batch_b, "matmul");
  Shape out_shape = bplan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // Pairs of (a batch, b batch) for each output batch.
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  const bool fold = batch_b.empty();  // [.., m, k] x [k, n] collapses into one GEMM
  if (!fold) {
    pairs.reserve(static_cast<std::size_t>(bplan.nout));
    for_each_broadcast(bplan, [&](std::int64_t, std::int64_t ia, std::int64_t ib) { pairs.emplace_back(ia, ib); });
  }
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (fold) {
    const std::int64_t rows = shape_numel(batch_a) * m;
    MapM<T>(out.data(), rows, n).noalias() = CMapM<T>(pa, rows, k) * CMapM<T>(pb, k, n);
  } else {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      MapM<T>(out.data() + i * m * n, m, n).noalias() =
          CMapM<T>(pa + pairs[i].first * m * k, m, k) * CMapM<T>(pb + pairs[i].second * k * n, k, n);
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {&a, &b},
                        [ai, bi, pairs, fold, m, k, n, batch_rows = shape_numel(batch_a)](Impl<T>& o) {
                          const T* g = o.grad.data();
                          const T* pa = ai->data.data();
                          const T* pb = bi->data.data();
                          if (fold) {
                            const std::int64_t rows = batch_rows * m;
                            if (ai->requires_grad) {
                              MapM<T>(ai->ensure_grad().data(), rows, k).noalias() +=
                                  CMapM<T>(g, rows, n) * CMapM<T>(pb, k, n).transpose();
                            }
                            if (bi->requires_grad) {
                              MapM<T>(bi->ensure_grad().data(), k, n).noalias() +=
                                  CMapM<T>(pa, rows, k).transpose() * CMapM<T>(g, rows, n);
                            }
                            return;
                          }
                          for (std::size_t i = 0; i < pairs.size(); ++i) {
                            const auto [ia, ib] = pairs[i];
                            CMapM<T> gi(g + i * m * n, m, n);
                            if (ai->requires_grad) {
                              MapM<T>(ai->ensure_grad().data() + ia * m * k, m, k).noalias() +=
                                  gi * CMapM<T>(pb + ib * k * n, k, n).transpose();
                            }
                            if (bi->requires_grad) {
                              MapM<T>(bi->ensure_grad().data() + ib * k * n, k, n).noalias() +=
                                  CMapM<T>(pa + ia * m * k, m, k).transpose() * gi;
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (weight.ndim() != 2) throw ShapeError("linear: weight must be [in,out], got " + shape_str(weight.shape()));
  const std::int64_t in = weight.dim(0), outf = weight.dim(1);
  if (x.ndim() < 1 || x.shape().back() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != outf)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<T> out(static_cast<std::size_t>(rows * outf));
  MapM<T> y(out.data(), rows, outf);
  y.noalias() = CMapM<T>(x.data().data(), rows, in) * CMapM<T>(weight.data().data(), in, outf);
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), outf);
    y.rowwise() += bv;
  }
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result<T>("linear", std::move(out_shape), std::move(out), {&x, &weight, &bias},
                        [xi, wi, bi, rows, in, outf](Impl<T>& o) {
                          CMapM<T> g(o.grad.data(), rows, outf);
                          if (xi->requires_grad) {
                            MapM<T>(xi->ensure_grad().data(), rows, in).noalias() +=
                                g * CMapM<T>(wi->data.data(), in, outf).transpose();
                          }
                          if (wi->requires_grad) {
                            MapM<T>(wi->ensure_grad().data(), in, outf).noalias() +=
                                CMapM<T>(xi->data.data(), rows, in).transpose() * g;
                          }
                          if (bi && bi->requires_grad) {
                            T* gb = bi->ensure_grad().data();
                            for (std::int64_t r = 0; r < rows; ++r) {
                              for (std::int64_t c = 0; c < outf; ++c) gb[c] += o.grad[r * outf + c];
                            }
                          }
                        });
}

// ---- normalization / softmax ------------------------------------------------------

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
  if (x.ndim() < 1 || x.shape().back() < 1) throw ShapeError("layer_norm: empty last axis");
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = x.numel() / d;
  for (const auto* p : {&gamma, &beta}) {
    if (p->defined() && (p->ndim() != 1 || p->dim(0) != d)) {
      throw ShapeError("layer_norm: affine parameter " + shape_str(p->shape()) + " for width " + std::to_string(d));
    }
  }
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  const T* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    Acc s = 0;
    for (std::int64_t c = 0; c < d; ++c) s += row[c];
    const Acc mu = s / static_cast<Acc>(d);
    Acc v = 0;
    for (std::int64_t c = 0; c < d; ++c) v += (row[c] - mu) * (row[c] - mu);
    v /= static_cast<Acc>(d);
    const Acc rs = 1.0 / std::sqrt(v + static_cast<Acc>(eps));
    rstd[r] = static_cast<T>(rs);
    for (std::int64_t c = 0; c < d; ++c) xhat[r * d + c] = static_cast<T>((row[c] - mu) * rs);
  }
  std::vector<T> out = xhat;
  if (gamma.defined() || beta.defined()) {
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < d; ++c) {
        T v = out[r * d + c];
        if (gamma.defined()) v *= gamma.data()[c];
        if (beta.defined()) v += beta.data()[c];
        out[r * d + c] = v;
      }
    }
  }
  auto xi = x.impl();
  auto gi = gamma.defined() ? gamma.impl() : nullptr;
  auto bi = beta.defined() ? beta.impl() : nullptr;
  return make_result<T>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                        [xi, gi, bi, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Impl<T>& o) {
                          const T* g = o.grad.data();
                          if (gi && gi->requires_grad) {
                            T* gg = gi->ensure_grad().data();
                            for (std::int64_t r = 0; r < rows; ++r)
                              for (std::int64_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * xhat[r * d + c];
                          }
                          if (bi && bi->requires_grad) {
                            T* gb = bi->ensure_grad().data();
                            for (std::int64_t r = 0; r < rows; ++r)
                              for (std::int64_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                          }
                          if (!xi->requires_grad) return;
                          T* gx = xi->ensure_grad().data();
                          std::vector<T> gxhat(static_cast<std::size_t>(d));
                          for (std::int64_t r = 0; r < rows; ++r) {
                            Acc m1 = 0, m2 = 0;
                            for (std::int64_t c = 0; c < d; ++c) {
                              T v = g[r * d + c];
                              if (gi) v *= gi->data[c];
                              gxhat[c] = v;
                              m1 += v;
                              m2 += static_cast<Acc>(v) * xhat[r * d + c];
                            }
                            m1 /= static_cast<Acc>(d);
                            m2 /= static_cast<Acc>(d);
                            for (std::int64_t c = 0; c < d; ++c) {
                              gx[r * d + c] += static_cast<T>(rstd[r] * (gxhat[c] - m1 - xhat[r * d + c] * m2));
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = x.numel() / d;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    const T mx = *std::max_element(row, row + d);
    Acc s = 0;
    for (std::int64_t c = 0; c < d; ++c) {
      const T e = std::exp(row[c] - mx);
      out[r * d + c] = e;
      s += e;
    }
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] = static_cast<T>(out[r * d + c] / s);
  }
  auto xi = x.impl();
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [xi, rows, d](Impl<T>& o) {
    T* gx = xi->ensure_grad().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      Acc dot = 0;
      for (std::int64_t c = 0; c < d; ++c) dot += static_cast<Acc>(o.grad[r * d + c]) * o.data[r * d + c];
      for (std::int64_t c = 0; c < d; ++c) {
        gx[r * d + c] += static_cast<T>(o.data[r * d + c] * (o.grad[r * d + c] - dot));
      }
    }
  });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x) {
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = x.numel() / d;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    const T mx = *std::max_element(row, row + d);
    Acc s = 0;
    for (std::int64_t c = 0; c < d; ++c) s += std::exp(static_cast<Acc>(row[c] - mx));
    const Acc lse = mx + std::log(s);
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] = static_cast<T>(row[c] - lse);
  }
  auto xi = x.impl();
  return make_result<T>("log_softmax", x.shape(), std::move(out), {&x}, [xi, rows, d](Impl<T>& o) {
    T* gx = xi->ensure_grad().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      Acc gs = 0;
      for (std::int64_t c = 0; c < d; ++c) gs += o.grad[r * d + c];
      for (std::int64_t c = 0; c < d; ++c) {
        gx[r * d + c] += static_cast<T>(o.grad[r * d + c] - std::exp(static_cast<Acc>(o.data[r * d + c])) * gs);
      }
    }
  });
}

// ---- attention ----------------------------------------------------------------------

namespace {

// Row-wise softmax of a score matrix in place.
template <class T>
void softmax_rows(MatRM<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    Acc total = 0;
    for (Eigen::Index c = 0; c < row.size(); ++c) total += row[c];
    row /= static_cast<T>(total);
  }
}

// dS = P * (dP - rowsum(dP * P))
template <class T>
MatRM<T> softmax_backward(const MatRM<T>& p, const MatRM<T>& dp) {
  MatRM<T> ds(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Acc dot = 0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) dot += static_cast<Acc>(dp(r, c)) * p(r, c);
    for (Eigen::Index c = 0; c < p.cols(); ++c) ds(r, c) = p(r, c) * static_cast<T>(dp(r, c) - dot);
  }
  return ds;
}

}  // namespace

template <class T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) {
  if (q.ndim() < 2 || k.ndim() != q.ndim() || v.ndim() != q.ndim()) {
    throw ShapeError("attention: rank mismatch " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  }
  const auto nd = static_cast<std::size_t>(q.ndim());
  const Shape batch(q.shape().begin(), q.shape().end() - 2);
  if (Shape(k.shape().begin(), k.shape().end() - 2) != batch || Shape(v.shape().begin(), v.shape().end() - 2) != batch) {
    throw ShapeError("attention: batch dimensions differ");
  }
  const std::int64_t n = q.shape()[nd - 2], d = q.shape()[nd - 1];
  const std::int64_t m = k.shape()[nd - 2], dv = v.shape()[nd - 1];
  if (k.shape()[nd - 1] != d || v.shape()[nd - 2] != m) {
    throw ShapeError("attention: incompatible q/k/v " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  }
  const std::int64_t nb = shape_numel(batch);
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  Shape out_shape = batch;
  out_shape.push_back(n);
  out_shape.push_back(dv);
  std::vector<T> out(static_cast<std::size_t>(nb * n * dv));
  std::vector<MatRM<T>> probs(static_cast<std::size_t>(nb));
  for (std::int64_t b = 0; b < nb; ++b) {
    CMapM<T> Q(q.data().data() + b * n * d, n, d), K(k.data().data() + b * m * d, m, d);
    CMapM<T> V(v.data().data() + b * m * dv, m, dv);
    MatRM<T> s = (Q * K.transpose()) * sc;
    softmax_rows(s);
    MapM<T>(out.data() + b * n * dv, n, dv).noalias() = s * V;
    probs[b] = std::move(s);
  }
  auto qi = q.impl(), ki = k.impl(), vi = v.impl();
  return make_result<T>("scaled_dot_product_attention", std::move(out_shape), std::move(out), {&q, &k, &v},
                        [qi, ki, vi, probs = std::move(probs), nb, n, m, d, dv, sc](Impl<T>& o) {
                          for (std::int64_t b = 0; b < nb; ++b) {
                            CMapM<T> Q(qi->data.data() + b * n * d, n, d), K(ki->data.data() + b * m * d, m, d);
                            CMapM<T> V(vi->data.data() + b * m * dv, m, dv);
                            CMapM<T> G(o.grad.data() + b * n * dv, n, dv);
                            const auto& P = probs[b];
                            if (vi->requires_grad) {
                              MapM<T>(vi->ensure_grad().data() + b * m * dv, m, dv).noalias() += P.transpose() * G;
                            }
                            if (!qi->requires_grad && !ki->requires_grad) continue;
                            MatRM<T> dp = G * V.transpose();
                            MatRM<T> ds = softmax_backward(P, dp);
                            ds *= sc;
                            if (qi->requires_grad) {
                              MapM<T>(qi->ensure_grad().data() + b * n * d, n, d).noalias() += ds * K;
                            }
                            if (ki->requires_grad) {
                              MapM<T>(ki->ensure_grad().data() + b * m * d, m, d).noalias() += ds.transpose() * Q;
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> multi_head_self_attention(const BasicTensor<T>& qkv, int heads) {
  if (qkv.ndim() != 3 || qkv.dim(2) % 3 != 0) {
    throw ShapeError("multi_head_self_attention: expected [B,N,3D], got " + shape_str(qkv.shape()));
  }
  const std::int64_t b = qkv.dim(0), n = qkv.dim(1), dim = qkv.dim(2) / 3;
  if (heads < 1 || dim % heads != 0) {
    throw ShapeError("multi_head_self_attention: width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::int64_t dh = dim / heads;
  const std::int64_t row = 3 * dim;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> out(static_cast<std::size_t>(b * n * dim));
  std::vector<MatRM<T>> probs(static_cast<std::size_t>(b * heads));
  const T* base = qkv.data().data();
  for (std::int64_t s = 0; s < b; ++s) {
    for (int h = 0; h < heads; ++h) {
      const T* p0 = base + s * n * row + h * dh;
      CSMapM<T> Q(p0, n, dh, Eigen::OuterStride<>(row));
      CSMapM<T> K(p0 + dim, n, dh, Eigen::OuterStride<>(row));
      CSMapM<T> V(p0 + 2 * dim, n, dh, Eigen::OuterStride<>(row));
      MatRM<T> sm = (Q * K.transpose()) * sc;
      softmax_rows(sm);
      SMapM<T>(out.data() + s * n * dim + h * dh, n, dh, Eigen::OuterStride<>(dim)).noalias() = sm * V;
      probs[s * heads + h] = std::move(sm);
    }
  }
  auto xi = qkv.impl();
  return make_result<T>("multi_head_self_attention", Shape{b, n, dim}, std::move(out), {&qkv},
                        [xi, probs = std::move(probs), b, n, dim, dh, row, heads, sc](Impl<T>& o) {
                          T* gbase = xi->ensure_grad().data();
                          const T* base = xi->data.data();
                          for (std::int64_t s = 0; s < b; ++s) {
                            for (int h = 0; h < heads; ++h) {
                              const std::int64_t off = s * n * row + h * dh;
                              CSMapM<T> Q(base + off, n, dh, Eigen::OuterStride<>(row));
                              CSMapM<T> K(base + off + dim, n, dh, Eigen::OuterStride<>(row));
                              CSMapM<T> V(base + off + 2 * dim, n, dh, Eigen::OuterStride<>(row));
                              CSMapM<T> G(o.grad.data() + s * n * dim + h * dh, n, dh, Eigen::OuterStride<>(dim));
                              const auto& P = probs[s * heads + h];
                              SMapM<T>(gbase + off + 2 * dim, n, dh, Eigen::OuterStride<>(row)).noalias() +=
                                  P.transpose() * G;
                              MatRM<T> dp = G * V.transpose();
                              MatRM<T> ds = softmax_backward(P, dp);
                              ds *= sc;
                              SMapM<T>(gbase + off, n, dh, Eigen::OuterStride<>(row)).noalias() += ds * K;
                              SMapM<T>(gbase + off + dim, n, dh, Eigen::OuterStride<>(row)).noalias() +=
                                  ds.transpose() * Q;
                            }
                          }
                        });
}

// ---- reductions -----------------------------------------------------------------------

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  Acc s = 0;
  for (const T v : x.data()) s += v;
  auto xi = x.impl();
  return make_result<T>("sum", Shape{}, std::vector<T>{static_cast<T>(s)}, {&x}, [xi](Impl<T>& o) {
    auto& gx = xi->ensure_grad();
    for (auto& g : gx) g += o.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  Acc s = 0;
  for (const T v : x.data()) s += v;
  const Acc count = static_cast<Acc>(x.numel());
  auto xi = x.impl();
  return make_result<T>("mean", Shape{}, std::vector<T>{static_cast<T>(s / count)}, {&x}, [xi, count](Impl<T>& o) {
    auto& gx = xi->ensure_grad();
    const T g = static_cast<T>(o.grad[0] / count);
    for (auto& v : gx) v += g;
  });
}

namespace {

template <class T>
BasicTensor<T> reduce_axis(const char* op, const BasicTensor<T>& x, int axis, bool average) {
  axis = norm_axis(axis, x.ndim());
  const auto ax = static_cast<std::size_t>(axis);
  const auto& s = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  const std::int64_t len = s[ax];
  if (average && len == 0) throw ShapeError(std::string(op) + ": empty axis");
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != ax) out_shape.push_back(s[d]);
  }
  std::vector<T> out(static_cast<std::size_t>(outer * inner));
  const T* px = x.data().data();
  const Acc div = average ? static_cast<Acc>(len) : 1.0;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      Acc acc = 0;
      for (std::int64_t j = 0; j < len; ++j) acc += px[(o * len + j) * inner + i];
      out[o * inner + i] = static_cast<T>(acc / div);
    }
  }
  auto xi = x.impl();
  return make_result<T>(op, std::move(out_shape), std::move(out), {&x}, [xi, outer, inner, len, div](Impl<T>& o) {
    T* gx = xi->ensure_grad().data();
    for (std::int64_t a = 0; a < outer; ++a) {
      for (std::int64_t j = 0; j < len; ++j) {
        for (std::int64_t i = 0; i < inner; ++i) gx[(a * len + j) * inner + i] += static_cast<T>(o.grad[a * inner + i] / div);
      }
    }
  });
}

}  // namespace

template <class T>
BasicTensor<T> sum_axis(const BasicTensor<T>& x, int axis) {
  return reduce_axis("sum_axis", x, axis, false);
}

template <class T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, int axis) {
  return reduce_axis("mean_axis", x, axis, true);
}

// ---- losses -----------------------------------------------------------------------------

template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> labels, T smoothing) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be [b,c], got " + shape_str(logits.shape()));
  if (!(smoothing >= T(0) && smoothing < T(1))) throw ConfigError("softmax_cross_entropy: smoothing must be in [0,1)");
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (const auto y : labels) {
    if (y < 0 || y >= c) throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " not in [0," + std::to_string(c) + ")");
  }
  const Acc off = static_cast<Acc>(smoothing) / static_cast<Acc>(c);
  const Acc on = 1.0 - static_cast<Acc>(smoothing) + off;
  std::vector<T> probs(static_cast<std::size_t>(b * c));
  Acc total = 0;
  const T* px = logits.data().data();
  for (std::int64_t r = 0; r < b; ++r) {
    const T* row = px + r * c;
    const T mx = *std::max_element(row, row + c);
    Acc s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(static_cast<Acc>(row[j] - mx));
    const Acc lse = mx + std::log(s);
    Acc loss = 0;
    for (std::int64_t j = 0; j < c; ++j) {
      const Acc lp = row[j] - lse;
      probs[r * c + j] = static_cast<T>(std::exp(lp));
      loss -= (j == labels[r] ? on : off) * lp;
    }
    total += loss;
  }
  auto xi = logits.impl();
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return make_result<T>("softmax_cross_entropy", Shape{}, std::vector<T>{static_cast<T>(total / b)}, {&logits},
                        [xi, probs = std::move(probs), lab = std::move(lab), b, c, on, off](Impl<T>& o) {
                          T* gx = xi->ensure_grad().data();
                          const Acc g = o.grad[0] / static_cast<Acc>(b);
                          for (std::int64_t r = 0; r < b; ++r) {
                            for (std::int64_t j = 0; j < c; ++j) {
                              const Acc q = j == lab[r] ? on : off;
                              gx[r * c + j] += static_cast<T>(g * (probs[r * c + j] - q));
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  if (logits.ndim() != 2 || logits.shape() != target.shape()) {
    throw ShapeError("soft_cross_entropy: logits " + shape_str(logits.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(static_cast<std::size_t>(b * c));
  Acc total = 0;
  const T* px = logits.data().data();
  const T* pt = target.data().data();
  for (std::int64_t r = 0; r < b; ++r) {
    const T* row = px + r * c;
    const T mx = *std::max_element(row, row + c);
    Acc s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(static_cast<Acc>(row[j] - mx));
    const Acc lse = mx + std::log(s);
    for (std::int64_t j = 0; j < c; ++j) {
      const Acc lp = row[j] - lse;
      probs[r * c + j] = static_cast<T>(std::exp(lp));
      total -= pt[r * c + j] * lp;
    }
  }
  auto xi = logits.impl();
  std::vector<T> tgt(target.data().begin(), target.data().end());
  return make_result<T>("soft_cross_entropy", Shape{}, std::vector<T>{static_cast<T>(total / b)}, {&logits},
                        [xi, probs = std::move(probs), tgt = std::move(tgt), b, c](Impl<T>& o) {
                          T* gx = xi->ensure_grad().data();
                          const Acc g = o.grad[0] / static_cast<Acc>(b);
                          for (std::int64_t i = 0; i < b * c; ++i) gx[i] += static_cast<T>(g * (probs[i] - tgt[i]));
                        });
}

// ---- instantiations -------------------------------------------------------------------------

#define G2SD_INSTANTIATE_OPS(T)                                                                                    \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                      \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                        \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                                   \
  template BasicTensor<T> broadcast_to(const BasicTensor<T>&, const Shape&);                                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                            \
  template BasicTensor<T> smooth_l1(const BasicTensor<T>&, T);                                                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                                  \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<int>&);                                \
  template BasicTensor<T> transpose(const BasicTensor<T>&, int, int);                                             \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);                                        \
  template BasicTensor<T> slice(const BasicTensor<T>&, int, std::int64_t, std::int64_t);                          \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::int64_t>, std::int64_t);        \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T);     \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                       const BasicTensor<T>&);                                    \
  template BasicTensor<T> multi_head_self_attention(const BasicTensor<T>&, int);                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                            \
  template BasicTensor<T> sum_axis(const BasicTensor<T>&, int);                                                   \
  template BasicTensor<T> mean_axis(const BasicTensor<T>&, int);                                                  \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const std::int64_t>, T);         \
  template BasicTensor<T> soft_cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);

G2SD_INSTANTIATE_OPS(float)
G2SD_INSTANTIATE_OPS(double)

}  // namespace g2sd
