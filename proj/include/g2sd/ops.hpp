#pragma once

// Differentiable ops over BasicTensor<T>. All ops record a tape node when
// grad mode is on and any input requires grad. Every forward output is
// checked for NaN/Inf and a NumericError is thrown naming the op.
//
// Broadcasting aligns trailing dimensions; an extent of 1 stretches.
// Reductions accumulate sequentially in index order (in double for float
// inputs), so repeated runs are bit-identical.

#include <cstdint>
#include <span>
#include <vector>

#include "g2sd/tensor.hpp"

namespace g2sd {

// Elementwise with broadcasting.
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);
template <class T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape);

// Exact (erf) GELU.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

// 0.5 x^2 / delta when |x| < delta, else |x| - 0.5 delta.
template <class T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& x, T delta = T(1));

// Layout.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& perm);
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x, int d0, int d1);
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);
template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::int64_t begin, std::int64_t end);

// x: [B, N, D]; index: B*K row indices into N, sample-major. Returns [B, K, D].
template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::int64_t> index, std::int64_t k);

// a: [..., m, k], b: [..., k, n]; batch dimensions broadcast.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// x: [..., in], weight: [in, out], bias: [out] or undefined.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

// Normalizes over the last axis. gamma/beta may be undefined (affine-free).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-6));

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x);

// q: [..., n, d], k: [..., m, d], v: [..., m, dv] with equal batch dims.
template <class T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v);

// Fused multi-head self attention over a packed projection.
// qkv: [B, N, 3D] laid out as [q | k | v], heads split each D slice
// contiguously. Returns the concatenated head outputs [B, N, D].
template <class T>
BasicTensor<T> multi_head_self_attention(const BasicTensor<T>& qkv, int heads);

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> sum_axis(const BasicTensor<T>& x, int axis);
template <class T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, int axis);

// Mean over the batch of the label-smoothed cross entropy. The smoothed
// target puts (1 - s) + s/c on the label and s/c elsewhere.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> labels,
                                     T smoothing = T(0));

// Mean over the batch of -sum_j target_j log softmax(logits)_j. The target
// rows are constants.
template <class T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target);

}  // namespace g2sd
