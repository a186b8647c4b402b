#pragma once

#include <vector>

#include "a2rnet/tensor.hpp"

namespace a2r {

// Differentiable kernels. Every function computes its result eagerly and,
// when a tape is active and an operand participates in differentiation,
// records a node whose backward accumulates adjoints into its parents.
// Binary kernels require identical shapes; the only broadcasting is the
// explicit broadcast_to below and the Scalar overloads.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, Scalar b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
// sign(0) = 0; blocks gradient flow (derivative treated as zero everywhere).
Tensor sign(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope);
Tensor sigmoid(const Tensor& a);
Tensor pow(const Tensor& a, Scalar exponent);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, Scalar b) { return add(a, b); }
inline Tensor operator+(Scalar a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, Scalar b) { return add(a, -b); }
inline Tensor operator-(Scalar a, const Tensor& b) { return add(neg(b), a); }
inline Tensor operator*(const Tensor& a, Scalar b) { return scale(a, b); }
inline Tensor operator*(Scalar a, const Tensor& b) { return scale(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Shape manipulation. reshape keeps row-major element order; transpose is
// rank-2 only; broadcast_to expands extent-1 axes of a same-rank shape.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor broadcast_to(const Tensor& a, const Shape& target);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor crop(const Tensor& a, const std::vector<int>& offsets,
            const std::vector<int>& extents);

// Reductions. axes must be non-empty and valid; var divides by the count
// (population variance).
Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes, bool keepdims = false);
Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes, bool keepdims = false);
Tensor reduce_var(const Tensor& a, const std::vector<int>& axes, bool keepdims = false);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor var(const Tensor& a);

// Shift-by-max stabilized softmax along one axis.
Tensor softmax(const Tensor& a, int axis);

// Rank-2 matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation with zero padding over n x c x h x w input and
// c_out x c_in x kh x kw kernel. No kernel flip.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad);

// Sub-pixel rearrangement: n x (c*r^2) x h x w -> n x c x (h*r) x (w*r) and
// its exact inverse.
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

}  // namespace a2r
