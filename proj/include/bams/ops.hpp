#pragma once

#include "bams/tensor.hpp"

namespace bams::ops {

// Pointwise. Binary ops require equal shapes and report both on mismatch.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);             // c * a
Tensor affine(const Tensor& a, double c, double d);  // c * a + d
Tensor smul(const Tensor& s, const Tensor& a);       // tracked scalar s times a
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);

// Reductions / shape.
Tensor sum(const Tensor& a);  // -> [1]
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts);          // 1-D pieces -> 1-D
Tensor slice(const Tensor& a, int64_t offset, int64_t len);  // 1-D contiguous range
Tensor pick(const Tensor& a, int64_t index);                 // 1-D -> [1]

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [p x q] . [q x r]

// softmax(logits / divisor) with max-subtraction; divisor > 0.
Tensor softmax(const Tensor& logits, double divisor);

// Cross-correlation (no kernel flip), zero padding.
// input [C_in x H x W], kernels [C_out x C_in x k x k].
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

// Adjoint of conv2d with the same geometry.
// input [C_in x H x W], kernels [C_in x C_out x k x k],
// output H' = (H-1)*stride - 2*padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

// x [C x H x W] plus per-channel bias b [C].
Tensor bias_add_channel(const Tensor& x, const Tensor& b);

}  // namespace bams::ops
