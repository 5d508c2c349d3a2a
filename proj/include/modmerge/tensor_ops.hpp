// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "modmerge/tensor.hpp"

namespace modmerge {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);

/// Elementwise product. Besides equal shapes, a rank-1 tensor of length C is
/// broadcast over the leading (channel) axis of a rank-3 or rank-4 tensor
/// whose first extent is C, in either argument position.
Tensor hadamard(const Tensor& a, const Tensor& b);

/// a[d x r] * b[r x k]
Tensor matmul(const Tensor& a, const Tensor& b);

/// a[d x k] * x[k]
Tensor matvec(const Tensor& a, const Tensor& x);

/// input[C_in x H x W], weight[C_out x C_in x kH x kW], bias[C_out].
/// Cross-correlation (no kernel flip); output extent (H + 2p - kH) / s + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

}  // namespace modmerge
