// SPDX-License-Identifier: Apache-2.0

#include "modmerge/tensor_ops.hpp"

#include "modmerge/kernels.hpp"

namespace modmerge {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

template <typename F>
Tensor elementwise(const char* op, const Tensor& a, const Tensor& b, F f)
{
    require_same_shape(op, a, b);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    out.require_finite(op);
    return out;
}

bool channel_broadcastable(const Tensor& full, const Tensor& vec)
{
    return vec.rank() == 1 && (full.rank() == 3 || full.rank() == 4) && full.dim(0) == vec.dim(0);
}

Tensor channel_product(const Tensor& full, const Tensor& vec)
{
    Tensor out(full.shape());
    const std::size_t per_channel = full.size() / full.dim(0);
    for (std::size_t c = 0; c < full.dim(0); ++c)
        for (std::size_t i = 0; i < per_channel; ++i)
            out[c * per_channel + i] = vec[c] * full[c * per_channel + i];
    out.require_finite("hadamard");
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b)
{
    return elementwise("add", a, b, [](Scalar x, Scalar y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return elementwise("sub", a, b, [](Scalar x, Scalar y) { return x - y; });
}

Tensor scale(const Tensor& a, Scalar c)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    out.require_finite("scale");
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b)
{
    if (a.shape() == b.shape()) return elementwise("hadamard", a, b, [](Scalar x, Scalar y) { return x * y; });
    if (channel_broadcastable(a, b)) return channel_product(a, b);
    if (channel_broadcastable(b, a)) return channel_product(b, a);
    throw ShapeError("hadamard: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    Tensor out({a.dim(0), b.dim(1)});
    kernels::parallel::matmul(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
    out.require_finite("matmul");
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& x)
{
    if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
        throw ShapeError("matvec: dimension mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(x.shape()));
    Tensor out({a.dim(0)});
    kernels::parallel::matvec(a.data(), x.data(), out.data(), a.dim(0), a.dim(1));
    out.require_finite("matvec");
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding)
{
    if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1)
        throw ShapeError("conv2d: expected input[C,H,W], weight[O,C,kH,kW], bias[O]; got " +
                         shape_to_string(input.shape()) + ", " + shape_to_string(weight.shape()) + ", " +
                         shape_to_string(bias.shape()));
    if (weight.dim(1) != input.dim(0) || bias.dim(0) != weight.dim(0))
        throw ShapeError("conv2d: channel mismatch input " + shape_to_string(input.shape()) + " weight " +
                         shape_to_string(weight.shape()) + " bias " + shape_to_string(bias.shape()));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");

    kernels::ConvGeometry g;
    g.in_channels = input.dim(0);
    g.in_h = input.dim(1);
    g.in_w = input.dim(2);
    g.out_channels = weight.dim(0);
    g.kernel_h = weight.dim(2);
    g.kernel_w = weight.dim(3);
    g.stride = stride;
    g.padding = padding;
    if (g.out_h() <= 0 || g.out_w() <= 0)
        throw ShapeError("conv2d: non-positive output extent for input " + shape_to_string(input.shape()) +
                         " and kernel " + shape_to_string(weight.shape()));

    Tensor out({g.out_channels, static_cast<std::size_t>(g.out_h()), static_cast<std::size_t>(g.out_w())});
    kernels::parallel::conv2d(input.data(), weight.data(), bias.data(), out.data(), g);
    out.require_finite("conv2d");
    return out;
}

}  // namespace modmerge
