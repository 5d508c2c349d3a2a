// SPDX-License-Identifier: Apache-2.0

#include "modmerge/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "modmerge/kernels.hpp"
#include "modmerge/rng.hpp"
#include "modmerge/tensor_ops.hpp"

namespace modmerge {

LoraAdapter::LoraAdapter(std::string target, Tensor a, Tensor b)
    : target_(std::move(target)), a_(std::move(a)), b_(std::move(b))
{
    if (a_.rank() != 2 || b_.rank() != 2 || b_.dim(1) != a_.dim(0))
        throw ShapeError("LoRA factors must be A[r x k], B[d x r]; got A " + shape_to_string(a_.shape()) + ", B " +
                         shape_to_string(b_.shape()));
    if (rank() > std::min(out_features(), in_features()))
        throw std::invalid_argument("LoRA rank " + std::to_string(rank()) + " exceeds min(d, k) = " +
                                    std::to_string(std::min(out_features(), in_features())));
}

LoraAdapter lora_init(std::string target, std::size_t d, std::size_t k, std::size_t r, std::uint64_t seed)
{
    if (r == 0 || r > std::min(d, k))
        throw std::invalid_argument("invalid LoRA rank " + std::to_string(r) + " for a " + std::to_string(d) + "x" +
                                    std::to_string(k) + " weight");
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    Tensor a({r, k});
    for (auto& v : a.data()) v = rng.uniform(-bound, bound);
    return LoraAdapter(std::move(target), std::move(a), Tensor({d, r}));
}

Tensor lora_forward(const LoraAdapter& adapter, const Tensor& w0, const Tensor& x)
{
    if (w0.rank() != 2 || w0.dim(0) != adapter.out_features() || w0.dim(1) != adapter.in_features())
        throw ShapeError("lora_forward: base weight " + shape_to_string(w0.shape()) + " does not match adapter " +
                         std::to_string(adapter.out_features()) + "x" + std::to_string(adapter.in_features()));
    if (x.rank() != 1 || x.dim(0) != adapter.in_features())
        throw ShapeError("lora_forward: input " + shape_to_string(x.shape()) + " vs in_features " +
                         std::to_string(adapter.in_features()));
    Tensor h = matvec(w0, x);
    const Tensor ax = matvec(adapter.a(), x);
    const Tensor bax = matvec(adapter.b(), ax);
    return add(h, bax);
}

Tensor lora_delta(const LoraAdapter& adapter)
{
    return matmul(adapter.b(), adapter.a());
}

ScaleShiftAdapter::ScaleShiftAdapter(std::string target, Tensor gamma, Tensor beta)
    : target_(std::move(target)), gamma_(std::move(gamma)), beta_(std::move(beta))
{
    if (gamma_.rank() != 1 || gamma_.shape() != beta_.shape())
        throw ShapeError("scale-&-shift needs matching vectors, got gamma " + shape_to_string(gamma_.shape()) +
                         ", beta " + shape_to_string(beta_.shape()));
}

ScaleShiftAdapter ScaleShiftAdapter::identity(std::string target, std::size_t channels)
{
    return ScaleShiftAdapter(std::move(target), Tensor::filled({channels}, 1.0), Tensor({channels}));
}

Tensor ssf_forward(const ScaleShiftAdapter& adapter, const Tensor& f)
{
    if (f.rank() != 3 || f.dim(0) != adapter.channels())
        throw ShapeError("ssf_forward: feature map " + shape_to_string(f.shape()) + " vs " +
                         std::to_string(adapter.channels()) + " channels");
    Tensor out(f.shape());
    const std::size_t plane = f.dim(1) * f.dim(2);
    for (std::size_t c = 0; c < f.dim(0); ++c) {
        const Scalar g = adapter.gamma()[c];
        const Scalar b = adapter.beta()[c];
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = g * f[c * plane + i] + b;
    }
    out.require_finite("ssf_forward");
    return out;
}

namespace {

void validate_terms(std::span<const ScaleShiftTerm> terms, const Tensor& w0, const Tensor& b0)
{
    if (terms.empty()) throw std::invalid_argument("absorb_scale_shift: no adapters given");
    if (w0.rank() != 4 || b0.rank() != 1 || b0.dim(0) != w0.dim(0))
        throw ShapeError("absorb_scale_shift: expected W0[C_out x C_in x kH x kW] and b0[C_out], got " +
                         shape_to_string(w0.shape()) + " and " + shape_to_string(b0.shape()));
    Scalar sum = 0.0;
    for (const auto& t : terms) {
        if (t.adapter.get().channels() != w0.dim(0))
            throw ShapeError("absorb_scale_shift: adapter '" + t.adapter.get().target() + "' has " +
                             std::to_string(t.adapter.get().channels()) + " channels, convolution has " +
                             std::to_string(w0.dim(0)));
        sum += t.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw NumericError("absorb_scale_shift: weights sum to " + std::to_string(sum) + ", expected 1");
}

}  // namespace

ConvParams absorb_scale_shift(std::span<const ScaleShiftTerm> terms, const Tensor& w0, const Tensor& b0)
{
    validate_terms(terms, w0, b0);
    const std::size_t channels = w0.dim(0);

    Tensor gamma_mix({channels});
    Tensor bias({channels});
    for (const auto& t : terms) {
        const auto& ad = t.adapter.get();
        for (std::size_t c = 0; c < channels; ++c) {
            gamma_mix[c] += t.weight * ad.gamma()[c];
            bias[c] += t.weight * (ad.gamma()[c] * b0[c] + ad.beta()[c]);
        }
    }
    bias.require_finite("absorb_scale_shift");
    return ConvParams{hadamard(w0, gamma_mix), std::move(bias)};
}

Tensor roundtrip_difference(const Tensor& target, const Tensor& base)
{
    Tensor d = sub(target, base);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (base[i] + d[i] == target[i]) continue;
        // Walk outward from the rounded difference; a representable delta
        // landing on the target exists within a couple of ulps.
        const Scalar start = d[i];
        Scalar up = start;
        Scalar down = start;
        for (int step = 0; step < 8; ++step) {
            up = std::nextafter(up, HUGE_VAL);
            if (base[i] + up == target[i]) {
                d[i] = up;
                break;
            }
            down = std::nextafter(down, -HUGE_VAL);
            if (base[i] + down == target[i]) {
                d[i] = down;
                break;
            }
        }
    }
    return d;
}

ScaleShiftTaskVector ssf_task_vector(std::span<const ScaleShiftTerm> terms, const Tensor& w0, const Tensor& b0)
{
    ConvParams absorbed = absorb_scale_shift(terms, w0, b0);
    return ScaleShiftTaskVector{roundtrip_difference(absorbed.weight, w0), roundtrip_difference(absorbed.bias, b0)};
}

}  // namespace modmerge
