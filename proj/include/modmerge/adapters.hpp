// SPDX-License-Identifier: Apache-2.0
//
// Parameter-efficient adapters attached to named base layers.
//
//  * LoraAdapter adds a rank-r delta B*A to a d x k linear weight.
//  * ScaleShiftAdapter applies gamma (.) F + beta per output channel of a
//    convolution. Because the transform is affine per channel it can be folded
//    into the convolution itself, which is what absorb_scale_shift does.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "modmerge/tensor.hpp"

namespace modmerge {

class LoraAdapter {
public:
    LoraAdapter() = default;
    /// a: [r x k], b: [d x r]. Throws std::invalid_argument when r > min(d, k).
    LoraAdapter(std::string target, Tensor a, Tensor b);

    const std::string& target() const noexcept { return target_; }
    const Tensor& a() const noexcept { return a_; }
    const Tensor& b() const noexcept { return b_; }
    Tensor& a() noexcept { return a_; }
    Tensor& b() noexcept { return b_; }

    std::size_t rank() const { return a_.dim(0); }
    std::size_t out_features() const { return b_.dim(0); }
    std::size_t in_features() const { return a_.dim(1); }

    friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;

private:
    std::string target_;
    Tensor a_;
    Tensor b_;
};

/// B = 0 and A ~ U(-1/sqrt(k), 1/sqrt(k)), so the fresh delta is exactly zero.
LoraAdapter lora_init(std::string target, std::size_t d, std::size_t k, std::size_t r, std::uint64_t seed);

/// W0 x + B (A x), evaluated through the rank-r bottleneck.
Tensor lora_forward(const LoraAdapter& adapter, const Tensor& w0, const Tensor& x);

/// The materialized d x k delta B A.
Tensor lora_delta(const LoraAdapter& adapter);

class ScaleShiftAdapter {
public:
    ScaleShiftAdapter() = default;
    ScaleShiftAdapter(std::string target, Tensor gamma, Tensor beta);

    /// gamma = 1, beta = 0.
    static ScaleShiftAdapter identity(std::string target, std::size_t channels);

    const std::string& target() const noexcept { return target_; }
    const Tensor& gamma() const noexcept { return gamma_; }
    const Tensor& beta() const noexcept { return beta_; }
    Tensor& gamma() noexcept { return gamma_; }
    Tensor& beta() noexcept { return beta_; }
    std::size_t channels() const { return gamma_.dim(0); }

    friend bool operator==(const ScaleShiftAdapter&, const ScaleShiftAdapter&) = default;

private:
    std::string target_;
    Tensor gamma_;
    Tensor beta_;
};

/// gamma (.) F + beta, broadcast over the spatial axes of F[C x H x W].
Tensor ssf_forward(const ScaleShiftAdapter& adapter, const Tensor& f);

struct ScaleShiftTerm {
    std::reference_wrapper<const ScaleShiftAdapter> adapter;
    Scalar weight;
};

struct ConvParams {
    Tensor weight;  // [C_out x C_in x kH x kW]
    Tensor bias;    // [C_out]
};

/// Folds a convex combination of scale-&-shift adapters into the convolution:
///   W* = (sum_m w_m gamma_m) (.) W0,  b* = sum_m w_m (gamma_m (.) b0 + beta_m).
/// The weights must sum to one within 1e-12.
ConvParams absorb_scale_shift(std::span<const ScaleShiftTerm> terms, const Tensor& w0, const Tensor& b0);

struct ScaleShiftTaskVector {
    Tensor tau_gamma;  // W* - W0
    Tensor tau_beta;   // b* - b0
};

/// absorb_scale_shift minus the base. Each element is chosen so that adding it
/// back onto the base reproduces W* / b* exactly.
ScaleShiftTaskVector ssf_task_vector(std::span<const ScaleShiftTerm> terms, const Tensor& w0, const Tensor& b0);

/// Elementwise target - base, nudged by at most a few ulps where needed so
/// that base + result == target holds bitwise.
Tensor roundtrip_difference(const Tensor& target, const Tensor& base);

}  // namespace modmerge
