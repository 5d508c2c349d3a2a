// SPDX-License-Identifier: Apache-2.0
//
// A small differentiable network used as a per-patch detector:
//
//   conv1 -> [scale-&-shift] -> ReLU -> flatten -> fc1 [+LoRA] -> ReLU -> fc2 [+LoRA]
//
// The base parameters are fixed once the network is constructed. Backward
// produces gradients for the active adapters only; base gradients exist
// solely for bootstrap training of the base itself.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "modmerge/inventory.hpp"
#include "modmerge/kernels.hpp"
#include "modmerge/parameter_store.hpp"

namespace modmerge {

struct ToyNetSpec {
    std::size_t in_channels = 3;
    std::size_t input_size = 8;  // square input patch
    std::size_t conv_channels = 8;
    std::size_t kernel = 3;
    std::size_t hidden = 32;
    std::size_t outputs = 4;
    bool relu = true;  // false turns the network into a linear map (gradient checks)

    std::size_t conv_out_size() const { return input_size - kernel + 1; }
    std::size_t conv_features() const { return conv_channels * conv_out_size() * conv_out_size(); }
    kernels::ConvGeometry conv_geometry() const;
    Shape input_shape() const { return {in_channels, input_size, input_size}; }
};

inline constexpr const char* kConvLayer = "conv1";
inline constexpr const char* kHiddenLayer = "fc1";
inline constexpr const char* kOutputLayer = "fc2";

/// Gradients of the active adapters. Layers without an active adapter have
/// no entry at all.
struct AdapterGradients {
    struct Lora {
        Tensor a;
        Tensor b;
    };
    struct ScaleShift {
        Tensor gamma;
        Tensor beta;
    };
    std::map<std::string, Lora> lora;
    std::map<std::string, ScaleShift> scale_shift;

    /// Zero-valued gradients shaped like `module`.
    static AdapterGradients zeros_like(const ModuleAdapters& module);
    void add_scaled(const AdapterGradients& other, Scalar w);
    /// Every gradient scalar in a fixed order (targets sorted, A before B, gamma before beta).
    std::vector<Scalar> flatten() const;
};

struct ForwardCache {
    Tensor input;
    Tensor conv_out;    // F, pre scale-&-shift
    Tensor affine_out;  // F-hat (equals F when no scale-&-shift is active)
    Tensor features;    // ReLU(F-hat), flattened
    Tensor hidden_low;  // A1 * features (LoRA bottleneck), empty without LoRA
    Tensor hidden;      // fc1 pre-activation
    Tensor hidden_act;  // ReLU(hidden)
    Tensor output_low;  // A2 * hidden_act
    Tensor output;

    const void* network = nullptr;
    std::uint64_t fingerprint = 0;  // of the active adapters at forward time
};

class ToyNetwork {
public:
    /// Validates that `base` holds conv1/fc1/fc2 weights and biases shaped per `spec`.
    ToyNetwork(ToyNetSpec spec, ParameterStore base);

    /// He-style uniform initialization of a base, deterministic in `seed`.
    static ParameterStore random_base(const ToyNetSpec& spec, std::uint64_t seed);

    const ToyNetSpec& spec() const noexcept { return spec_; }
    const ParameterStore& base() const noexcept { return base_; }

    /// Fresh module: identity scale-&-shift on conv1, LoRA of rank
    /// min(rank, d, k) on every linear layer whose output width is at least
    /// `min_lora_width`.
    ModuleAdapters fresh_module(std::uint64_t seed, std::size_t rank = 16, std::size_t min_lora_width = 0) const;

    /// `active` may be null. ShapeError on mismatched input or adapters.
    ForwardCache forward(const Tensor& input, const ModuleAdapters* active = nullptr) const;
    Tensor predict(const Tensor& input, const ModuleAdapters* active = nullptr) const;

    /// Gradients for `active` only. DataError if the cache came from another
    /// network or from a different adapter state.
    AdapterGradients backward(const ForwardCache& cache, const Tensor& loss_grad, const ModuleAdapters& active) const;

    /// Gradients of the base parameters (bootstrap training only; no adapters).
    ParameterStore backward_base(const ForwardCache& cache, const Tensor& loss_grad) const;

    /// Stable fingerprint of an adapter state (null -> 0).
    static std::uint64_t fingerprint(const ModuleAdapters* active);

    void validate_module(const ModuleAdapters& module) const;

private:
    friend class BatchEvaluator;

    void forward_into(const Tensor& input, const ModuleAdapters* active, ForwardCache& cache) const;
    // Shared by both backward paths; either output pointer may be null.
    void backward_core(const ForwardCache& cache, const Tensor& loss_grad, const ModuleAdapters* active,
                       AdapterGradients* adapter_grads, ParameterStore* base_grads) const;

    ToyNetSpec spec_;
    ParameterStore base_;
};

enum class Execution { Serial, Parallel };

/// A batch of inputs with weighted squared-error targets:
///   loss = (1/n) sum_i sum_j w_ij (out_ij - t_ij)^2
struct Batch {
    Tensor inputs;   // [n x C x S x S]
    Tensor targets;  // [n x outputs]
    Tensor weights;  // [n x outputs]

    std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

struct BatchResult {
    Scalar loss = 0.0;
    AdapterGradients adapter_grads;          // filled by adapter_step
    std::optional<ParameterStore> base_grads;  // filled by base_step
};

/// Batched loss and gradient evaluation. Work is split into a fixed number of
/// chunks; each chunk accumulates serially and chunks are reduced in order,
/// so the OpenMP path is bitwise identical to the serial one for any thread
/// count.
class BatchEvaluator {
public:
    static constexpr std::size_t kChunks = 16;

    explicit BatchEvaluator(const ToyNetwork& net, Execution exec = Execution::Parallel) : net_(net), exec_(exec) {}

    /// Loss and gradients of `active` averaged over the batch.
    BatchResult adapter_step(const Batch& batch, const ModuleAdapters& active) const;
    /// Loss and base-parameter gradients (no adapters).
    BatchResult base_step(const Batch& batch) const;
    /// Loss only.
    Scalar loss(const Batch& batch, const ModuleAdapters* active = nullptr) const;
    /// Outputs [n x outputs].
    Tensor predict(const Tensor& inputs, const ModuleAdapters* active = nullptr) const;

private:
    const ToyNetwork& net_;
    Execution exec_;
};

/// Central-difference check of every adapter scalar in `active` against
/// backward, using the smooth probe loss sum_j log cosh(out_j - target_j).
/// Returns the worst |g_fd - g| / max(|g_fd|, |g|, 1e-4).
Scalar finite_diff_check(const ToyNetwork& net, const Tensor& input, const ModuleAdapters& active,
                         const Tensor& target, Scalar h);

/// `cases` seeded random networks (shapes, adapters with non-zero B, inputs,
/// targets), each checked with finite_diff_check. Returns the per-case errors.
std::vector<Scalar> random_gradcheck(std::size_t cases, std::uint64_t seed, Scalar h);

/// Extraction of overlapping square patches on a regular grid of cells.
struct PatchGrid {
    std::size_t rows = 12;
    std::size_t cols = 12;
    std::size_t cell = 4;
    std::size_t margin = 2;

    std::size_t patch() const { return cell + 2 * margin; }
    std::size_t count() const { return rows * cols; }
};

/// [C x H x W] frame -> [rows*cols x C x P x P]; zero outside the frame.
Tensor extract_patches(const Tensor& frame, const PatchGrid& grid);

}  // namespace modmerge
