// SPDX-License-Identifier: Apache-2.0
//
// Frozen-base training of attribute modules, plus the bootstrap phase that
// produces the base itself.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "modmerge/inventory.hpp"
#include "modmerge/toy_net.hpp"

namespace modmerge {

struct TrainingConfig {
    Scalar lora_lr = 3e-4;
    Scalar lora_weight_decay = 0.1;
    Scalar ssf_lr = 1e-5;
    Scalar ssf_weight_decay = 1e-4;
    std::size_t accumulation = 4;
    Scalar max_grad_norm = 0.0;  // clip the accumulated gradient's global norm; 0 disables
    std::size_t iterations = 0;  // backward passes per module
    std::size_t rank = 16;
    std::size_t min_lora_width = 0;
    std::uint64_t seed = 0;

    /// ConfigError on a zero accumulation count, negative rates or non-finite values.
    void validate() const;
};

/// One training item. `inputs` is either a frame [C x H x W], cut into
/// patches by the dataset's grid, or an already patched batch [n x C x S x S].
struct Sample {
    Tensor inputs;
    Tensor targets;  // [n x outputs]
    Tensor weights;  // [n x outputs]
    std::map<std::string, std::string> tags;
    std::size_t sequence = 0;
};

struct Dataset {
    std::optional<PatchGrid> grid;
    std::vector<Sample> samples;

    Batch batch(std::size_t index) const;
    /// Indices of samples tagged attribute=value.
    std::vector<std::size_t> matching(const std::string& attribute, const std::string& value) const;
};

/// p <- p (1 - lr wd) - lr g
void sgd_step(Tensor& param, const Tensor& grad, Scalar lr, Scalar weight_decay);
/// Applies one step to every adapter present in `grads`, after global-norm
/// clipping when configured; `module` must have at least those targets.
void apply_adapter_step(ModuleAdapters& module, const AdapterGradients& grads, const TrainingConfig& config);

struct ModuleTrainingResult {
    std::size_t backward_passes = 0;
    std::size_t optimizer_steps = 0;
    std::vector<Scalar> losses;  // one per backward pass
};

/// Trains inventory[(attribute, value)] on samples tagged with that value.
/// Everything else in the inventory and the network base stays untouched.
/// DataError when no sample matches.
ModuleTrainingResult train_module(const ToyNetwork& net, ModuleInventory& inventory, const ModuleKey& key,
                                  const Dataset& dataset, const TrainingConfig& config,
                                  Execution exec = Execution::Parallel);

struct TrainingReport {
    std::map<ModuleKey, std::size_t> backward_counts;
    std::map<ModuleKey, std::vector<Scalar>> losses;
    std::size_t audited_steps = 0;
    std::size_t isolation_violations = 0;

    /// max - min over backward_counts.
    std::size_t histogram_spread() const;
};

/// Balanced schedule: every module receives `config.iterations` backward
/// passes, in an order shuffled by the seed. Each pass draws a sample
/// matching the module's value. When `audit` is set, the base and every
/// non-target module are checksummed around each pass. When `log` is set,
/// one JSON object per pass is written to it.
TrainingReport train_all_modules(const ToyNetwork& net, ModuleInventory& inventory, const Dataset& dataset,
                                 const TrainingConfig& config, bool audit = true, std::ostream* log = nullptr,
                                 Execution exec = Execution::Parallel);

/// Fresh modules for every schema key, seeded per key.
ModuleInventory fresh_inventory(const ToyNetwork& net, const AttributeSchema& schema, const TrainingConfig& config);

struct BootstrapConfig {
    Scalar lr = 0.05;
    std::size_t iterations = 200;
    Scalar fraction = 0.5;  // share of sequences used
    std::uint64_t seed = 0;
};

struct BootstrapResult {
    ParameterStore base;
    std::vector<std::size_t> sequences;  // the sequences that were used, sorted
    std::vector<Scalar> losses;
};

/// Trains every base parameter with plain SGD on a seeded random subset of
/// the dataset's sequences.
BootstrapResult bootstrap_base(const ToyNetSpec& spec, ParameterStore init, const Dataset& dataset,
                               const BootstrapConfig& config, Execution exec = Execution::Parallel);

}  // namespace modmerge
