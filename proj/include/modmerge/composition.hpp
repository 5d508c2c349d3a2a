// SPDX-License-Identifier: Apache-2.0
//
// Parameter-space composition. Each attribute contributes one task vector,
// the routing-weighted mix of its modules' parameter deltas; the composed
// model is theta0 + sum_i lambda_i tau_i.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modmerge/inventory.hpp"
#include "modmerge/parameter_store.hpp"
#include "modmerge/routing.hpp"

namespace modmerge {

/// Base-store names of a layer's weight and bias ("fc1" -> "fc1.weight").
std::string weight_name(const std::string& layer);
std::string bias_name(const std::string& layer);

struct TaskVector {
    ParameterStore deltas;
    std::string attribute;
    AttributeWeights weights;
};

/// Per linear layer: sum_m w_m B_m A_m. Per convolution with scale-&-shift:
/// (tau_gamma, tau_beta) of the same weights, stored under the layer's
/// weight and bias names. DataError when the attribute's modules disagree on
/// their adapted layers.
TaskVector attribute_task_vector(const ModuleInventory& inventory, const ParameterStore& theta0,
                                 const std::string& attribute, const RoutingWeights& weights);

enum class Strategy { Mean, Weighted, Sum };

const char* to_string(Strategy s);
/// ConfigError for anything other than "mean", "weighted", "sum".
Strategy parse_strategy(const std::string& s);

struct CompositionPlan {
    Strategy strategy = Strategy::Mean;
    Scalar rho = 1.0;
    std::vector<Scalar> lambdas;  // per attribute, schema order
    RoutingWeights routing;

    /// lambda_i = 1/N for mean and weighted, 1 for sum.
    static CompositionPlan make(const AttributeSchema& schema, Strategy strategy, RoutingWeights routing,
                                Scalar rho = 1.0);

    /// NumericError if the lambdas break the strategy's contract.
    void validate() const;
};

/// The task vector of every attribute under plan.routing, in schema order.
std::vector<TaskVector> plan_task_vectors(const ModuleInventory& inventory, const ParameterStore& theta0,
                                          const CompositionPlan& plan);

/// sum_i lambda_i tau_i, restricted to names that receive a delta.
ParameterStore composed_displacement(std::span<const TaskVector> taus, const CompositionPlan& plan);

/// theta0 + sum_i lambda_i tau_i. Names without a delta pass through bitwise.
ParameterStore compose(const ParameterStore& theta0, std::span<const TaskVector> taus, const CompositionPlan& plan);

/// Convenience: task vectors plus compose.
ParameterStore compose_from_inventory(const ModuleInventory& inventory, const ParameterStore& theta0,
                                      const CompositionPlan& plan);

struct WeightedModule {
    std::reference_wrapper<const ModuleAdapters> module;
    Scalar weight;
};

/// Layer inputs keyed by target name: [C x H x W] for convolutions, [k] for
/// linear layers.
using LayerInputs = std::map<std::string, Tensor>;

/// Largest absolute gap, over every adapted layer with an input in `inputs`,
/// between the merged-parameter layer output and the weighted average of the
/// individual adapters' outputs.
Scalar merged_forward_check(const ParameterStore& theta0, std::span<const WeightedModule> modules,
                            const LayerInputs& inputs, std::size_t conv_stride = 1, std::size_t conv_padding = 0);

}  // namespace modmerge
