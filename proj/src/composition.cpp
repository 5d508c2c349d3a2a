// SPDX-License-Identifier: Apache-2.0

#include "modmerge/composition.hpp"

#include <algorithm>
#include <cmath>

#include "modmerge/tensor_ops.hpp"

namespace modmerge {

std::string weight_name(const std::string& layer) { return layer + ".weight"; }
std::string bias_name(const std::string& layer) { return layer + ".bias"; }

namespace {

// acc += w * t, elementwise.
void axpy(Tensor& acc, Scalar w, const Tensor& t)
{
    if (acc.shape() != t.shape())
        throw ShapeError("shape mismatch " + shape_to_string(acc.shape()) + " vs " + shape_to_string(t.shape()));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * t[i];
}

void accumulate(ParameterStore& store, const std::string& name, Scalar w, const Tensor& t)
{
    if (!store.contains(name)) store.insert(name, Tensor(t.shape()));
    axpy(store.at(name), w, t);
}

}  // namespace

TaskVector attribute_task_vector(const ModuleInventory& inventory, const ParameterStore& theta0,
                                 const std::string& attribute, const RoutingWeights& weights)
{
    const AttributeWeights& aw = weights.at(attribute);
    if (std::abs(aw.sum() - 1.0) > 1e-12)
        throw NumericError("routing weights of '" + attribute + "' sum to " + std::to_string(aw.sum()));

    const ModuleAdapters* reference = nullptr;
    for (const auto& [value, _] : aw.weights) {
        const auto& m = inventory.at({attribute, value});
        if (reference && !reference->same_layout(m))
            throw DataError("modules of attribute '" + attribute + "' adapt different layers");
        reference = &m;
    }

    TaskVector tau{ParameterStore{}, attribute, aw};
    if (!reference) return tau;

    for (const auto& [target, _] : reference->lora) {
        const std::string wname = weight_name(target);
        for (const auto& [value, w] : aw.weights) {
            if (w == 0.0) continue;
            accumulate(tau.deltas, wname, w, lora_delta(inventory.at({attribute, value}).lora.at(target)));
        }
        if (!tau.deltas.contains(wname)) tau.deltas.insert(wname, Tensor(theta0.at(wname).shape()));
        if (tau.deltas.at(wname).shape() != theta0.at(wname).shape())
            throw ShapeError("LoRA delta for '" + target + "' is " + shape_to_string(tau.deltas.at(wname).shape()) +
                             ", base weight is " + shape_to_string(theta0.at(wname).shape()));
    }

    for (const auto& [target, _] : reference->scale_shift) {
        std::vector<ScaleShiftTerm> terms;
        for (const auto& [value, w] : aw.weights) {
            if (w == 0.0) continue;
            terms.push_back({std::cref(inventory.at({attribute, value}).scale_shift.at(target)), w});
        }
        auto tv = ssf_task_vector(terms, theta0.at(weight_name(target)), theta0.at(bias_name(target)));
        tau.deltas.insert(weight_name(target), std::move(tv.tau_gamma));
        tau.deltas.insert(bias_name(target), std::move(tv.tau_beta));
    }
    return tau;
}

const char* to_string(Strategy s)
{
    switch (s) {
    case Strategy::Mean: return "mean";
    case Strategy::Weighted: return "weighted";
    case Strategy::Sum: return "sum";
    }
    return "unknown";
}

Strategy parse_strategy(const std::string& s)
{
    if (s == "mean") return Strategy::Mean;
    if (s == "weighted") return Strategy::Weighted;
    if (s == "sum") return Strategy::Sum;
    throw ConfigError("unknown strategy '" + s + "' (expected mean, weighted or sum)");
}

CompositionPlan CompositionPlan::make(const AttributeSchema& schema, Strategy strategy, RoutingWeights routing,
                                      Scalar rho)
{
    CompositionPlan plan;
    plan.strategy = strategy;
    plan.rho = rho;
    plan.routing = std::move(routing);
    const Scalar lambda = strategy == Strategy::Sum ? 1.0 : 1.0 / static_cast<Scalar>(schema.size());
    plan.lambdas.assign(schema.size(), lambda);
    plan.validate();
    return plan;
}

void CompositionPlan::validate() const
{
    if (lambdas.size() != routing.attributes.size())
        throw NumericError("plan has " + std::to_string(lambdas.size()) + " lambdas for " +
                           std::to_string(routing.attributes.size()) + " attributes");
    if (strategy == Strategy::Sum) {
        for (Scalar l : lambdas)
            if (l != 1.0) throw NumericError("sum strategy requires every lambda to be 1");
        return;
    }
    Scalar total = 0.0;
    const Scalar uniform = 1.0 / static_cast<Scalar>(lambdas.size());
    for (Scalar l : lambdas) {
        total += l;
        if (std::abs(l - uniform) > 1e-12) throw NumericError("mean/weighted strategies use lambda_i = 1/N");
    }
    if (std::abs(total - 1.0) > 1e-12) throw NumericError("lambdas sum to " + std::to_string(total) + ", expected 1");
}

std::vector<TaskVector> plan_task_vectors(const ModuleInventory& inventory, const ParameterStore& theta0,
                                          const CompositionPlan& plan)
{
    std::vector<TaskVector> taus;
    for (const auto& aw : plan.routing.attributes)
        taus.push_back(attribute_task_vector(inventory, theta0, aw.attribute, plan.routing));
    return taus;
}

ParameterStore composed_displacement(std::span<const TaskVector> taus, const CompositionPlan& plan)
{
    plan.validate();
    if (taus.size() != plan.lambdas.size())
        throw NumericError("plan expects " + std::to_string(plan.lambdas.size()) + " task vectors, got " +
                           std::to_string(taus.size()));
    ParameterStore disp;
    for (std::size_t i = 0; i < taus.size(); ++i)
        for (const auto& [name, delta] : taus[i].deltas) accumulate(disp, name, plan.lambdas[i], delta);
    for (const auto& [name, t] : disp) t.require_finite("composed_displacement");
    return disp;
}

ParameterStore compose(const ParameterStore& theta0, std::span<const TaskVector> taus, const CompositionPlan& plan)
{
    const ParameterStore disp = composed_displacement(taus, plan);
    for (const auto& [name, d] : disp) {
        if (!theta0.contains(name)) throw ShapeError("task vector names '" + name + "', absent from the base");
        if (theta0.at(name).shape() != d.shape())
            throw ShapeError("task vector '" + name + "' is " + shape_to_string(d.shape()) + ", base is " +
                             shape_to_string(theta0.at(name).shape()));
    }

    ParameterStore out;
    for (const auto& [name, base] : theta0) {
        if (!disp.contains(name)) {
            out.insert(name, base);
            continue;
        }
        const Tensor& d = disp.at(name);
        Tensor t = base;
        for (std::size_t i = 0; i < t.size(); ++i)
            if (d[i] != 0.0) t[i] = base[i] + d[i];
        t.require_finite("compose");
        out.insert(name, std::move(t));
    }
    return out;
}

ParameterStore compose_from_inventory(const ModuleInventory& inventory, const ParameterStore& theta0,
                                      const CompositionPlan& plan)
{
    const auto taus = plan_task_vectors(inventory, theta0, plan);
    return compose(theta0, taus, plan);
}

Scalar merged_forward_check(const ParameterStore& theta0, std::span<const WeightedModule> modules,
                            const LayerInputs& inputs, std::size_t conv_stride, std::size_t conv_padding)
{
    if (modules.empty()) return 0.0;
    const ModuleAdapters& first = modules.front().module.get();
    Scalar worst = 0.0;

    for (const auto& [target, _] : first.scale_shift) {
        auto it = inputs.find(target);
        if (it == inputs.end()) continue;
        const Tensor& w0 = theta0.at(weight_name(target));
        const Tensor& b0 = theta0.at(bias_name(target));

        std::vector<ScaleShiftTerm> terms;
        for (const auto& m : modules) terms.push_back({std::cref(m.module.get().scale_shift.at(target)), m.weight});
        const ConvParams merged = absorb_scale_shift(terms, w0, b0);
        const Tensor composed = conv2d(it->second, merged.weight, merged.bias, conv_stride, conv_padding);

        const Tensor base_out = conv2d(it->second, w0, b0, conv_stride, conv_padding);
        Tensor averaged(composed.shape());
        for (const auto& t : terms) axpy(averaged, t.weight, ssf_forward(t.adapter.get(), base_out));
        worst = std::max(worst, max_abs_diff(composed, averaged));
    }

    for (const auto& [target, _] : first.lora) {
        auto it = inputs.find(target);
        if (it == inputs.end()) continue;
        const Tensor& w0 = theta0.at(weight_name(target));

        Tensor merged_w = w0;
        Tensor averaged({w0.dim(0)});
        for (const auto& m : modules) {
            const LoraAdapter& ad = m.module.get().lora.at(target);
            axpy(merged_w, m.weight, lora_delta(ad));
            axpy(averaged, m.weight, lora_forward(ad, w0, it->second));
        }
        worst = std::max(worst, max_abs_diff(matvec(merged_w, it->second), averaged));
    }
    return worst;
}

}  // namespace modmerge
