// SPDX-License-Identifier: Apache-2.0

#include "modmerge/training.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "modmerge/rng.hpp"

namespace modmerge {

void TrainingConfig::validate() const
{
    auto check_rate = [](Scalar v, const char* what) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(what) + " must be finite and >= 0");
    };
    check_rate(lora_lr, "lora learning rate");
    check_rate(lora_weight_decay, "lora weight decay");
    check_rate(ssf_lr, "scale-&-shift learning rate");
    check_rate(ssf_weight_decay, "scale-&-shift weight decay");
    check_rate(max_grad_norm, "gradient clipping norm");
    if (accumulation == 0) throw ConfigError("accumulation steps must be at least 1");
    if (rank == 0) throw ConfigError("LoRA rank must be at least 1");
}

Batch Dataset::batch(std::size_t index) const
{
    const Sample& s = samples.at(index);
    Batch b;
    b.inputs = grid ? extract_patches(s.inputs, *grid) : s.inputs;
    b.targets = s.targets;
    b.weights = s.weights;
    return b;
}

std::vector<std::size_t> Dataset::matching(const std::string& attribute, const std::string& value) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto it = samples[i].tags.find(attribute);
        if (it != samples[i].tags.end() && it->second == value) out.push_back(i);
    }
    return out;
}

void sgd_step(Tensor& param, const Tensor& grad, Scalar lr, Scalar weight_decay)
{
    if (param.shape() != grad.shape())
        throw ShapeError("gradient " + shape_to_string(grad.shape()) + " for parameter " +
                         shape_to_string(param.shape()));
    const Scalar keep = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) param[i] = param[i] * keep - lr * grad[i];
    param.require_finite("sgd_step");
}

void apply_adapter_step(ModuleAdapters& module, const AdapterGradients& grads, const TrainingConfig& config)
{
    Scalar factor = 1.0;
    if (config.max_grad_norm > 0.0) {
        Scalar sq = 0.0;
        for (Scalar g : grads.flatten()) sq += g * g;
        const Scalar norm = std::sqrt(sq);
        if (norm > config.max_grad_norm) factor = config.max_grad_norm / norm;
    }
    for (const auto& [target, g] : grads.lora) {
        LoraAdapter& ad = module.lora.at(target);
        sgd_step(ad.a(), g.a, factor * config.lora_lr, config.lora_weight_decay);
        sgd_step(ad.b(), g.b, factor * config.lora_lr, config.lora_weight_decay);
    }
    for (const auto& [target, g] : grads.scale_shift) {
        ScaleShiftAdapter& ad = module.scale_shift.at(target);
        sgd_step(ad.gamma(), g.gamma, factor * config.ssf_lr, config.ssf_weight_decay);
        sgd_step(ad.beta(), g.beta, factor * config.ssf_lr, config.ssf_weight_decay);
    }
}

namespace {

// Gradient accumulation for one module; a step fires every `accumulation` passes.
struct Accumulator {
    AdapterGradients sum;
    std::size_t count = 0;
};

struct PassResult {
    Scalar loss;
    bool stepped;
};

PassResult backward_pass(const BatchEvaluator& eval, ModuleAdapters& module, Accumulator& acc, const Batch& batch,
                         const TrainingConfig& config)
{
    const BatchResult r = eval.adapter_step(batch, module);
    if (acc.count == 0) acc.sum = AdapterGradients::zeros_like(module);
    acc.sum.add_scaled(r.adapter_grads, 1.0 / static_cast<Scalar>(config.accumulation));
    if (++acc.count < config.accumulation) return {r.loss, false};
    apply_adapter_step(module, acc.sum, config);
    acc.count = 0;
    return {r.loss, true};
}

}  // namespace

ModuleTrainingResult train_module(const ToyNetwork& net, ModuleInventory& inventory, const ModuleKey& key,
                                  const Dataset& dataset, const TrainingConfig& config, Execution exec)
{
    config.validate();
    ModuleAdapters& module = inventory.at(key);
    net.validate_module(module);
    const auto pool = dataset.matching(key.attribute, key.value);
    if (pool.empty()) throw DataError("no training samples tagged " + key.str());

    Rng rng(derive_seed(config.seed, key.str()));
    const BatchEvaluator eval(net, exec);
    Accumulator acc;
    ModuleTrainingResult result;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const Batch batch = dataset.batch(pool[rng.below(pool.size())]);
        const PassResult p = backward_pass(eval, module, acc, batch, config);
        result.losses.push_back(p.loss);
        ++result.backward_passes;
        if (p.stepped) ++result.optimizer_steps;
    }
    return result;
}

std::size_t TrainingReport::histogram_spread() const
{
    if (backward_counts.empty()) return 0;
    std::size_t lo = backward_counts.begin()->second;
    std::size_t hi = lo;
    for (const auto& [_, n] : backward_counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    return hi - lo;
}

TrainingReport train_all_modules(const ToyNetwork& net, ModuleInventory& inventory, const Dataset& dataset,
                                 const TrainingConfig& config, bool audit, std::ostream* log, Execution exec)
{
    config.validate();
    const auto keys = inventory.schema().module_keys();
    std::vector<std::vector<std::size_t>> pools;
    for (const auto& key : keys) {
        net.validate_module(inventory.at(key));
        pools.push_back(dataset.matching(key.attribute, key.value));
        if (pools.back().empty()) throw DataError("no training samples tagged " + key.str());
    }

    std::vector<std::size_t> schedule;
    schedule.reserve(keys.size() * config.iterations);
    for (std::size_t m = 0; m < keys.size(); ++m) schedule.insert(schedule.end(), config.iterations, m);
    Rng rng(config.seed);
    rng.shuffle(schedule);

    TrainingReport report;
    for (const auto& key : keys) report.backward_counts[key] = 0;

    std::vector<std::uint64_t> sums;
    std::uint64_t base_sum = 0;
    if (audit) {
        for (const auto& key : keys) sums.push_back(inventory.checksum(key));
        base_sum = store_checksum(net.base());
    }

    const BatchEvaluator eval(net, exec);
    std::vector<Accumulator> accs(keys.size());
    for (std::size_t it = 0; it < schedule.size(); ++it) {
        const std::size_t m = schedule[it];
        const ModuleKey& key = keys[m];
        const auto& pool = pools[m];
        const Batch batch = dataset.batch(pool[rng.below(pool.size())]);
        const PassResult p = backward_pass(eval, inventory.at(key), accs[m], batch, config);

        const std::size_t count = ++report.backward_counts[key];
        report.losses[key].push_back(p.loss);
        if (audit) {
            bool clean = store_checksum(net.base()) == base_sum;
            for (std::size_t other = 0; other < keys.size(); ++other)
                if (other != m && inventory.checksum(keys[other]) != sums[other]) clean = false;
            sums[m] = inventory.checksum(key);
            ++report.audited_steps;
            if (!clean) ++report.isolation_violations;
        }
        if (log) {
            nlohmann::json line = {
                {"iteration", it}, {"module", key.str()}, {"loss", p.loss}, {"backward_count", count}};
            *log << line.dump() << '\n';
        }
    }
    return report;
}

ModuleInventory fresh_inventory(const ToyNetwork& net, const AttributeSchema& schema, const TrainingConfig& config)
{
    ModuleInventory inv(schema);
    for (const auto& key : schema.module_keys())
        inv.set(key, net.fresh_module(derive_seed(config.seed, "init:" + key.str()), config.rank,
                                      config.min_lora_width));
    return inv;
}

BootstrapResult bootstrap_base(const ToyNetSpec& spec, ParameterStore init, const Dataset& dataset,
                               const BootstrapConfig& config, Execution exec)
{
    if (!(config.fraction > 0.0) || config.fraction > 1.0) throw ConfigError("bootstrap fraction must be in (0, 1]");
    if (!std::isfinite(config.lr) || config.lr < 0.0) throw ConfigError("bootstrap learning rate must be >= 0");

    std::vector<std::size_t> sequences;
    for (const auto& s : dataset.samples) sequences.push_back(s.sequence);
    std::sort(sequences.begin(), sequences.end());
    sequences.erase(std::unique(sequences.begin(), sequences.end()), sequences.end());
    if (sequences.empty()) throw DataError("bootstrap dataset is empty");

    Rng rng(derive_seed(config.seed, "bootstrap"));
    rng.shuffle(sequences);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.fraction * static_cast<Scalar>(sequences.size()))));
    sequences.resize(keep);
    std::sort(sequences.begin(), sequences.end());

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        if (std::binary_search(sequences.begin(), sequences.end(), dataset.samples[i].sequence)) pool.push_back(i);

    BootstrapResult result;
    result.base = std::move(init);
    result.sequences = sequences;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const ToyNetwork net(spec, result.base);
        const BatchResult r = BatchEvaluator(net, exec).base_step(dataset.batch(pool[rng.below(pool.size())]));
        for (const auto& [name, g] : *r.base_grads) sgd_step(result.base.at(name), g, config.lr, 0.0);
        result.losses.push_back(r.loss);
    }
    return result;
}

}  // namespace modmerge
