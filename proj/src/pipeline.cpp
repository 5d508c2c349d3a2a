// SPDX-License-Identifier: Apache-2.0

#include "modmerge/pipeline.hpp"

#include "modmerge/rng.hpp"

namespace modmerge {

ExperimentConfig default_experiment()
{
    // Plain SGD on this toy wants big steps. Decay is rescaled so that
    // lr * wd per step stays at the library defaults' product.
    ExperimentConfig c;
    c.bootstrap.lr = 0.1;
    c.bootstrap.iterations = 800;
    c.training.lora_lr = 3.0;
    c.training.lora_weight_decay = 3e-4 * 0.1 / c.training.lora_lr;
    c.training.ssf_lr = 0.3;
    c.training.ssf_weight_decay = 1e-5 * 1e-4 / c.training.ssf_lr;
    c.training.max_grad_norm = 1.0;
    c.training.iterations = 320;
    return c;
}

std::vector<SyntheticSequence> training_sequences(const AttributeSchema& schema, const CombinationSplit& split,
                                                  const DataConfig& data, std::uint64_t seed)
{
    std::vector<SyntheticSequence> out;
    for (std::size_t i = 0; i < split.in_domain.size(); ++i)
        for (std::size_t r = 0; r < data.sequences_per_combination; ++r)
            out.push_back(generate_sequence(schema, split.in_domain[i], data.length,
                                            derive_seed(seed, "train:" + std::to_string(i) + ":" + std::to_string(r)),
                                            data.scene));
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log)
{
    const AttributeSchema schema = AttributeSchema::default_schema();
    auto say = [log](const std::string& s) {
        if (log) *log << s << std::endl;
    };

    CombinationSplit split = split_combinations(schema, config.data.held_out_fraction, config.seed);
    const auto sequences = training_sequences(schema, split, config.data, config.seed);
    const Dataset dataset = make_dataset(sequences, grid_for(config.data.scene.frame_size), config.data.targets);
    say("data: " + std::to_string(sequences.size()) + " sequences, " + std::to_string(dataset.samples.size()) +
        " frames");

    BootstrapConfig boot = config.bootstrap;
    boot.seed = derive_seed(config.seed, "bootstrap");
    BootstrapResult b =
        bootstrap_base(config.spec, ToyNetwork::random_base(config.spec, derive_seed(config.seed, "base")), dataset,
                       boot);
    say("bootstrap: " + std::to_string(b.losses.size()) + " steps on " + std::to_string(b.sequences.size()) +
        " sequences");

    const ToyNetwork net(config.spec, b.base);
    TrainingConfig tc = config.training;
    tc.seed = derive_seed(config.seed, "modules");
    ModuleInventory inventory = fresh_inventory(net, schema, tc);
    TrainingReport report = train_all_modules(net, inventory, dataset, tc, true);
    say("modules: " + std::to_string(report.audited_steps) + " audited backward passes");

    auto scenarios = make_scenarios(split.in_domain, config.scenarios, derive_seed(config.seed, "eval:in"), false);
    const auto held = make_scenarios(split.held_out, config.scenarios, derive_seed(config.seed, "eval:held"), true);
    scenarios.insert(scenarios.end(), held.begin(), held.end());
    auto rows = run_benchmark(inventory, b.base, config.spec, scenarios, config.bench);
    say("benchmark: " + std::to_string(rows.size()) + " rows");

    return {std::move(split), std::move(b.base), std::move(b.sequences), std::move(inventory), std::move(report),
            std::move(rows)};
}

}  // namespace modmerge
