// SPDX-License-Identifier: Apache-2.0
//
// End-to-end toy experiment: synthetic data, bootstrap base, isolated module
// training, benchmark.

#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "modmerge/benchmark.hpp"
#include "modmerge/training.hpp"

namespace modmerge {

struct DataConfig {
    std::size_t sequences_per_combination = 1;
    std::size_t length = 6;
    Scalar held_out_fraction = 0.25;
    SceneConfig scene;
    TargetConfig targets;
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    ToyNetSpec spec;
    DataConfig data;
    BootstrapConfig bootstrap;
    TrainingConfig training;
    BenchmarkConfig bench;
    std::size_t scenarios = 24;  // per split
};

/// Defaults used by the demo config and the benchmark checks.
ExperimentConfig default_experiment();

/// One training sequence per (in-domain combination, repeat), seeded per item.
std::vector<SyntheticSequence> training_sequences(const AttributeSchema& schema, const CombinationSplit& split,
                                                  const DataConfig& data, std::uint64_t seed);

struct ExperimentResult {
    CombinationSplit split;
    ParameterStore theta0;
    std::vector<std::size_t> bootstrap_sequences;
    ModuleInventory inventory;
    TrainingReport training;
    std::vector<BenchmarkRow> rows;
};

/// Runs everything; `log` (optional) receives progress lines.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace modmerge
