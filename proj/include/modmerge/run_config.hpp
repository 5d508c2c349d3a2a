// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration for the command-line tool. Every object level
// rejects keys it does not know. Relative paths resolve against the
// directory of the config file.
//
//   {
//     "seed": 7,
//     "schema": [{"name": "lighting", "values": ["good", "bad"]}, ...],
//     "query": {"lighting": "good", ...},
//     "strategy": "mean", "rho": 1.0,
//     "paths": {"base": ..., "inventory": ..., "data": ..., "output": ...},
//     "bootstrap": {"lr", "iterations", "fraction"},
//     "training": {"lora_lr", "lora_weight_decay", "ssf_lr", "ssf_weight_decay",
//                  "accumulation", "max_grad_norm", "iterations", "rank"},
//     "data": {"sequences_per_combination", "length", "held_out_fraction"},
//     "eval": {"length", "scenarios", "rho", "iou_threshold", "objectness"}
//   }
//
// Omitted fields keep the defaults of default_experiment().

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modmerge/composition.hpp"
#include "modmerge/pipeline.hpp"

namespace modmerge {

struct RunPaths {
    std::filesystem::path base;       // theta0 checkpoint
    std::filesystem::path inventory;  // directory of module checkpoints
    std::filesystem::path data;       // generated sequences
    std::filesystem::path output;     // logs, tables, merged checkpoints
};

struct RunConfig {
    AttributeSchema schema = AttributeSchema::default_schema();
    std::map<std::string, std::string> query;  // may be partial; commands complete or reject it
    Strategy strategy = Strategy::Mean;
    std::optional<Scalar> rho;
    RunPaths paths;
    ExperimentConfig experiment = default_experiment();

    /// 0.8 for the weighted strategy, 1 otherwise, unless set explicitly.
    Scalar effective_rho(Strategy s) const;
};

/// ConfigError on malformed JSON, unknown keys, wrong types or bad values.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
/// DataError if the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& file);

/// "attr=value" items applied over `base`; ConfigError on malformed items.
std::map<std::string, std::string> apply_query_overrides(std::map<std::string, std::string> base,
                                                         const std::vector<std::string>& items);

}  // namespace modmerge
