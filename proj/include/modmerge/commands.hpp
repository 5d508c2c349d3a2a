// SPDX-License-Identifier: Apache-2.0
//
// Commands behind the modmerge tool. Each returns a JSON result; eval also
// streams a tab-separated metrics table.
//
// Data directory layout written by gen-data:
//   manifest.json   seed, split, sequence lists
//   train/NNNN/     in-domain training sequences
//   eval/NNNN/      evaluation scenarios (in-domain first, then held-out)

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "modmerge/run_config.hpp"

namespace modmerge::cmd {

using Result = nlohmann::ordered_json;

Result init_base(const RunConfig& config);
Result gen_data(const RunConfig& config);
Result train_module(const RunConfig& config, const std::string& attribute, const std::string& value);
Result train_all(const RunConfig& config);
/// Weights per attribute in schema order, e.g. {"occupancy": {"low": 0.1, "medium": 0.8, "high": 0.1}}.
Result route(const RunConfig& config, const std::map<std::string, std::string>& query, Scalar rho);
/// Writes the composed checkpoint to `out` and a manifest to `out` + ".manifest.json".
Result merge(const RunConfig& config, const std::map<std::string, std::string>& query, Strategy strategy, Scalar rho,
             const std::filesystem::path& out);

enum class ScenarioSet { InDomain, HeldOut, All };
/// ConfigError for anything but "in_domain", "held_out", "all".
ScenarioSet parse_scenario_set(const std::string& s);

/// Without `checkpoint`: every benchmark method, routed by each scenario's
/// tags. With it: that checkpoint alone. The table also goes to
/// <output>/eval.tsv.
Result eval(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint, ScenarioSet set,
            std::ostream& table);
/// NumericError when the worst relative error reaches `tolerance`.
Result gradcheck(const RunConfig& config, std::size_t cases, Scalar h, Scalar tolerance);
Result inspect(const std::filesystem::path& checkpoint);

/// Process exit code for an exception: ConfigError 2, DataError (and
/// ShapeError) 3, NumericError 4, anything else 1.
int exit_code(const std::exception& e);

/// Runs `body`, printing its result (or "error: ..." to `err`); returns the exit code.
int run_guarded(const std::function<Result()>& body, std::ostream& out, std::ostream& err);

}  // namespace modmerge::cmd
