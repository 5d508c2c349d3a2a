// SPDX-License-Identifier: Apache-2.0
//
// Runs composed toy networks as detector + tracker on synthetic scenarios and
// scores them.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "modmerge/composition.hpp"
#include "modmerge/metrics.hpp"
#include "modmerge/synth.hpp"
#include "modmerge/toy_net.hpp"

namespace modmerge {

struct DetectorConfig {
    Scalar objectness = 0.5;
    Scalar nms_iou = 0.3;
    Scalar size_unit = 8.0;
};

struct Detection {
    Box box;
    Scalar score = 0.0;
};

/// Network outputs [cells x 4] -> boxes above the objectness threshold,
/// after greedy non-maximum suppression (higher score first, ties by cell).
std::vector<Detection> decode_detections(const Tensor& outputs, const PatchGrid& grid, const DetectorConfig& config);

struct TrackerConfig {
    Scalar gate = 5.0;        // max center distance for a link, pixels
    std::size_t max_age = 1;  // frames a track may go unmatched
};

/// Greedy nearest-center association: pairs within the gate are linked in
/// increasing distance order; unlinked detections start new tracks.
std::vector<FrameBoxes> track_detections(const std::vector<std::vector<Detection>>& frames,
                                         const TrackerConfig& config);

/// Detector + tracker over a whole sequence with parameters `params`.
std::vector<FrameBoxes> run_tracker(const ToyNetSpec& spec, const ParameterStore& params, const SyntheticSequence& seq,
                                    const DetectorConfig& det, const TrackerConfig& trk);

enum class RoutingMode {
    Base,            // theta0, no modules
    Hard,            // Domain Expert selection
    Soft,            // soft routing with rho
    All,             // every module of every attribute, uniform
    Opposite,        // every attribute replaced by another value
    OppositeSingle,  // one attribute replaced
};

struct Method {
    std::string name;
    RoutingMode routing = RoutingMode::Hard;
    Strategy strategy = Strategy::Mean;
    std::string attribute;  // OppositeSingle only
};

/// domain_expert, weighted, all_modules, opposite, opposite_<attribute> for
/// each attribute, sum, none.
std::vector<Method> default_methods(const AttributeSchema& schema);

struct Scenario {
    RoutingQuery query;
    std::uint64_t seed = 0;
    bool held_out = false;
};

struct BenchmarkConfig {
    std::size_t length = 10;
    Scalar rho = 0.8;
    Scalar iou_threshold = 0.5;
    SceneConfig scene;
    DetectorConfig detector;
    TrackerConfig tracker;
    std::vector<Method> methods;  // empty -> default_methods
};

struct BenchmarkRow {
    std::size_t scenario = 0;
    std::string tags;
    bool held_out = false;
    std::string method;
    std::string strategy;
    Scalar rho = 1.0;
    TrackingMetrics metrics;
};

/// Parameters for one method on one query.
ParameterStore compose_for(const ModuleInventory& inventory, const ParameterStore& theta0, const RoutingQuery& query,
                           const Method& method, Scalar rho);

/// Rows for every method on one already generated sequence, routed by `query`.
std::vector<BenchmarkRow> benchmark_sequence(const ModuleInventory& inventory, const ParameterStore& theta0,
                                             const ToyNetSpec& spec, const SyntheticSequence& seq,
                                             const RoutingQuery& query, std::size_t scenario, bool held_out,
                                             const BenchmarkConfig& config);

/// One row per (scenario, method), scenario-major. DataError when the
/// inventory lacks a module that a method needs.
std::vector<BenchmarkRow> run_benchmark(const ModuleInventory& inventory, const ParameterStore& theta0,
                                        const ToyNetSpec& spec, std::span<const Scenario> scenarios,
                                        const BenchmarkConfig& config);

/// `count` scenarios cycling through a seeded permutation of `queries`, with
/// per-scenario seeds derived from `seed`.
std::vector<Scenario> make_scenarios(std::span<const RoutingQuery> queries, std::size_t count, std::uint64_t seed,
                                     bool held_out);

struct MethodSummary {
    std::string method;
    std::size_t n = 0;
    Scalar mean_mota = 0.0;
    Scalar se_mota = 0.0;
    Scalar mean_idf1 = 0.0;
};

/// Per-method means over scenarios, optionally restricted to held-out or
/// in-domain rows. Methods keep their first-appearance order.
std::vector<MethodSummary> summarize(std::span<const BenchmarkRow> rows, std::optional<bool> held_out = {});

/// Paired difference a - b of MOTA over scenarios that have both methods:
/// mean and standard error.
std::pair<Scalar, Scalar> paired_difference(std::span<const BenchmarkRow> rows, const std::string& a,
                                            const std::string& b, std::optional<bool> held_out = {});

/// Header row plus one line per row, fields separated by `delim`.
void write_results_table(std::ostream& os, std::span<const BenchmarkRow> rows, char delim = '\t');

}  // namespace modmerge
