// SPDX-License-Identifier: Apache-2.0
//
// Attribute-tagged synthetic tracking sequences. Each attribute of the
// default schema changes the rendered scene:
//
//   lighting   brightness gain (bad scenes stay below the lighting threshold)
//   viewpoint  object scale
//   occupancy  object count, inside the occupancy band of the value
//   location   background: smooth indoor gradient, or textured outdoor
//              ground with small bright clutter
//   motion     camera jitter plus horizontal blur when moving

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modmerge/metrics.hpp"
#include "modmerge/routing.hpp"
#include "modmerge/training.hpp"

namespace modmerge {

struct SceneConfig {
    std::size_t frame_size = 64;
    Scalar noise = 4.0;         // sensor noise standard deviation, 0..255 scale
    Scalar dark_gain = 0.25;    // lighting=bad
    Scalar max_speed = 0.6;     // pixels per frame, per axis
    Scalar camera_jitter = 2.0; // motion=moving, max offset per axis
    std::size_t clutter = 18;   // outdoor distractor spots
};

struct SyntheticSequence {
    std::vector<Tensor> frames;  // [3 x S x S], values 0..255
    std::vector<FrameBoxes> gt;
    std::map<std::string, std::string> tags;
    std::uint64_t seed = 0;

    std::size_t object_count() const { return gt.empty() ? 0 : gt.front().size(); }
};

/// Object count range [lo, hi] for an occupancy value.
std::pair<std::size_t, std::size_t> occupancy_band(const std::string& value);
/// Nominal object side length for a viewpoint value.
Scalar viewpoint_scale(const std::string& value);

/// ConfigError unless `schema` is the default schema and length >= 1.
SyntheticSequence generate_sequence(const AttributeSchema& schema, const RoutingQuery& tags, std::size_t length,
                                    std::uint64_t seed, const SceneConfig& scene = {});

/// Every full assignment of values, in schema order (last attribute fastest).
std::vector<RoutingQuery> all_combinations(const AttributeSchema& schema);

struct CombinationSplit {
    std::vector<RoutingQuery> in_domain;
    std::vector<RoutingQuery> held_out;
};

/// Seeded split of all combinations. Every single value stays covered by the
/// in-domain side (ConfigError if the fraction makes that impossible).
CombinationSplit split_combinations(const AttributeSchema& schema, Scalar held_out_fraction, std::uint64_t seed);

/// Per-cell regression targets for the toy detector.
struct TargetConfig {
    Scalar positive_weight = 2.0;  // objectness weight on cells holding a center
    Scalar box_weight = 4.0;       // offset and size weight, positive cells only
    Scalar size_unit = 8.0;        // size output is side / size_unit
};

/// Targets [cells x 4] and weights for one frame's boxes: objectness, x and
/// y offset of the center from the cell center in cell units, size.
std::pair<Tensor, Tensor> cell_targets(const FrameBoxes& boxes, const PatchGrid& grid, const TargetConfig& config);

/// Grid covering a square frame of `frame_size` with 4-pixel cells.
PatchGrid grid_for(std::size_t frame_size);

/// Network input for a 0..255 frame: (v / 255) - 0.5.
Tensor network_input(const Tensor& frame);

/// One sample per frame, inputs through network_input. Sample.sequence is the
/// position of the sequence in `sequences`.
Dataset make_dataset(const std::vector<SyntheticSequence>& sequences, const PatchGrid& grid,
                     const TargetConfig& config = {});

/// Directory layout: frames.ckpt ("frame.0000", ...), gt.txt with lines
/// "frame,id,x,y,w,h", tags.txt with "attribute=value" lines and the seed.
void write_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir);
/// DataError on missing or malformed files.
SyntheticSequence read_sequence(const std::filesystem::path& dir);

}  // namespace modmerge
