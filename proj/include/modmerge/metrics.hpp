// SPDX-License-Identifier: Apache-2.0
//
// CLEAR-style tracking metrics (MOTA with FP/FN/IDSW) and identity F1.

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace modmerge {

/// Axis-aligned box, top-left corner plus extent, in pixels.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

struct TrackedBox {
    int id = 0;
    Box box;
    friend bool operator==(const TrackedBox&, const TrackedBox&) = default;
};

/// One frame's boxes; ids must be unique within a frame.
using FrameBoxes = std::vector<TrackedBox>;

/// Minimum-cost assignment on a dense rows x cols matrix (row-major). Every
/// row or every column (whichever is fewer) is assigned. Returns (row, col)
/// pairs sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(std::span<const double> cost, std::size_t rows,
                                                                     std::size_t cols);

struct FrameMatch {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt), sorted by pred
    std::vector<std::size_t> unmatched_pred;
    std::vector<std::size_t> unmatched_gt;
};

/// Bipartite matching with cost 1 - IoU. Pairs below `threshold` are never
/// matched; among the rest the matching has maximum size, then minimum cost.
/// ConfigError unless 0 < threshold <= 1.
FrameMatch match_frame(std::span<const Box> pred, std::span<const Box> gt, double threshold);

struct TrackingMetrics {
    double mota = 0.0;
    double idf1 = 0.0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t idsw = 0;
    std::size_t gt = 0;       // ground-truth boxes over all frames
    std::size_t matches = 0;  // matched pairs over all frames
    std::size_t idtp = 0;
    std::size_t idfp = 0;
    std::size_t idfn = 0;
};

/// MOTA = 1 - (FP + FN + IDSW) / GT, where an ID switch is charged when a
/// ground-truth track is matched to a prediction id different from its most
/// recent earlier match. IDF1 uses the one-to-one track mapping that
/// maximizes identity true positives. DataError on mismatched frame counts,
/// duplicate ids in a frame, or an empty ground truth.
TrackingMetrics evaluate(const std::vector<FrameBoxes>& pred, const std::vector<FrameBoxes>& gt,
                         double threshold = 0.5);

}  // namespace modmerge
