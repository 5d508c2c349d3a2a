// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "modmerge/benchmark.hpp"
#include "modmerge/metrics.hpp"
#include "oracles.hpp"

using namespace modmerge;

TEST(Assignment, MatchesBruteForce)
{
    std::mt19937_64 gen(41);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int rep = 0; rep < 300; ++rep) {
        const std::size_t r = 1 + gen() % 6, c = 1 + gen() % 6;
        std::vector<double> cost(r * c);
        for (auto& x : cost) x = std::floor(u(gen));  // integer costs create ties
        const auto pairs = min_cost_assignment(cost, r, c);
        ASSERT_EQ(pairs.size(), std::min(r, c));
        double total = 0.0;
        std::set<std::size_t> rows, cols;
        for (const auto& [i, j] : pairs) {
            total += cost[i * c + j];
            rows.insert(i);
            cols.insert(j);
        }
        EXPECT_EQ(rows.size(), pairs.size());
        EXPECT_EQ(cols.size(), pairs.size());
        EXPECT_NEAR(total, oracle::brute_assignment_cost(cost, r, c), 1e-9);
    }
    const std::vector<double> bad = {1.0, std::nan("")};
    EXPECT_THROW(min_cost_assignment(bad, 1, 2), NumericError);
}

TEST(Iou, KnownValues)
{
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {5, 5, 2, 2}), 0.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
}

TEST(MatchFrame, PrefersCardinalityOverCost)
{
    // pred 0 overlaps both gts strongly; pred 1 only overlaps gt 0, weakly.
    const std::vector<Box> gt = {{0, 0, 10, 10}, {4, 0, 10, 10}};
    const std::vector<Box> pred = {{1, 0, 10, 10}, {-3, 0, 10, 10}};
    const FrameMatch m = match_frame(pred, gt, 0.5);
    ASSERT_EQ(m.pairs.size(), 2u);
    EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 1}));
    EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{1, 0}));
    EXPECT_THROW(match_frame(pred, gt, 0.0), ConfigError);
}

TEST(Evaluate, HandExample)
{
    // gt track 1 over three frames; prediction switches id in frame 2 and
    // misses frame 3; one false positive in frame 1.
    const Box b{0, 0, 10, 10};
    std::vector<FrameBoxes> gt = {{{1, b}}, {{1, b}}, {{1, b}}};
    std::vector<FrameBoxes> pred = {{{5, b}, {6, {50, 50, 5, 5}}}, {{7, b}}, {}};
    const TrackingMetrics m = evaluate(pred, gt, 0.5);
    EXPECT_EQ(m.fp, 1u);
    EXPECT_EQ(m.fn, 1u);
    EXPECT_EQ(m.idsw, 1u);
    EXPECT_DOUBLE_EQ(m.mota, 0.0);
    EXPECT_EQ(m.idtp, 1u);
    EXPECT_DOUBLE_EQ(m.idf1, 2.0 / 6.0);
}

TEST(Evaluate, SwitchUsesLastMatch)
{
    const Box b{0, 0, 10, 10};
    // ids 5, 7, 5: two switches under the last-match rule.
    std::vector<FrameBoxes> gt = {{{1, b}}, {{1, b}}, {{1, b}}};
    std::vector<FrameBoxes> pred = {{{5, b}}, {{7, b}}, {{5, b}}};
    EXPECT_EQ(evaluate(pred, gt).idsw, 2u);
}

TEST(Evaluate, MatchesBruteForceOracle)
{
    std::mt19937_64 gen(42);
    for (int rep = 0; rep < 200; ++rep) {
        const auto [pred, gt] = oracle::random_instance(gen, 1 + gen() % 4, 1 + gen() % 5);
        const TrackingMetrics m = evaluate(pred, gt, 0.5);
        const oracle::Metrics o = oracle::brute_metrics(pred, gt, 0.5);
        EXPECT_EQ(m.fp, o.fp);
        EXPECT_EQ(m.fn, o.fn);
        EXPECT_EQ(m.idsw, o.idsw);
        EXPECT_EQ(m.idtp, o.idtp);
        EXPECT_NEAR(m.mota, o.mota, 1e-12);
        EXPECT_NEAR(m.idf1, o.idf1, 1e-12);
    }
}

TEST(Evaluate, InputErrors)
{
    const Box b{0, 0, 1, 1};
    EXPECT_THROW(evaluate({{}}, {{}, {}}), DataError);
    EXPECT_THROW(evaluate({{}}, {{}}), DataError);
    EXPECT_THROW(evaluate({{{1, b}, {1, b}}}, {{{1, b}}}), DataError);
}

TEST(Tracker, NmsAndLinking)
{
    PatchGrid g{2, 2, 4, 2};
    Tensor out({4, 4});
    out.at(0, 0) = 0.9;  // cell (0,0)
    out.at(0, 3) = 0.5;
    out.at(1, 0) = 0.8;  // neighbouring cell, same object
    out.at(1, 1) = -1.0;
    out.at(1, 3) = 0.5;
    const auto dets = decode_detections(out, g, {});
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_DOUBLE_EQ(dets[0].score, 0.9);

    std::vector<std::vector<Detection>> frames = {{{{0, 0, 4, 4}, 0.9}}, {{{1, 0, 4, 4}, 0.9}}, {{{30, 30, 4, 4}, 0.9}}};
    const auto tracks = track_detections(frames, {});
    EXPECT_EQ(tracks[0][0].id, tracks[1][0].id);
    EXPECT_NE(tracks[1][0].id, tracks[2][0].id);
}

TEST(Summaries, PairedDifference)
{
    std::vector<BenchmarkRow> rows;
    const double a[] = {0.5, 0.6, 0.7}, b[] = {0.4, 0.4, 0.6};
    for (std::size_t s = 0; s < 3; ++s) {
        BenchmarkRow ra, rb;
        ra.scenario = rb.scenario = s;
        ra.method = "a";
        rb.method = "b";
        ra.metrics.mota = a[s];
        rb.metrics.mota = b[s];
        rows.push_back(ra);
        rows.push_back(rb);
    }
    const auto [mean, se] = paired_difference(rows, "a", "b");
    EXPECT_NEAR(mean, 0.4 / 3.0, 1e-12);
    // diffs 0.1, 0.2, 0.1: sd = sqrt(1/300), se = sd / sqrt(3)
    EXPECT_NEAR(se, std::sqrt(1.0 / 300.0) / std::sqrt(3.0), 1e-12);
    const auto sum = summarize(rows);
    ASSERT_EQ(sum.size(), 2u);
    EXPECT_EQ(sum[0].method, "a");
    EXPECT_NEAR(sum[0].mean_mota, 0.6, 1e-12);
}
