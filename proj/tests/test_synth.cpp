// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "modmerge/synth.hpp"

using namespace modmerge;

namespace {

RoutingQuery query(const std::string& light, const std::string& view, const std::string& occ, const std::string& loc,
                   const std::string& motion)
{
    return RoutingQuery(AttributeSchema::default_schema(), {{"lighting", light},
                                                            {"viewpoint", view},
                                                            {"occupancy", occ},
                                                            {"location", loc},
                                                            {"motion", motion}});
}

}  // namespace

TEST(Synth, DeterministicInSeed)
{
    const auto s = AttributeSchema::default_schema();
    const auto q = query("good", "medium", "low", "outdoor", "moving");
    const auto a = generate_sequence(s, q, 4, 99);
    const auto b = generate_sequence(s, q, 4, 99);
    const auto c = generate_sequence(s, q, 4, 100);
    for (std::size_t f = 0; f < 4; ++f) EXPECT_TRUE(bitwise_equal(a.frames[f], b.frames[f]));
    EXPECT_EQ(a.gt, b.gt);
    EXPECT_FALSE(bitwise_equal(a.frames[0], c.frames[0]));
}

TEST(Synth, TagsAreRecoverable)
{
    const auto s = AttributeSchema::default_schema();
    std::uint64_t seed = 1;
    for (const auto& q : all_combinations(s)) {
        const auto seq = generate_sequence(s, q, 2, seed++);
        EXPECT_EQ(seq.tags, q.selected());
        // lighting through the brightness rule
        EXPECT_EQ(classify_lighting(mean_hsv_value(seq.frames[0])), q.value("lighting")) << q.str();
        // occupancy through the count rule
        const std::vector<double> conf(seq.object_count(), 1.0);
        EXPECT_EQ(classify_occupancy(conf), q.value("occupancy")) << q.str();
        const auto [lo, hi] = occupancy_band(q.value("occupancy"));
        EXPECT_GE(seq.object_count(), lo);
        EXPECT_LE(seq.object_count(), hi);
        // viewpoint through the object size
        double side = 0.0;
        for (const auto& b : seq.gt[0]) side += b.box.w;
        side /= static_cast<double>(seq.gt[0].size());
        EXPECT_NEAR(side, viewpoint_scale(q.value("viewpoint")), 0.75) << q.str();
    }
}

TEST(Synth, FramesStayInRangeAndBoxesInside)
{
    const auto s = AttributeSchema::default_schema();
    const auto seq = generate_sequence(s, query("bad", "low", "high", "indoor", "static"), 6, 5);
    for (const auto& f : seq.frames) {
        ASSERT_EQ(f.shape(), (Shape{3, 64, 64}));
        for (double v : f.values()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 255.0);
        }
    }
    for (const auto& frame : seq.gt)
        for (const auto& b : frame) {
            EXPECT_GE(b.box.x, 0.0);
            EXPECT_LE(b.box.x + b.box.w, 64.0);
        }
}

TEST(Synth, CombinationsAndSplit)
{
    const auto s = AttributeSchema::default_schema();
    const auto all = all_combinations(s);
    EXPECT_EQ(all.size(), 72u);
    std::set<std::string> uniq;
    for (const auto& q : all) uniq.insert(q.str());
    EXPECT_EQ(uniq.size(), 72u);

    const auto split = split_combinations(s, 0.25, 3);
    EXPECT_EQ(split.held_out.size(), 18u);
    EXPECT_EQ(split.in_domain.size(), 54u);
    for (const auto& key : s.module_keys()) {
        bool covered = false;
        for (const auto& q : split.in_domain) covered = covered || q.value(key.attribute) == key.value;
        EXPECT_TRUE(covered) << key.str();
    }
    EXPECT_THROW(split_combinations(s, 0.99, 3), ConfigError);
}

TEST(Synth, CellTargets)
{
    const PatchGrid g = grid_for(16);
    const FrameBoxes boxes = {{1, {5, 5, 4, 4}}, {2, {4.5, 4.5, 5, 5}}};
    const auto [t, w] = cell_targets(boxes, g, {});
    const std::size_t k = 1 * 4 + 1;  // center (7, 7) lies in cell (1, 1)
    EXPECT_EQ(t.at(k, 0), 1.0);
    EXPECT_DOUBLE_EQ(t.at(k, 3), 5.0 / 8.0);  // the larger box owns the cell
    EXPECT_DOUBLE_EQ(t.at(k, 1), (7.0 - 6.0) / 4.0);
    EXPECT_EQ(w.at(k, 0), 2.0);
    EXPECT_EQ(w.at(0, 0), 1.0);
    EXPECT_EQ(w.at(0, 1), 0.0);
    EXPECT_THROW(grid_for(10), ConfigError);
}

TEST(Synth, SequenceRoundTrip)
{
    const auto s = AttributeSchema::default_schema();
    const auto seq = generate_sequence(s, query("good", "high", "medium", "indoor", "moving"), 3, 77);
    const auto dir = std::filesystem::temp_directory_path() / "modmerge_test_seq";
    write_sequence(seq, dir);
    const auto back = read_sequence(dir);
    EXPECT_EQ(back.tags, seq.tags);
    EXPECT_EQ(back.seed, seq.seed);
    EXPECT_EQ(back.gt, seq.gt);
    for (std::size_t f = 0; f < 3; ++f) EXPECT_TRUE(bitwise_equal(back.frames[f], seq.frames[f]));
    std::filesystem::remove(dir / "gt.txt");
    EXPECT_THROW(read_sequence(dir), DataError);
    std::filesystem::remove_all(dir);
}

TEST(Synth, NonDefaultSchemaRejected)
{
    const AttributeSchema other({{"lighting", {"good", "bad"}}});
    EXPECT_THROW(generate_sequence(other, RoutingQuery(other, {{"lighting", "good"}}), 2, 1), ConfigError);
}
