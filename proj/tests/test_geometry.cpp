#include "lgcvs/geometry.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace lgcvs;

TEST(Iou, HandCases) {
    EXPECT_DOUBLE_EQ(iou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)), 1.0);
    EXPECT_DOUBLE_EQ(iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)), 0.0);
    EXPECT_NEAR(iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)), 1.0 / 7.0, 1e-12);
}

TEST(Iou, DegenerateZeroArea) {
    EXPECT_DOUBLE_EQ(iou(Box(1, 1, 1, 1), Box(1, 1, 1, 1)), 0.0);
    EXPECT_DOUBLE_EQ(iou(Box(0, 0, 2, 2), Box(1, 1, 1, 1)), 0.0);
}

TEST(Iou, MatchesPixelCountingOracle) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        Box a = oracle::random_box(rng), b = oracle::random_box(rng);
        EXPECT_NEAR(iou(a, b), oracle::pixel_count_iou(a, b), 1e-3);
    }
}

TEST(Giou, HandCases) {
    EXPECT_DOUBLE_EQ(giou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)), 1.0);
    EXPECT_NEAR(giou(Box(0, 0, 1, 1), Box(2, 0, 3, 1)), -1.0 / 3.0, 1e-12);
}

TEST(Giou, EqualsIouWhenEnclosureIsUnion) {
    // b nested in a: enclosing box == a == union
    Box a(0, 0, 4, 4), b(1, 1, 3, 3);
    EXPECT_DOUBLE_EQ(giou(a, b), iou(a, b));
}

TEST(Giou, Properties) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 500; ++t) {
        Box a = oracle::random_box(rng), b = oracle::random_box(rng);
        EXPECT_NEAR(giou(a, b), oracle::closed_form_giou(a, b), 1e-9);
        EXPECT_DOUBLE_EQ(giou(a, b), giou(b, a));
        EXPECT_LE(giou(a, b), iou(a, b) + 1e-12);
        EXPECT_DOUBLE_EQ(giou(a, a), 1.0);
    }
}

TEST(Giou, MonotoneDecreaseAlongTranslation) {
    Box a(0, 0, 2, 2);
    double prev = 1.0;
    for (int k = 0; k <= 20; ++k) {
        double shift = k * 1.5;
        double g = giou(a, Box(shift, 0, shift + 2, 2));
        EXPECT_LE(g, prev + 1e-12);
        prev = g;
    }
    EXPECT_LT(prev, -0.8);  // approaches -1 as boxes separate
}

TEST(UnionBox, Properties) {
    EXPECT_EQ(union_box(Box(0, 0, 1, 1), Box(2, 2, 3, 3)), Box(0, 0, 3, 3));
    std::mt19937_64 rng(13);
    for (int t = 0; t < 100; ++t) {
        Box a = oracle::random_box(rng), b = oracle::random_box(rng), c = oracle::random_box(rng);
        EXPECT_EQ(union_box(a, b), union_box(b, a));
        EXPECT_EQ(union_box(union_box(a, b), c), union_box(a, union_box(b, c)));
        EXPECT_EQ(union_box(a, a), a);
    }
}

TEST(RelationRule, HandCases) {
    EXPECT_EQ(relation_rule(Box(0, 0, 10, 10), Box(2, 2, 4, 4)), RelationClass::InsideOutside);
    EXPECT_EQ(relation_rule(Box(0, 0, 2, 2), Box(10, 0, 12, 2)), RelationClass::LeftRight);
    EXPECT_EQ(relation_rule(Box(0, 0, 2, 2), Box(0, 10, 2, 12)), RelationClass::UpDown);
}

TEST(RelationRule, SymmetricAndTotal) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 500; ++t) {
        Box a = oracle::random_box(rng), b = oracle::random_box(rng);
        auto r = relation_rule(a, b);
        EXPECT_EQ(r, relation_rule(b, a));
        EXPECT_GE(static_cast<int>(r), 1);
        EXPECT_LE(static_cast<int>(r), 3);
    }
}

TEST(RelationRule, TieBreaksToLeftRight) {
    // equal |dcx| and |dcy|, no containment
    EXPECT_EQ(relation_rule(Box(0, 0, 2, 2), Box(5, 5, 7, 7)), RelationClass::LeftRight);
}

TEST(ConnectedComponents, Basic) {
    BinaryMask empty(8, 8);
    EXPECT_TRUE(connected_components(empty).empty());

    BinaryMask blob(8, 8);
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) blob.set(x, y);
    auto comps = connected_components(blob);
    ASSERT_EQ(comps.size(), 1u);
    EXPECT_EQ(comps[0].area(), 9);
}

TEST(ConnectedComponents, DiagonalTouchSplits) {
    BinaryMask m(4, 4);
    m.set(0, 0);
    m.set(1, 1);
    EXPECT_EQ(connected_components(m).size(), 2u);
}

TEST(ConnectedComponents, MatchesFloodFillAndPartitions) {
    std::mt19937_64 rng(19);
    std::bernoulli_distribution coin(0.4);
    for (int t = 0; t < 20; ++t) {
        BinaryMask m(16, 16);
        for (auto& v : m.grid) v = coin(rng);
        auto ours = connected_components(m);
        auto ref = oracle::flood_fill_components(m);
        ASSERT_EQ(ours.size(), ref.size());
        // component masks are disjoint and union to the input
        BinaryMask unioned(16, 16);
        long total = 0;
        for (auto& c : ours) {
            for (size_t i = 0; i < c.grid.size(); ++i) {
                EXPECT_FALSE(c.grid[i] && unioned.grid[i]);
                if (c.grid[i]) unioned.grid[i] = 1;
            }
            total += c.area();
        }
        EXPECT_EQ(unioned, m);
        EXPECT_EQ(total, m.area());
        // sorted by descending area
        for (size_t i = 1; i < ours.size(); ++i) EXPECT_GE(ours[i - 1].area(), ours[i].area());
    }
}

TEST(TightBox, HandCases) {
    BinaryMask single(8, 8);
    single.set(3, 5);
    EXPECT_EQ(tight_box(single), Box(3, 5, 4, 6));

    BinaryMask full(10, 6);
    for (auto& v : full.grid) v = 1;
    EXPECT_EQ(tight_box(full), Box(0, 0, 10, 6));

    BinaryMask ell(8, 10);
    for (int y = 2; y < 8; ++y) ell.set(1, y);
    for (int x = 1; x < 5; ++x) ell.set(x, 7);
    EXPECT_EQ(tight_box(ell), Box(1, 2, 5, 8));
    EXPECT_EQ(tight_box(ell), oracle::scan_tight_box(ell));
}

TEST(TightBox, EmptyMaskThrows) {
    EXPECT_THROW(tight_box(BinaryMask(4, 4)), std::invalid_argument);
}
