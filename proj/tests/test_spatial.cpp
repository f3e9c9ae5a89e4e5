#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "hierplan/spatial.hpp"

using namespace hierplan;

namespace {

BoundingBox box_of_miles(LatLon origin, double east, double north) {
    const Projection p(origin);
    const LatLon ne = p.to_geo({east, north});
    return {origin.lat, origin.lon, ne.lat, ne.lon};
}

const LatLon kOrigin{36.1, -86.8};

}  // namespace

TEST(BuildGrid, TwoByTwoMilesGivesFourCells) {
    const Grid g = build_grid(box_of_miles(kOrigin, 2.0, 2.0), 1.0);
    EXPECT_EQ(g.size(), 4);
    EXPECT_EQ(g.n_rows(), 2);
    EXPECT_EQ(g.n_cols(), 2);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(g.cell(i).id, i);
}

TEST(BuildGrid, OneMileBoxIsOneCell) {
    EXPECT_EQ(build_grid(box_of_miles(kOrigin, 1.0, 1.0), 1.0).size(), 1);
}

TEST(BuildGrid, PartialColumnIsPadded) {
    const Grid g = build_grid(box_of_miles(kOrigin, 3.5, 1.0), 1.0);
    EXPECT_EQ(g.n_cols(), 4);
    EXPECT_EQ(g.n_rows(), 1);
    // A point in the padded half of the last column still locates there.
    EXPECT_EQ(g.locate(Point{3.25, 0.5}), 3);
    for (const auto& c : g.cells()) EXPECT_EQ(g.locate(c.centroid), c.id);
}

TEST(BuildGrid, RowMajorIds) {
    const Grid g(kOrigin, 3, 4, 0.5);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            const Cell& cell = g.cell(r * 4 + c);
            EXPECT_EQ(cell.row, r);
            EXPECT_EQ(cell.col, c);
        }
    }
}

TEST(BuildGrid, DegenerateBoxThrows) {
    EXPECT_THROW(build_grid({36.0, -86.0, 36.0, -85.0}, 1.0), Error);
    EXPECT_THROW(build_grid({36.0, -86.0, 35.0, -85.0}, 1.0), Error);
    EXPECT_THROW(build_grid(box_of_miles(kOrigin, 1.0, 1.0), 0.0), Error);
}

TEST(Locate, CentroidMapsToItsCell) {
    const Grid g(kOrigin, 5, 7, 1.0);
    for (const auto& c : g.cells()) {
        EXPECT_EQ(g.locate(c.centroid), c.id);
        EXPECT_EQ(g.locate(c.center), c.id);
    }
}

TEST(Locate, SharedCornerGoesToLowestCell) {
    const Grid g(kOrigin, 3, 3, 1.0);
    // Corner shared by cells (0,0), (0,1), (1,0), (1,1).
    EXPECT_EQ(g.locate(Point{1.0, 1.0}), g.id_of(0, 0));
    EXPECT_EQ(g.locate(Point{2.0, 1.0}), g.id_of(0, 1));
    EXPECT_EQ(g.locate(Point{0.0, 0.0}), g.id_of(0, 0));
    EXPECT_EQ(g.locate(Point{3.0, 3.0}), g.id_of(2, 2));
}

TEST(Locate, PointEastOfOrigin) {
    const Grid g(kOrigin, 3, 3, 1.0);
    const LatLon p = g.projection().to_geo({0.4, 0.0});
    EXPECT_EQ(g.locate(p), g.id_of(0, 0));
}

TEST(Locate, OutsideThrowsWithPoint) {
    const Grid g(kOrigin, 2, 2, 1.0);
    try {
        g.locate(Point{2.5, 0.5});
        FAIL() << "expected OutOfGridError";
    } catch (const OutOfGridError& e) {
        EXPECT_DOUBLE_EQ(e.point.x, 2.5);
        EXPECT_DOUBLE_EQ(e.point.y, 0.5);
    }
    EXPECT_THROW(g.locate(Point{-0.1, 0.5}), OutOfGridError);
}

TEST(Projection, RoundTrip) {
    const Projection p(kOrigin);
    const Point q{3.25, -1.5};
    const Point back = p.to_plane(p.to_geo(q));
    EXPECT_NEAR(back.x, q.x, 1e-9);
    EXPECT_NEAR(back.y, q.y, 1e-9);
    // One degree of latitude is about 69.1 miles.
    EXPECT_NEAR(p.miles_per_deg_lat(), 69.09, 0.01);
}

TEST(KMeans, SeparatedBlobs) {
    Rng rng(3);
    std::vector<Point> pts;
    for (int i = 0; i < 50; ++i) pts.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    for (int i = 0; i < 50; ++i) pts.push_back({20 + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    const KMeansResult r = kmeans(pts, 2, 11);
    for (int i = 1; i < 50; ++i) EXPECT_EQ(r.assignment[i], r.assignment[0]);
    for (int i = 51; i < 100; ++i) EXPECT_EQ(r.assignment[i], r.assignment[50]);
    EXPECT_NE(r.assignment[0], r.assignment[50]);
}

TEST(KMeans, SingleClusterCenterIsCentroid) {
    const std::vector<Point> pts = {{0, 0}, {2, 0}, {4, 3}, {2, 5}};
    const KMeansResult r = kmeans(pts, 1, 5);
    ASSERT_EQ(r.centers.size(), 1u);
    EXPECT_DOUBLE_EQ(r.centers[0].x, 2.0);
    EXPECT_DOUBLE_EQ(r.centers[0].y, 2.0);
    for (int a : r.assignment) EXPECT_EQ(a, 0);
}

TEST(KMeans, UnitSquareMatchesBestPartition) {
    const std::vector<Point> pts = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    // Oracle: the smallest SSE over every 2-partition.
    double best = kInf;
    for (int mask = 1; mask < 15; ++mask) {
        double sse = 0.0;
        for (int side = 0; side < 2; ++side) {
            double sx = 0, sy = 0;
            int n = 0;
            for (int i = 0; i < 4; ++i)
                if (((mask >> i) & 1) == side) sx += pts[i].x, sy += pts[i].y, ++n;
            for (int i = 0; i < 4; ++i)
                if (((mask >> i) & 1) == side) sse += squared_distance(pts[i], {sx / n, sy / n});
        }
        best = std::min(best, sse);
    }
    EXPECT_DOUBLE_EQ(best, 1.0);
    const KMeansResult r = kmeans(pts, 2, 7, KMeansOptions{300, 1e-9, 10});
    EXPECT_NEAR(r.sse, best, 1e-12);
    // Each cluster holds two adjacent corners.
    for (int c = 0; c < 2; ++c) {
        std::vector<Point> members;
        for (int i = 0; i < 4; ++i)
            if (r.assignment[i] == c) members.push_back(pts[i]);
        ASSERT_EQ(members.size(), 2u);
        EXPECT_DOUBLE_EQ(distance(members[0], members[1]), 1.0);
        double within = 0.0;
        for (const Point& m : members) within += squared_distance(m, r.centers[c]);
        EXPECT_NEAR(within, 0.5, 1e-12);
    }
}

TEST(KMeans, TooManyClustersThrows) {
    const std::vector<Point> pts = {{0, 0}, {0, 0}, {1, 1}};
    EXPECT_THROW(kmeans(pts, 3, 1), Error);
    EXPECT_THROW(kmeans(pts, 0, 1), Error);
    EXPECT_NO_THROW(kmeans(pts, 2, 1));
}

TEST(KMeans, SseNeverIncreases) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        std::vector<Point> pts;
        for (int i = 0; i < 80; ++i) pts.push_back({rng.uniform(0, 10), rng.uniform(0, 10)});
        const KMeansResult r = kmeans(pts, 4, seed);
        for (std::size_t i = 1; i < r.sse_history.size(); ++i) {
            EXPECT_LE(r.sse_history[i], r.sse_history[i - 1] + 1e-9) << "seed " << seed;
        }
    }
}

TEST(KMeans, DeterministicForSeed) {
    Rng rng(9);
    std::vector<Point> pts;
    for (int i = 0; i < 60; ++i) pts.push_back({rng.uniform(0, 5), rng.uniform(0, 5)});
    const KMeansResult a = kmeans(pts, 3, 42);
    const KMeansResult b = kmeans(pts, 3, 42);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_EQ(a.sse, b.sse);
}

TEST(Segment, SingleRegionCoversGrid) {
    const Grid g(kOrigin, 4, 4, 1.0);
    const std::vector<Point> pts = {{0.5, 0.5}, {2.5, 3.5}, {1.2, 2.2}};
    const std::vector<Depot> depots = {{0, 5, 1}, {1, 15, 1}};
    const Segmentation s = segment_regions(g, pts, depots, 1, 3);
    ASSERT_EQ(s.regions.size(), 1u);
    EXPECT_EQ(s.regions[0].cell_ids.size(), 16u);
    EXPECT_EQ(s.regions[0].depot_ids, (std::vector<DepotId>{0, 1}));
    EXPECT_TRUE(s.warnings.empty());
}

TEST(Segment, MajorityVote) {
    // Cell 0 holds three points of the western cluster and one point that
    // k-means gives to the eastern cluster; the cell follows the majority.
    const Grid g(kOrigin, 1, 2, 1.0);
    std::vector<Point> pts = {{0.1, 0.5}, {0.1, 0.5}, {0.1, 0.5}, {0.95, 0.5}};
    for (int i = 0; i < 20; ++i) pts.push_back({1.2, 0.5});
    const Segmentation s = segment_regions(g, pts, {}, 2, 1);
    ASSERT_EQ(s.regions.size(), 2u);
    EXPECT_NE(s.region_of_cell(0), s.region_of_cell(1));
    const KMeansResult km = kmeans(pts, 2, 1, KMeansOptions{300, 1e-6, 10});
    EXPECT_NE(km.assignment[3], km.assignment[0]);
    EXPECT_EQ(km.assignment[3], km.assignment[4]);
}

TEST(Segment, TwoBlobsTwoDepots) {
    const Grid g(kOrigin, 6, 6, 1.0);
    Rng rng(4);
    std::vector<Point> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)});
    for (int i = 0; i < 40; ++i) pts.push_back({rng.uniform(4.0, 6.0), rng.uniform(4.0, 6.0)});
    const std::vector<Depot> depots = {{0, g.id_of(0, 0), 1}, {1, g.id_of(5, 5), 1}};
    const Segmentation s = segment_regions(g, pts, depots, 2, 8);
    ASSERT_EQ(s.regions.size(), 2u);
    EXPECT_NE(s.depot_region.at(0), s.depot_region.at(1));
    for (const auto& r : s.regions) EXPECT_EQ(r.depot_ids.size(), 1u);
    // Exhaustive check: every blob cell sits with its blob's depot.
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) EXPECT_EQ(s.region_of_cell(g.id_of(r, c)), s.depot_region.at(0));
    for (int r = 4; r < 6; ++r)
        for (int c = 4; c < 6; ++c) EXPECT_EQ(s.region_of_cell(g.id_of(r, c)), s.depot_region.at(1));
}

TEST(Segment, RegionWithoutDepotWarns) {
    const Grid g(kOrigin, 1, 10, 1.0);
    std::vector<Point> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({0.5, 0.5});
    for (int i = 0; i < 10; ++i) pts.push_back({9.5, 0.5});
    const std::vector<Depot> depots = {{0, 0, 1}};
    const Segmentation s = segment_regions(g, pts, depots, 2, 1);
    ASSERT_EQ(s.regions.size(), 2u);
    EXPECT_FALSE(s.warnings.empty());
}

TEST(Segment, Errors) {
    const Grid g(kOrigin, 2, 2, 1.0);
    EXPECT_THROW(segment_regions(g, std::vector<Point>{}, {}, 1, 1), Error);
    EXPECT_THROW(segment_regions(g, std::vector<Point>{{0.5, 0.5}}, {}, 0, 1), Error);
}

TEST(Segment, PartitionAndDeterminism) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const Grid g(kOrigin, 8, 8, 1.0);
        Rng rng(seed);
        std::vector<Point> pts;
        for (int i = 0; i < 100; ++i) pts.push_back({rng.uniform(0, 8), rng.uniform(0, 8)});
        std::vector<Depot> depots;
        for (int d = 0; d < 6; ++d) depots.push_back({d, static_cast<CellId>(rng.below(64)), 1});
        const int k = 1 + static_cast<int>(seed % 5);
        const Segmentation s = segment_regions(g, pts, depots, k, seed);
        std::set<CellId> seen;
        for (std::size_t i = 0; i < s.regions.size(); ++i) {
            EXPECT_EQ(s.regions[i].id, static_cast<RegionId>(i));
            for (CellId c : s.regions[i].cell_ids) {
                EXPECT_TRUE(seen.insert(c).second) << "cell in two regions";
                EXPECT_EQ(s.region_of_cell(c), s.regions[i].id);
            }
        }
        EXPECT_EQ(seen.size(), 64u);
        for (const auto& d : depots) EXPECT_EQ(s.depot_region.at(d.id), s.region_of_cell(d.cell));
        const Segmentation again = segment_regions(g, pts, depots, k, seed);
        EXPECT_EQ(again.cell_region, s.cell_region);
    }
}
