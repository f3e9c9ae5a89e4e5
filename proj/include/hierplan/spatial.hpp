#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hierplan/core.hpp"

namespace hierplan {

struct BoundingBox {
    double lat_min = 0.0;
    double lon_min = 0.0;
    double lat_max = 0.0;
    double lon_max = 0.0;
};

// Local equirectangular projection anchored at a fixed origin. Adequate at
// city scale, where curvature error is far below a cell width.
class Projection {
public:
    static constexpr double kEarthRadiusMiles = 3958.8;

    Projection() : Projection(LatLon{}) {}

    explicit Projection(LatLon origin)
        : origin_(origin),
          miles_per_deg_lat_(kEarthRadiusMiles * std::numbers::pi / 180.0),
          miles_per_deg_lon_(miles_per_deg_lat_ * std::cos(origin.lat * std::numbers::pi / 180.0)) {}

    Point to_plane(LatLon p) const {
        return {(p.lon - origin_.lon) * miles_per_deg_lon_, (p.lat - origin_.lat) * miles_per_deg_lat_};
    }

    LatLon to_geo(Point p) const {
        return {origin_.lat + p.y / miles_per_deg_lat_, origin_.lon + p.x / miles_per_deg_lon_};
    }

    LatLon origin() const { return origin_; }
    double miles_per_deg_lat() const { return miles_per_deg_lat_; }
    double miles_per_deg_lon() const { return miles_per_deg_lon_; }

private:
    LatLon origin_;
    double miles_per_deg_lat_;
    double miles_per_deg_lon_;
};

struct Cell {
    CellId id = 0;
    int row = 0;
    int col = 0;
    Point center;
    LatLon centroid;
};

class OutOfGridError : public Error {
public:
    OutOfGridError(Point p, double width, double height)
        : Error(concat("point (", p.x, ", ", p.y, ") mi lies outside the grid [0, ", width, "] x [0, ", height,
                       "]")),
          point(p) {}

    Point point;
};

// Row-major grid of square cells. Row 0 is the southern edge, column 0 the
// western edge; cell id = row * n_cols + col.
class Grid {
public:
    Grid() = default;

    Grid(LatLon origin, int n_rows, int n_cols, double cell_size_miles)
        : projection_(origin), n_rows_(n_rows), n_cols_(n_cols), cell_size_(cell_size_miles) {
        if (n_rows <= 0 || n_cols <= 0) throw Error("grid needs at least one row and one column");
        if (!(cell_size_miles > 0.0)) throw Error("cell size must be positive");
        cells_.reserve(static_cast<std::size_t>(n_rows) * n_cols);
        for (int r = 0; r < n_rows; ++r) {
            for (int c = 0; c < n_cols; ++c) {
                Cell cell;
                cell.id = r * n_cols + c;
                cell.row = r;
                cell.col = c;
                cell.center = {(c + 0.5) * cell_size_, (r + 0.5) * cell_size_};
                cell.centroid = projection_.to_geo(cell.center);
                cells_.push_back(cell);
            }
        }
    }

    int n_rows() const { return n_rows_; }
    int n_cols() const { return n_cols_; }
    int size() const { return static_cast<int>(cells_.size()); }
    double cell_size_miles() const { return cell_size_; }
    double width_miles() const { return n_cols_ * cell_size_; }
    double height_miles() const { return n_rows_ * cell_size_; }
    LatLon origin() const { return projection_.origin(); }
    const Projection& projection() const { return projection_; }
    std::span<const Cell> cells() const { return cells_; }

    bool valid(CellId id) const { return id >= 0 && id < size(); }

    const Cell& cell(CellId id) const {
        if (!valid(id)) throw Error(concat("unknown cell id ", id));
        return cells_[static_cast<std::size_t>(id)];
    }

    Point center(CellId id) const { return cell(id).center; }

    CellId id_of(int row, int col) const { return row * n_cols_ + col; }

    // Boundary points belong to the cell with the lower (row, col).
    CellId locate(Point p) const {
        constexpr double eps = 1e-9;
        if (!(p.x >= -eps && p.y >= -eps && p.x <= width_miles() + eps && p.y <= height_miles() + eps)) {
            throw OutOfGridError(p, width_miles(), height_miles());
        }
        const int col = std::clamp(index_along(p.x), 0, n_cols_ - 1);
        const int row = std::clamp(index_along(p.y), 0, n_rows_ - 1);
        return id_of(row, col);
    }

    CellId locate(LatLon p) const { return locate(projection_.to_plane(p)); }

private:
    int index_along(double coord) const {
        double q = coord / cell_size_;
        const double r = std::round(q);
        if (std::abs(q - r) < 1e-9) q = r;
        return static_cast<int>(std::ceil(q)) - 1;
    }

    Projection projection_;
    int n_rows_ = 0;
    int n_cols_ = 0;
    double cell_size_ = 1.0;
    std::vector<Cell> cells_;
};

// Tiles the box with square cells anchored at its south-west corner. A partial
// last row or column is padded to a full cell.
inline Grid build_grid(const BoundingBox& box, double cell_size_miles) {
    if (!(cell_size_miles > 0.0)) throw Error("cell size must be positive");
    if (!(box.lat_max > box.lat_min) || !(box.lon_max > box.lon_min)) {
        throw Error(concat("degenerate bounding box [", box.lat_min, ", ", box.lat_max, "] x [", box.lon_min, ", ",
                           box.lon_max, "]"));
    }
    const LatLon origin{box.lat_min, box.lon_min};
    const Projection proj(origin);
    const Point corner = proj.to_plane({box.lat_max, box.lon_max});
    const auto count = [&](double extent) {
        return std::max(1, static_cast<int>(std::ceil(extent / cell_size_miles - 1e-9)));
    };
    return Grid(origin, count(corner.y), count(corner.x), cell_size_miles);
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansOptions {
    int max_iter = 300;
    double tol = 1e-6;
    // Independent restarts; the run with the lowest final SSE wins.
    int n_init = 1;
};

struct KMeansResult {
    std::vector<Point> centers;
    std::vector<int> assignment;
    double sse = 0.0;
    // SSE after each assignment step of the winning run.
    std::vector<double> sse_history;
    int iterations = 0;
};

namespace detail {

inline int nearest_center(Point p, std::span<const Point> centers) {
    int best = 0;
    double best_d = kInf;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = squared_distance(p, centers[c]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline std::size_t count_distinct(std::span<const Point> points) {
    std::vector<std::pair<double, double>> v;
    v.reserve(points.size());
    for (const auto& p : points) v.emplace_back(p.x, p.y);
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

inline KMeansResult kmeans_single(std::span<const Point> points, int k, Rng& rng, const KMeansOptions& opt) {
    const std::size_t n = points.size();
    KMeansResult res;

    // Centers drawn uniformly at random from the data, skipping duplicates.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    for (std::size_t i : order) {
        if (static_cast<int>(res.centers.size()) == k) break;
        if (std::find(res.centers.begin(), res.centers.end(), points[i]) == res.centers.end()) {
            res.centers.push_back(points[i]);
        }
    }

    res.assignment.assign(n, 0);
    std::vector<double> sx(k), sy(k);
    std::vector<int> cnt(k);
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            res.assignment[i] = nearest_center(points[i], res.centers);
            sse += squared_distance(points[i], res.centers[res.assignment[i]]);
        }

        std::fill(sx.begin(), sx.end(), 0.0);
        std::fill(sy.begin(), sy.end(), 0.0);
        std::fill(cnt.begin(), cnt.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = res.assignment[i];
            sx[c] += points[i].x;
            sy[c] += points[i].y;
            ++cnt[c];
        }

        // An empty cluster is re-seeded at the point farthest from its center.
        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            if (cnt[c] > 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = squared_distance(points[i], res.centers[res.assignment[i]]);
                if (d > far_d && cnt[res.assignment[i]] > 1) {
                    far_d = d;
                    far = i;
                }
            }
            const int old = res.assignment[far];
            sse -= far_d;
            sx[old] -= points[far].x;
            sy[old] -= points[far].y;
            --cnt[old];
            res.assignment[far] = c;
            sx[c] = points[far].x;
            sy[c] = points[far].y;
            cnt[c] = 1;
            reseeded = true;
        }
        res.sse_history.push_back(sse);
        res.sse = sse;
        res.iterations = iter + 1;

        double shift = 0.0;
        for (int c = 0; c < k; ++c) {
            const Point next{sx[c] / cnt[c], sy[c] / cnt[c]};
            shift = std::max(shift, distance(next, res.centers[c]));
            res.centers[c] = next;
        }
        if (shift < opt.tol && !reseeded) break;
    }

    // Final assignment against the final centers.
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        res.assignment[i] = nearest_center(points[i], res.centers);
        sse += squared_distance(points[i], res.centers[res.assignment[i]]);
    }
    res.sse_history.push_back(sse);
    res.sse = sse;
    return res;
}

}  // namespace detail

// Lloyd's algorithm in planar miles.
inline KMeansResult kmeans(std::span<const Point> points, int k, std::uint64_t seed, const KMeansOptions& opt = {}) {
    if (k < 1) throw Error("k-means needs k >= 1");
    if (opt.n_init < 1) throw Error("k-means needs n_init >= 1");
    const std::size_t distinct = detail::count_distinct(points);
    if (static_cast<std::size_t>(k) > distinct) {
        throw Error(concat("k-means: k = ", k, " exceeds the ", distinct, " distinct points"));
    }
    KMeansResult best;
    for (int run = 0; run < opt.n_init; ++run) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(run)));
        KMeansResult r = detail::kmeans_single(points, k, rng, opt);
        if (run == 0 || r.sse < best.sse) best = std::move(r);
    }
    return best;
}

inline KMeansResult kmeans(std::span<const Point> points, int k, std::uint64_t seed, int max_iter, double tol) {
    return kmeans(points, k, seed, KMeansOptions{max_iter, tol, 1});
}

// ---------------------------------------------------------------------------
// Region segmentation

struct Region {
    RegionId id = 0;
    std::vector<CellId> cell_ids;
    std::vector<DepotId> depot_ids;
};

struct Segmentation {
    std::vector<Region> regions;
    // Region of each grid cell, indexed by cell id.
    std::vector<RegionId> cell_region;
    std::map<DepotId, RegionId> depot_region;
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    RegionId region_of_cell(CellId c) const { return cell_region.at(static_cast<std::size_t>(c)); }

    const Region& region(RegionId id) const {
        for (const auto& r : regions)
            if (r.id == id) return r;
        throw Error(concat("unknown region id ", id));
    }
};

// Clusters incident locations with k-means, then gives each cell to the
// cluster holding most of its incidents (ties to the lower cluster id).
// Incident-free cells join the region of the nearest incident-bearing cell.
// Clusters that win no cell are dropped and the rest renumbered in cluster
// order, so region ids are always 0..m-1.
inline Segmentation segment_regions(const Grid& grid, std::span<const Point> incident_points,
                                    std::span<const Depot> depots, int k, std::uint64_t seed,
                                    KMeansOptions opt = {300, 1e-6, 10}) {
    if (k < 1) throw Error("segmentation needs k >= 1");
    if (incident_points.empty()) throw Error("segmentation needs at least one incident");

    const KMeansResult km = kmeans(incident_points, k, seed, opt);

    const int n_cells = grid.size();
    std::vector<std::vector<int>> votes(static_cast<std::size_t>(n_cells), std::vector<int>(k, 0));
    std::vector<bool> has_incident(static_cast<std::size_t>(n_cells), false);
    for (std::size_t i = 0; i < incident_points.size(); ++i) {
        const CellId c = grid.locate(incident_points[i]);
        ++votes[c][km.assignment[i]];
        has_incident[c] = true;
    }

    std::vector<int> cluster_of(static_cast<std::size_t>(n_cells), -1);
    for (CellId c = 0; c < n_cells; ++c) {
        if (!has_incident[c]) continue;
        const auto& v = votes[c];
        cluster_of[c] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    }
    for (CellId c = 0; c < n_cells; ++c) {
        if (has_incident[c]) continue;
        double best = kInf;
        for (CellId o = 0; o < n_cells; ++o) {
            if (!has_incident[o]) continue;
            const double d = squared_distance(grid.center(c), grid.center(o));
            if (d < best) {
                best = d;
                cluster_of[c] = cluster_of[o];
            }
        }
    }

    std::vector<int> region_of_cluster(k, -1);
    int next = 0;
    std::vector<bool> used(k, false);
    for (int cl : cluster_of) used[cl] = true;
    for (int cl = 0; cl < k; ++cl)
        if (used[cl]) region_of_cluster[cl] = next++;

    Segmentation seg;
    seg.k = k;
    seg.seed = seed;
    seg.regions.resize(static_cast<std::size_t>(next));
    for (int r = 0; r < next; ++r) seg.regions[r].id = r;
    seg.cell_region.resize(static_cast<std::size_t>(n_cells));
    for (CellId c = 0; c < n_cells; ++c) {
        const RegionId r = region_of_cluster[cluster_of[c]];
        seg.cell_region[c] = r;
        seg.regions[r].cell_ids.push_back(c);
    }
    if (next < k) {
        seg.warnings.push_back(concat(k - next, " cluster(s) won no cell; ", next, " regions produced"));
    }
    for (const auto& d : depots) {
        const RegionId r = seg.cell_region.at(static_cast<std::size_t>(d.cell));
        seg.depot_region[d.id] = r;
        seg.regions[r].depot_ids.push_back(d.id);
    }
    for (auto& r : seg.regions) {
        std::sort(r.depot_ids.begin(), r.depot_ids.end());
        if (r.depot_ids.empty()) {
            seg.warnings.push_back(concat("region ", r.id, " has no depots and cannot host agents"));
        }
    }
    return seg;
}

}  // namespace hierplan
