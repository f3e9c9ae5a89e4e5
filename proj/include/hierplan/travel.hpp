#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "hierplan/core.hpp"
#include "hierplan/spatial.hpp"

namespace hierplan {

class MissingTravelPairError : public Error {
public:
    MissingTravelPairError(CellId a, CellId b)
        : Error(concat("travel table has no entry for pair (", a, ", ", b, ")")), from(a), to(b) {}

    CellId from;
    CellId to;
};

// Cell-to-cell travel times in seconds. Both variants keep a dense table; the
// Euclidean variant fills it from centroid distances, the lookup variant from
// an externally computed table (missing pairs stay NaN and are rejected on
// query).
class TravelModel {
public:
    enum class Kind { euclidean, lookup };

    static TravelModel euclidean(std::shared_ptr<const Grid> grid, double speed_mph) {
        if (!(speed_mph > 0.0)) throw Error("travel speed must be positive");
        TravelModel m(std::move(grid), Kind::euclidean);
        m.speed_mph_ = speed_mph;
        const int n = m.grid_->size();
        for (CellId a = 0; a < n; ++a)
            for (CellId b = 0; b < n; ++b)
                m.table_[m.index(a, b)] = distance(m.grid_->center(a), m.grid_->center(b)) / speed_mph * 3600.0;
        return m;
    }

    // `seconds` is row-major [from * n + to]; NaN marks a missing pair.
    static TravelModel lookup(std::shared_ptr<const Grid> grid, std::vector<double> seconds) {
        TravelModel m(std::move(grid), Kind::lookup);
        const std::size_t n = static_cast<std::size_t>(m.grid_->size());
        if (seconds.size() != n * n) throw Error("travel table size does not match the grid");
        for (double s : seconds)
            if (s < 0.0) throw Error("travel table entries must be non-negative");
        m.table_ = std::move(seconds);
        return m;
    }

    Kind kind() const { return kind_; }
    double speed_mph() const { return speed_mph_; }
    const Grid& grid() const { return *grid_; }
    std::shared_ptr<const Grid> grid_ptr() const { return grid_; }

    double time_s(CellId from, CellId to) const {
        check(from);
        check(to);
        if (from == to) return 0.0;
        const double t = table_[index(from, to)];
        if (std::isnan(t)) throw MissingTravelPairError(from, to);
        return t;
    }

    // Cell occupied after `elapsed` seconds on the straight segment between
    // the two centroids. Lookup tables carry no geometry, so the lookup
    // variant snaps that point to the nearest centroid.
    CellId interpolate(CellId from, CellId to, double elapsed) const {
        const double total = time_s(from, to);
        if (elapsed < 0.0 || elapsed > total + 1e-9) {
            throw Error(concat("elapsed ", elapsed, " s outside [0, ", total, "] s between cells ", from, " and ", to));
        }
        if (elapsed <= 0.0 || total <= 0.0) return from;
        if (elapsed >= total) return to;
        const double f = elapsed / total;
        const Point a = grid_->center(from);
        const Point b = grid_->center(to);
        const Point p{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
        if (kind_ == Kind::euclidean) return grid_->locate(p);
        CellId best = from;
        double best_d = kInf;
        for (const auto& c : grid_->cells()) {
            const double d = squared_distance(p, c.center);
            if (d < best_d) {
                best_d = d;
                best = c.id;
            }
        }
        return best;
    }

private:
    TravelModel(std::shared_ptr<const Grid> grid, Kind kind) : grid_(std::move(grid)), kind_(kind) {
        if (!grid_) throw Error("travel model needs a grid");
        const std::size_t n = static_cast<std::size_t>(grid_->size());
        table_.assign(n * n, 0.0);
    }

    std::size_t index(CellId a, CellId b) const {
        return static_cast<std::size_t>(a) * static_cast<std::size_t>(grid_->size()) + static_cast<std::size_t>(b);
    }

    void check(CellId c) const {
        if (!grid_->valid(c)) throw Error(concat("unknown cell id ", c));
    }

    std::shared_ptr<const Grid> grid_;
    Kind kind_;
    double speed_mph_ = 0.0;
    std::vector<double> table_;
};

}  // namespace hierplan
