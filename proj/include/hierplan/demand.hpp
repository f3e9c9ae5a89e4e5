#pragma once

#include <algorithm>
#include <queue>
#include <span>
#include <vector>

#include "hierplan/core.hpp"
#include "hierplan/spatial.hpp"

namespace hierplan {

// An observed historical incident. `time` is seconds since the Unix epoch.
struct IncidentRecord {
    double time = 0.0;
    LatLon where;
    CellId cell = 0;
};

// Homogeneous Poisson arrival rate per cell, in incidents per minute.
struct PoissonModel {
    std::vector<double> rate_per_min;
    double fitted_over_minutes = 0.0;

    double rate(CellId c) const { return rate_per_min.at(static_cast<std::size_t>(c)); }

    double total_rate() const {
        double s = 0.0;
        for (double r : rate_per_min) s += r;
        return s;
    }

    // Same model with every cell outside `region` zeroed.
    PoissonModel restricted_to(const Region& region) const {
        PoissonModel m;
        m.fitted_over_minutes = fitted_over_minutes;
        m.rate_per_min.assign(rate_per_min.size(), 0.0);
        for (CellId c : region.cell_ids) m.rate_per_min.at(static_cast<std::size_t>(c)) = rate(c);
        return m;
    }
};

struct IncidentChain {
    std::vector<Incident> incidents;
    double t_start = 0.0;
    double t_end = 0.0;
};

// A rate multiplier applied to a set of cells over [start, end) seconds.
struct Spike {
    std::vector<CellId> cells;
    double start = 0.0;
    double end = 0.0;
    double multiplier = 1.0;
};

using SpikeSchedule = std::vector<Spike>;

inline void validate(const SpikeSchedule& spikes) {
    for (const auto& s : spikes) {
        if (!(s.multiplier >= 1.0)) throw Error(concat("spike multiplier ", s.multiplier, " is below 1"));
        if (!(s.end > s.start)) throw Error(concat("spike window [", s.start, ", ", s.end, ") is empty"));
    }
}

// Maximum-likelihood fit: incidents per cell divided by the observation window.
inline PoissonModel fit_poisson(std::span<const IncidentRecord> records, const Grid& grid, double observed_minutes) {
    if (!(observed_minutes > 0.0)) throw Error("observation window must be positive");
    PoissonModel m;
    m.fitted_over_minutes = observed_minutes;
    m.rate_per_min.assign(static_cast<std::size_t>(grid.size()), 0.0);
    std::vector<long> counts(static_cast<std::size_t>(grid.size()), 0);
    for (const auto& r : records) {
        if (!grid.valid(r.cell)) throw Error(concat("incident record in unknown cell ", r.cell));
        ++counts[static_cast<std::size_t>(r.cell)];
    }
    for (std::size_t i = 0; i < counts.size(); ++i) m.rate_per_min[i] = counts[i] / observed_minutes;
    return m;
}

inline double region_rate(const PoissonModel& model, const Region& region) {
    double s = 0.0;
    for (CellId c : region.cell_ids) s += model.rate(c);
    return s;
}

// Product of all spike multipliers covering cell `c` at time `t`.
inline double spike_multiplier(const SpikeSchedule& spikes, CellId c, double t) {
    double m = 1.0;
    for (const auto& s : spikes) {
        if (t >= s.start && t < s.end && std::find(s.cells.begin(), s.cells.end(), c) != s.cells.end()) {
            m *= s.multiplier;
        }
    }
    return m;
}

// Cell rates in effect at time `t`, spikes included.
inline PoissonModel effective_model(const PoissonModel& model, const SpikeSchedule& spikes, double t) {
    PoissonModel m = model;
    if (spikes.empty()) return m;
    for (std::size_t c = 0; c < m.rate_per_min.size(); ++c) {
        m.rate_per_min[c] *= spike_multiplier(spikes, static_cast<CellId>(c), t);
    }
    return m;
}

namespace detail {

struct RateSegment {
    double start;
    double end;
    double rate_per_s;
};

inline std::vector<RateSegment> rate_segments(double base_per_min, CellId cell, double t0, double t1,
                                              const SpikeSchedule& spikes) {
    std::vector<double> cuts{t0, t1};
    for (const auto& s : spikes) {
        if (std::find(s.cells.begin(), s.cells.end(), cell) == s.cells.end()) continue;
        if (s.start > t0 && s.start < t1) cuts.push_back(s.start);
        if (s.end > t0 && s.end < t1) cuts.push_back(s.end);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<RateSegment> segs;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
        segs.push_back({cuts[i], cuts[i + 1], base_per_min / kSecondsPerMinute * spike_multiplier(spikes, cell, mid)});
    }
    return segs;
}

// Arrival times of one cell by time rescaling of unit-rate exponentials over a
// piecewise-constant intensity.
inline std::vector<double> sample_cell(const std::vector<RateSegment>& segs, Rng& rng) {
    std::vector<double> times;
    std::size_t seg = 0;
    double t = segs.empty() ? 0.0 : segs.front().start;
    while (seg < segs.size()) {
        double budget = rng.exponential(1.0);
        while (seg < segs.size()) {
            const auto& s = segs[seg];
            const double mass = (s.end - t) * s.rate_per_s;
            if (budget < mass) {
                t += budget / s.rate_per_s;
                times.push_back(t);
                break;
            }
            budget -= mass;
            ++seg;
            if (seg < segs.size()) t = segs[seg].start;
        }
    }
    return times;
}

}  // namespace detail

// Samples every cell from its own stream keyed by (seed, cell), then merges
// the per-cell arrivals into one time-ordered chain. Coincident times are
// separated by the smallest representable step so times strictly increase.
inline IncidentChain sample_chain(const PoissonModel& model, double t0, double t1, std::uint64_t seed,
                                  const SpikeSchedule& spikes = {}) {
    if (!(t1 > t0)) throw Error(concat("sampling horizon [", t0, ", ", t1, ") is empty"));
    IncidentChain chain;
    chain.t_start = t0;
    chain.t_end = t1;

    std::vector<std::vector<double>> per_cell(model.rate_per_min.size());
    for (std::size_t c = 0; c < model.rate_per_min.size(); ++c) {
        const double base = model.rate_per_min[c];
        if (!(base > 0.0)) continue;
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        per_cell[c] = detail::sample_cell(detail::rate_segments(base, static_cast<CellId>(c), t0, t1, spikes), rng);
    }

    using Head = std::pair<double, std::size_t>;  // (time, cell)
    std::priority_queue<Head, std::vector<Head>, std::greater<>> heap;
    std::vector<std::size_t> pos(per_cell.size(), 0);
    for (std::size_t c = 0; c < per_cell.size(); ++c)
        if (!per_cell[c].empty()) heap.emplace(per_cell[c][0], c);

    double last = -kInf;
    while (!heap.empty()) {
        auto [t, c] = heap.top();
        heap.pop();
        if (t <= last) t = std::nextafter(last, kInf);
        last = t;
        chain.incidents.push_back({static_cast<IncidentId>(chain.incidents.size()), t, static_cast<CellId>(c)});
        if (++pos[c] < per_cell[c].size()) heap.emplace(per_cell[c][pos[c]], c);
    }
    return chain;
}

}  // namespace hierplan
