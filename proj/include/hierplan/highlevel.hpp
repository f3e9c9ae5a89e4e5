#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/waittime.hpp"

namespace hierplan {

struct RegionDemand {
    RegionId id = 0;
    double gamma = 0.0;  // arrivals per minute
    int capacity = 0;    // agents the region's depots can host
};

struct Allocation {
    std::map<RegionId, int> p;
    std::vector<std::string> warnings;

    int total() const {
        int s = 0;
        for (const auto& [r, n] : p) s += n;
        return s;
    }

    int at(RegionId r) const {
        auto it = p.find(r);
        return it == p.end() ? 0 : it->second;
    }
};

// Greedy agents-per-region allocation.
//
// Regions are visited in decreasing arrival rate (ties by id). Phase one
// hands agents to the current region until eta * p >= gamma, then moves on.
// Phase two gives every remaining agent to the region with the largest drop in
// estimated wait, w(p) - w(p + 1), ties to the earlier region in that order.
// Regions at capacity are skipped in both phases.
inline Allocation allocate(std::span<const RegionDemand> regions, double eta, const WaitEstimator& estimator,
                           int n_agents) {
    if (n_agents < 1) throw Error("allocation needs at least one agent");
    if (!(eta > 0.0)) throw Error("service rate must be positive");
    long capacity = 0;
    for (const auto& r : regions) capacity += std::max(0, r.capacity);
    if (capacity < n_agents) {
        throw Error(concat("total depot capacity ", capacity, " is below the ", n_agents, " agents to place"));
    }

    Allocation out;
    std::vector<RegionDemand> order;
    for (const auto& r : regions) {
        out.p[r.id] = 0;
        if (r.capacity > 0) {
            order.push_back(r);
        } else {
            out.warnings.push_back(concat("region ", r.id, " has no depot capacity and is skipped"));
        }
    }
    std::stable_sort(order.begin(), order.end(), [](const RegionDemand& a, const RegionDemand& b) {
        return a.gamma != b.gamma ? a.gamma > b.gamma : a.id < b.id;
    });

    const std::size_t m = order.size();
    std::vector<int> p(m, 0);
    int assigned = 0;
    std::size_t i = 0;
    while (assigned < n_agents && i < m) {
        if (p[i] >= order[i].capacity) {
            ++i;
            continue;
        }
        ++p[i];
        ++assigned;
        if (eta * p[i] >= order[i].gamma || p[i] >= order[i].capacity) ++i;
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (p[j] == 0) {
            out.warnings.push_back(concat("region ", order[j].id, " received no agents: too few agents to sustain every region"));
        } else if (eta * p[j] < order[j].gamma) {
            out.warnings.push_back(concat("region ", order[j].id, " is not sustained (", eta * p[j], " < ", order[j].gamma, ")"));
        }
    }

    while (assigned < n_agents) {
        std::ptrdiff_t best = -1;
        double best_j = -kInf;
        for (std::size_t j = 0; j < m; ++j) {
            if (p[j] >= order[j].capacity) continue;
            const double now = estimator.expected_wait_s(order[j].id, p[j], order[j].gamma);
            const double next = estimator.expected_wait_s(order[j].id, p[j] + 1, order[j].gamma);
            double gain;
            if (now == kInf) {
                gain = next == kInf ? std::numeric_limits<double>::max() : kInf;
            } else {
                gain = now - next;
            }
            if (best < 0 || gain > best_j) {
                best = static_cast<std::ptrdiff_t>(j);
                best_j = gain;
            }
        }
        ++p[static_cast<std::size_t>(best)];
        ++assigned;
    }
    for (std::size_t j = 0; j < m; ++j) out.p[order[j].id] = p[j];
    return out;
}

struct Move {
    AgentId agent = 0;
    RegionId from = -1;
    RegionId to = -1;
    DepotId depot = -1;
};

// Agents (available only) per region.
inline std::map<RegionId, int> region_counts(const SimState& s) {
    std::map<RegionId, int> counts;
    for (const auto& a : s.agents)
        if (a.available) ++counts[a.region];
    return counts;
}

// Cross-region moves turning the current per-region counts into `target`.
// Each deficit slot (regions in id order) is filled by the agent from a
// surplus region whose travel time to the nearest open depot of the gaining
// region is smallest; free agents are preferred over busy ones, and ties go to
// the lower agent id. Busy agents keep their task and relocate once free.
inline std::vector<Move> rebalance(const Simulator& sim, const SimState& s, const Segmentation& seg,
                                   const Allocation& target) {
    std::map<RegionId, int> counts = region_counts(s);
    std::map<DepotId, int> load = sim.depot_load(s);
    std::vector<Move> moves;
    std::vector<AgentId> moved;

    const auto surplus = [&](RegionId r) { return counts[r] > target.at(r); };

    for (const auto& region : seg.regions) {
        while (counts[region.id] < target.at(region.id)) {
            const AgentState* best = nullptr;
            DepotId best_depot = -1;
            double best_t = kInf;
            bool best_busy = true;
            for (const auto& a : s.agents) {
                if (!a.available || a.region == region.id || !surplus(a.region)) continue;
                if (std::find(moved.begin(), moved.end(), a.id) != moved.end()) continue;
                const CellId from = a.is_busy() ? a.destination : a.position;
                DepotId dep = -1;
                double dt = kInf;
                for (DepotId d : region.depot_ids) {
                    if (load[d] >= sim.depot(d).capacity) continue;
                    const double t = sim.travel().time_s(from, sim.depot(d).cell);
                    if (t < dt) {
                        dt = t;
                        dep = d;
                    }
                }
                if (dep < 0) continue;
                const bool busy = !a.is_free();
                const bool better = !best || (busy != best_busy ? !busy : (dt != best_t ? dt < best_t : a.id < best->id));
                if (better) {
                    best = &a;
                    best_depot = dep;
                    best_t = dt;
                    best_busy = busy;
                }
            }
            if (!best) break;
            moves.push_back({best->id, best->region, region.id, best_depot});
            moved.push_back(best->id);
            --counts[best->region];
            ++counts[region.id];
            if (best->depot >= 0) --load[best->depot];
            ++load[best_depot];
        }
    }
    return moves;
}

inline void apply_moves(const Simulator& sim, SimState& s, std::span<const Move> moves) {
    for (const auto& m : moves) {
        sim.assign_region(s, m.agent, m.to);
        sim.assign_depot(s, m.agent, m.depot);
    }
}

// Number of ways to place n_agents distinct agents on n_depots single-slot
// depots: n_depots! / (n_depots - n_agents)!.
inline boost::multiprecision::cpp_int action_space_size(int n_depots, int n_agents) {
    if (n_agents < 0 || n_depots < 0) throw Error("counts must be non-negative");
    if (n_agents > n_depots) throw Error(concat(n_agents, " agents cannot occupy ", n_depots, " depots"));
    boost::multiprecision::cpp_int r = 1;
    for (int k = n_depots - n_agents + 1; k <= n_depots; ++k) r *= k;
    return r;
}

}  // namespace hierplan
