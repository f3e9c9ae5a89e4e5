#pragma once

#include <bit>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hierplan/demand.hpp"
#include "hierplan/highlevel.hpp"
#include "hierplan/lowlevel.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/waittime.hpp"

namespace hierplan {

// One planning invocation as seen from outside.
struct PlanningRecord {
    double time = 0.0;
    PlanningTrigger::Kind trigger = PlanningTrigger::Kind::incident;
    // Empty for the low-level-only policy.
    std::map<RegionId, int> allocation;
    // Available agents per region just before rebalancing.
    std::map<RegionId, int> counts_before;
    std::vector<Move> moves;
    std::vector<RegionPlan> plans;
    std::vector<std::string> warnings;
};

struct PlanningLog {
    std::vector<PlanningRecord> records;
};

struct PlannerSetup {
    const Segmentation* segmentation = nullptr;
    PoissonModel model;
    // Spikes known to the planner. Chains and current rates include them.
    SpikeSchedule spikes;
    LowLevelOptions lowlevel;
    // Per-agent service rate, per minute.
    double eta = 0.05;
    std::shared_ptr<const WaitEstimator> estimator;
    std::uint64_t seed = 0;
    // Optional sink for planner trace lines (one JSON object per line).
    std::function<void(const std::string&)> trace;
};

inline std::string_view to_string(PlanningTrigger::Kind k) {
    switch (k) {
        case PlanningTrigger::Kind::incident: return "incident";
        case PlanningTrigger::Kind::tick: return "tick";
        case PlanningTrigger::Kind::failure: return "failure";
    }
    return "?";
}

inline nlohmann::json action_json(const AllocationAction& a) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [agent, depot] : a.assignment) j.push_back({{"agent", agent}, {"depot", depot}});
    return j;
}

namespace detail {

inline std::uint64_t trigger_seed(std::uint64_t seed, const PlanningTrigger& t) {
    return derive_seed(seed, std::bit_cast<std::uint64_t>(t.time), static_cast<std::uint64_t>(t.kind));
}

inline void run_lowlevel(const PlannerSetup& setup, const Simulator& sim, SimState& s, const PlanningTrigger& t,
                         PlanningRecord& rec) {
    const auto& regions = setup.segmentation->regions;
    RegionPlanResult r =
        plan_regions(sim, regions, s, setup.model, setup.spikes, setup.lowlevel, trigger_seed(setup.seed, t));
    for (auto& w : r.warnings) rec.warnings.push_back(std::move(w));
    for (const auto& plan : r.plans) {
        if (!plan.action.assignment.empty()) sim.assign_depots(s, plan.action.assignment);
        if (setup.trace && !plan.scores.empty()) {
            const nlohmann::json line = {{"time", t.time},
                                         {"region", plan.region},
                                         {"action", action_json(plan.action)},
                                         {"mean_score", plan.mean_score},
                                         {"n_trees", plan.n_trees},
                                         {"iterations", setup.lowlevel.iterations}};
            setup.trace(line.dump());
        }
    }
    rec.plans = std::move(r.plans);
}

}  // namespace detail

// Region agent counts stay fixed; each region re-places its own free agents.
inline AllocationPolicy lowlevel_policy(std::shared_ptr<const PlannerSetup> setup,
                                        std::shared_ptr<PlanningLog> log = nullptr) {
    if (!setup || !setup->segmentation) throw Error("planner needs a segmentation");
    return [setup, log](const Simulator& sim, SimState& s, const PlanningTrigger& t) {
        PlanningRecord rec;
        rec.time = t.time;
        rec.trigger = t.kind;
        detail::run_lowlevel(*setup, sim, s, t, rec);
        if (log) log->records.push_back(std::move(rec));
    };
}

// Per-region demand used by the high-level planner at time t: current
// arrival rates, and depot capacity minus slots pinned by unavailable agents.
inline std::vector<RegionDemand> region_demand(const Simulator& sim, const SimState& s, const Segmentation& seg,
                                               const PoissonModel& model, const SpikeSchedule& spikes, double t) {
    const PoissonModel now = effective_model(model, spikes, t);
    std::vector<RegionDemand> out;
    for (const auto& r : seg.regions) {
        RegionDemand d;
        d.id = r.id;
        d.gamma = region_rate(now, r);
        for (DepotId dep : r.depot_ids) {
            d.capacity += sim.depot(dep).capacity;
            for (const auto& a : s.agents)
                if (!a.available && a.depot == dep) --d.capacity;
        }
        d.capacity = std::max(0, d.capacity);
        out.push_back(d);
    }
    return out;
}

// Allocate agents across regions, move agents between regions to match, then
// plan depots inside each region.
inline AllocationPolicy hierarchical_policy(std::shared_ptr<const PlannerSetup> setup,
                                            std::shared_ptr<PlanningLog> log = nullptr) {
    if (!setup || !setup->segmentation) throw Error("planner needs a segmentation");
    if (!setup->estimator) throw Error("hierarchical planner needs a wait estimator");
    return [setup, log](const Simulator& sim, SimState& s, const PlanningTrigger& t) {
        PlanningRecord rec;
        rec.time = t.time;
        rec.trigger = t.kind;
        int available = 0;
        for (const auto& a : s.agents)
            if (a.available) ++available;
        if (available > 0) {
            const auto demand = region_demand(sim, s, *setup->segmentation, setup->model, setup->spikes, t.time);
            const Allocation alloc = allocate(demand, setup->eta, *setup->estimator, available);
            rec.allocation = alloc.p;
            rec.counts_before = region_counts(s);
            rec.moves = rebalance(sim, s, *setup->segmentation, alloc);
            apply_moves(sim, s, rec.moves);
        }
        detail::run_lowlevel(*setup, sim, s, t, rec);
        if (log) log->records.push_back(std::move(rec));
    };
}

}  // namespace hierplan
