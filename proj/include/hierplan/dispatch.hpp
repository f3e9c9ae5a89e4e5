#pragma once

#include <optional>
#include <vector>

#include "hierplan/sim.hpp"

namespace hierplan {

struct DispatchDecision {
    IncidentId incident = 0;
    // Empty when the incident stays queued.
    std::optional<AgentId> agent;
    double travel_s = 0.0;
};

// Nearest free agent by travel time from its current position, regardless of
// region; ties go to the lower agent id.
inline DispatchDecision greedy_dispatch(const Simulator& sim, const SimState& s, const Incident& incident) {
    DispatchDecision d;
    d.incident = incident.id;
    double best = kInf;
    for (const auto& a : s.agents) {
        if (!a.is_free()) continue;
        const double t = sim.travel().time_s(a.position, incident.cell);
        if (t < best || (t == best && d.agent && a.id < *d.agent)) {
            best = t;
            d.agent = a.id;
        }
    }
    if (d.agent) d.travel_s = best;
    return d;
}

inline const DispatchPolicy& greedy_policy() {
    static const DispatchPolicy policy = [](const Simulator& sim, const SimState& s,
                                            const Incident& inc) -> std::optional<AgentId> {
        return greedy_dispatch(sim, s, inc).agent;
    };
    return policy;
}

// Serves the FIFO head with the nearest free agent until either the queue or
// the free agents run out.
inline std::vector<DispatchDecision> drain_queue(const Simulator& sim, SimState& s,
                                                 std::vector<ResponseRecord>* records = nullptr) {
    std::vector<DispatchDecision> out;
    while (!s.pending.empty()) {
        DispatchDecision d = greedy_dispatch(sim, s, s.pending.front());
        if (!d.agent) break;
        const DispatchOutcome o = sim.dispatch(s, *d.agent, d.incident);
        if (records) records->push_back(o.record);
        out.push_back(d);
    }
    return out;
}

}  // namespace hierplan
