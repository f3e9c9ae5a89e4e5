#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "hierplan/core.hpp"
#include "hierplan/demand.hpp"
#include "hierplan/travel.hpp"

namespace hierplan {

enum class AgentStatus { waiting, in_transit, responding, servicing };

inline std::string_view to_string(AgentStatus s) {
    switch (s) {
        case AgentStatus::waiting: return "waiting";
        case AgentStatus::in_transit: return "in_transit";
        case AgentStatus::responding: return "responding";
        case AgentStatus::servicing: return "servicing";
    }
    return "?";
}

struct AgentState {
    AgentId id = 0;
    CellId position = 0;
    AgentStatus status = AgentStatus::waiting;
    CellId destination = 0;
    RegionId region = -1;
    DepotId depot = -1;
    // Valid while servicing.
    double busy_until = 0.0;
    bool available = true;
    // Automatic restore time for an unavailable agent.
    double restore_at = kInf;

    // Current leg while responding or in transit.
    CellId origin = 0;
    double depart_time = 0.0;
    double arrive_time = 0.0;
    IncidentId incident = -1;

    bool is_free() const {
        return available && (status == AgentStatus::waiting || status == AgentStatus::in_transit);
    }

    bool is_busy() const { return status == AgentStatus::responding || status == AgentStatus::servicing; }
};

struct SimState {
    double clock = 0.0;
    // Reported, undispatched incidents in report order.
    std::deque<Incident> pending;
    std::vector<AgentState> agents;

    AgentState* find(AgentId id) {
        for (auto& a : agents)
            if (a.id == id) return &a;
        return nullptr;
    }

    const AgentState* find(AgentId id) const {
        for (const auto& a : agents)
            if (a.id == id) return &a;
        return nullptr;
    }

    AgentState& agent(AgentId id) {
        if (auto* a = find(id)) return *a;
        throw Error(concat("unknown agent id ", id));
    }

    const AgentState& agent(AgentId id) const {
        if (const auto* a = find(id)) return *a;
        throw Error(concat("unknown agent id ", id));
    }
};

struct ResponseRecord {
    IncidentId incident = 0;
    double incident_time = 0.0;
    CellId cell = 0;
    double dispatch_time = 0.0;
    double arrival_time = 0.0;
    double response_s = 0.0;
    AgentId agent = 0;
};

struct DispatchOutcome {
    double travel_s = 0.0;
    ResponseRecord record;
};

enum class ServiceMode { deterministic, exponential };

struct SimParams {
    double service_s = 20.0 * kSecondsPerMinute;
    // Extra busy time after each service, e.g. a hospital drop-off.
    double dropoff_s = 0.0;
    ServiceMode service_mode = ServiceMode::deterministic;
    std::uint64_t service_seed = 0;
};

struct FailureEvent {
    AgentId agent = 0;
    double start = 0.0;
    double end = kInf;
};

// Chooses the agent for an incident, or nullopt to leave it queued.
class Simulator;
using DispatchPolicy = std::function<std::optional<AgentId>(const Simulator&, const SimState&, const Incident&)>;

struct PlanningTrigger {
    enum class Kind { incident, tick, failure };
    Kind kind = Kind::incident;
    double time = 0.0;
};

using AllocationPolicy = std::function<void(const Simulator&, SimState&, const PlanningTrigger&)>;

struct RunOptions {
    double max_realloc_gap_s = 60.0 * kSecondsPerMinute;
    std::vector<FailureEvent> failures;
};

struct RunResult {
    // Ordered by incident id.
    std::vector<ResponseRecord> records;
    SimState final_state;
    int planning_calls = 0;
};

// Discrete-event model of the response system. The simulator itself is
// immutable; all mutable data lives in SimState values.
class Simulator {
public:
    Simulator(TravelModel travel, std::vector<Depot> depots, SimParams params = {})
        : travel_(std::move(travel)), depots_(std::move(depots)), params_(params) {
        for (std::size_t i = 0; i < depots_.size(); ++i) {
            const auto& d = depots_[i];
            if (d.capacity < 1) throw Error(concat("depot ", d.id, " has capacity ", d.capacity));
            if (!travel_.grid().valid(d.cell)) throw Error(concat("depot ", d.id, " lies in unknown cell ", d.cell));
            if (!depot_index_.emplace(d.id, i).second) throw Error(concat("duplicate depot id ", d.id));
        }
    }

    const TravelModel& travel() const { return travel_; }
    const Grid& grid() const { return travel_.grid(); }
    std::span<const Depot> depots() const { return depots_; }
    const SimParams& params() const { return params_; }

    const Depot& depot(DepotId id) const {
        auto it = depot_index_.find(id);
        if (it == depot_index_.end()) throw Error(concat("unknown depot id ", id));
        return depots_[it->second];
    }

    double service_duration(IncidentId incident) const {
        double s = params_.service_s;
        if (params_.service_mode == ServiceMode::exponential) {
            s = -std::log1p(-hashed_uniform(params_.service_seed, static_cast<std::uint64_t>(incident))) * s;
        }
        return s + params_.dropoff_s;
    }

    // Agent waiting at its depot.
    AgentState make_agent(AgentId id, DepotId depot, RegionId region) const {
        AgentState a;
        a.id = id;
        a.depot = depot;
        a.region = region;
        a.position = a.destination = a.origin = this->depot(depot).cell;
        return a;
    }

    // Advances every agent to time t. Arrivals, service completions and
    // availability restores that fall in (clock, t] are applied in order.
    void step_to(SimState& s, double t) const {
        if (t < s.clock) throw Error(concat("cannot step backwards from ", s.clock, " to ", t));
        for (auto& a : s.agents) advance(a, t);
        s.clock = t;
    }

    // Earliest future transition of an agent (inf if none).
    double next_event_time(const AgentState& a) const {
        double t = kInf;
        switch (a.status) {
            case AgentStatus::waiting: break;
            case AgentStatus::in_transit:
            case AgentStatus::responding: t = a.arrive_time; break;
            case AgentStatus::servicing: t = a.busy_until; break;
        }
        if (!a.available) t = std::min(t, a.restore_at);
        return t;
    }

    // Time at which the agent will next be dispatchable, assuming no new task.
    double free_time(const AgentState& a, double now) const {
        double t = now;
        if (a.status == AgentStatus::responding) t = a.arrive_time + service_duration(a.incident);
        if (a.status == AgentStatus::servicing) t = a.busy_until;
        if (!a.available) t = std::max(t, a.restore_at);
        return t;
    }

    DispatchOutcome dispatch(SimState& s, AgentId agent_id, IncidentId incident_id) const {
        AgentState& a = s.agent(agent_id);
        if (!a.available) throw Error(concat("agent ", agent_id, " is unavailable"));
        if (!a.is_free()) throw Error(concat("agent ", agent_id, " is busy (", to_string(a.status), ")"));
        auto it = std::find_if(s.pending.begin(), s.pending.end(),
                               [&](const Incident& i) { return i.id == incident_id; });
        if (it == s.pending.end()) throw Error(concat("incident ", incident_id, " is not pending"));
        const Incident inc = *it;
        s.pending.erase(it);

        const double travel = travel_.time_s(a.position, inc.cell);
        a.status = AgentStatus::responding;
        a.origin = a.position;
        a.destination = inc.cell;
        a.depart_time = s.clock;
        a.arrive_time = s.clock + travel;
        a.incident = inc.id;

        DispatchOutcome out;
        out.travel_s = travel;
        out.record = {inc.id, inc.time, inc.cell, s.clock, a.arrive_time, a.arrive_time - inc.time, a.id};
        return out;
    }

    void assign_region(SimState& s, AgentId agent_id, RegionId region) const { s.agent(agent_id).region = region; }

    // Busy agents keep their task; the new depot takes effect once they free up.
    void assign_depot(SimState& s, AgentId agent_id, DepotId depot_id) const {
        const Depot& d = depot(depot_id);
        AgentState& a = s.agent(agent_id);
        if (a.depot == depot_id) {
            if (a.is_free()) route_home(a, s.clock);
            return;
        }
        int load = 0;
        for (const auto& o : s.agents)
            if (o.id != agent_id && o.depot == depot_id) ++load;
        if (load + 1 > d.capacity) {
            throw Error(concat("depot ", depot_id, " is at capacity ", d.capacity, "; cannot add agent ", agent_id));
        }
        a.depot = depot_id;
        if (a.is_free()) route_home(a, s.clock);
    }

    // Applies several depot assignments at once; capacity is checked on the
    // resulting configuration, so agents may swap depots.
    void assign_depots(SimState& s, std::span<const std::pair<AgentId, DepotId>> moves) const {
        std::map<DepotId, int> load;
        std::vector<DepotId> next(s.agents.size());
        for (std::size_t i = 0; i < s.agents.size(); ++i) next[i] = s.agents[i].depot;
        for (const auto& [agent_id, depot_id] : moves) {
            depot(depot_id);
            bool found = false;
            for (std::size_t i = 0; i < s.agents.size(); ++i) {
                if (s.agents[i].id == agent_id) {
                    next[i] = depot_id;
                    found = true;
                }
            }
            if (!found) throw Error(concat("unknown agent id ", agent_id));
        }
        for (DepotId d : next)
            if (depot_index_.count(d)) ++load[d];
        for (const auto& [d, n] : load) {
            if (n > depot(d).capacity) {
                throw Error(concat("depot ", d, " would hold ", n, " agents but has capacity ", depot(d).capacity));
            }
        }
        for (const auto& [agent_id, depot_id] : moves) {
            AgentState& a = s.agent(agent_id);
            a.depot = depot_id;
            if (a.is_free()) route_home(a, s.clock);
        }
    }

    void set_agent_available(SimState& s, AgentId agent_id, bool available,
                             std::optional<double> until = std::nullopt) const {
        AgentState& a = s.agent(agent_id);
        a.available = available;
        a.restore_at = (!available && until) ? *until : kInf;
    }

    // Dispatches pending incidents in FIFO order while the policy finds agents.
    std::vector<DispatchOutcome> serve_pending(SimState& s, const DispatchPolicy& policy) const {
        std::vector<DispatchOutcome> out;
        while (!s.pending.empty()) {
            const Incident head = s.pending.front();
            const auto chosen = policy(*this, s, head);
            if (!chosen) break;
            out.push_back(dispatch(s, *chosen, head.id));
        }
        return out;
    }

    // Event loop over incident arrivals, agent transitions, failures and
    // re-allocation ticks. Simultaneous events are ordered incident, then
    // agent events, then ticks; within a class by entity id.
    RunResult run(const IncidentChain& chain, SimState initial, const DispatchPolicy& dispatch_policy,
                  const AllocationPolicy& allocation_policy = {}, const RunOptions& opt = {}) const {
        RunResult res;
        SimState& s = res.final_state;
        s = std::move(initial);

        std::vector<FailureEvent> failures = opt.failures;
        std::sort(failures.begin(), failures.end(), [](const FailureEvent& a, const FailureEvent& b) {
            return a.start != b.start ? a.start < b.start : a.agent < b.agent;
        });
        std::size_t next_failure = 0;
        std::size_t next_incident = 0;
        double last_plan = s.clock;
        const auto& incidents = chain.incidents;

        const auto plan = [&](PlanningTrigger::Kind kind) {
            if (!allocation_policy) return;
            allocation_policy(*this, s, PlanningTrigger{kind, s.clock});
            last_plan = s.clock;
            ++res.planning_calls;
        };
        const auto serve = [&] {
            for (auto& o : serve_pending(s, dispatch_policy)) res.records.push_back(o.record);
        };

        for (;;) {
            const double t_inc = next_incident < incidents.size() ? incidents[next_incident].time : kInf;
            double t_agent = kInf;
            for (const auto& a : s.agents) t_agent = std::min(t_agent, next_event_time(a));
            const double t_fail = next_failure < failures.size() ? failures[next_failure].start : kInf;
            const bool work_left = next_incident < incidents.size() || !s.pending.empty();
            const double t_tick = (allocation_policy && work_left) ? last_plan + opt.max_realloc_gap_s : kInf;

            const double t = std::min({t_inc, t_agent, t_fail, t_tick});
            if (t == kInf) break;
            step_to(s, std::max(t, s.clock));

            if (t_inc <= t) {
                s.pending.push_back(incidents[next_incident++]);
                serve();
                plan(PlanningTrigger::Kind::incident);
                serve();
            } else if (t_agent <= t || t_fail <= t) {
                bool failed = false;
                while (next_failure < failures.size() && failures[next_failure].start <= t) {
                    const auto& f = failures[next_failure++];
                    set_agent_available(s, f.agent, false, f.end);
                    failed = true;
                }
                serve();
                if (failed) {
                    plan(PlanningTrigger::Kind::failure);
                    serve();
                }
            } else {
                plan(PlanningTrigger::Kind::tick);
                serve();
            }
        }

        std::sort(res.records.begin(), res.records.end(),
                  [](const ResponseRecord& a, const ResponseRecord& b) { return a.incident < b.incident; });
        return res;
    }

    // Agents assigned to each depot.
    std::map<DepotId, int> depot_load(const SimState& s) const {
        std::map<DepotId, int> load;
        for (const auto& a : s.agents)
            if (depot_index_.count(a.depot)) ++load[a.depot];
        return load;
    }

private:
    void begin_leg(AgentState& a, CellId to, double t) const {
        a.origin = a.position;
        a.destination = to;
        a.depart_time = t;
        a.arrive_time = t + travel_.time_s(a.position, to);
    }

    // Sends a free agent toward its depot from wherever it is now.
    void route_home(AgentState& a, double t) const {
        const CellId home = depot(a.depot).cell;
        if (a.position == home) {
            a.status = AgentStatus::waiting;
            a.origin = a.destination = home;
            a.depart_time = a.arrive_time = t;
            return;
        }
        a.status = AgentStatus::in_transit;
        begin_leg(a, home, t);
    }

    CellId position_on_leg(const AgentState& a, double t) const {
        const double total = travel_.time_s(a.origin, a.destination);
        return travel_.interpolate(a.origin, a.destination, std::clamp(t - a.depart_time, 0.0, total));
    }

    void advance(AgentState& a, double t) const {
        if (!a.available && a.restore_at <= t) {
            a.available = true;
            a.restore_at = kInf;
        }
        for (;;) {
            switch (a.status) {
                case AgentStatus::waiting: return;
                case AgentStatus::responding:
                    if (a.arrive_time <= t) {
                        a.position = a.destination;
                        a.status = AgentStatus::servicing;
                        a.busy_until = a.arrive_time + service_duration(a.incident);
                        continue;
                    }
                    a.position = position_on_leg(a, t);
                    return;
                case AgentStatus::servicing:
                    if (a.busy_until <= t) {
                        a.incident = -1;
                        route_home(a, a.busy_until);
                        continue;
                    }
                    return;
                case AgentStatus::in_transit:
                    if (a.arrive_time <= t) {
                        a.position = a.destination;
                        a.status = AgentStatus::waiting;
                        return;
                    }
                    a.position = position_on_leg(a, t);
                    return;
            }
        }
    }

    TravelModel travel_;
    std::vector<Depot> depots_;
    std::map<DepotId, std::size_t> depot_index_;
    SimParams params_;
};

// Discounted reward of a dispatch: alpha^(minutes since horizon start) times
// the response time in seconds. Non-dispatch events contribute nothing.
inline double reward(double response_time_s, double t_h_minutes, double alpha) {
    return std::pow(alpha, t_h_minutes) * response_time_s;
}

inline double total_reward(std::span<const ResponseRecord> records, double horizon_start, double alpha) {
    double total = 0.0;
    for (const auto& r : records)
        total += reward(r.response_s, (r.dispatch_time - horizon_start) / kSecondsPerMinute, alpha);
    return total;
}

}  // namespace hierplan
