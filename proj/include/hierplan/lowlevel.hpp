#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <span>
#include <thread>
#include <vector>

#include "hierplan/demand.hpp"
#include "hierplan/dispatch.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"

namespace hierplan {

// Planning chains use ids from here up so they never collide with the ids of
// real incidents already pending in a decomposed state.
inline constexpr IncidentId kPlanningIdBase = 1 << 29;

// The slice of the global state one region's planner sees.
struct RegionState {
    RegionId region = 0;
    // Agents assigned to the region and pending incidents inside it.
    SimState state;
    // Per region depot: capacity left after agents of other regions.
    std::vector<std::pair<DepotId, int>> room;
};

inline RegionState decompose(const Simulator& sim, const SimState& s, const Region& region) {
    RegionState rs;
    rs.region = region.id;
    rs.state.clock = s.clock;
    std::vector<CellId> cells = region.cell_ids;
    std::sort(cells.begin(), cells.end());
    for (const auto& inc : s.pending)
        if (std::binary_search(cells.begin(), cells.end(), inc.cell)) rs.state.pending.push_back(inc);
    for (const auto& a : s.agents)
        if (a.region == region.id) rs.state.agents.push_back(a);
    for (DepotId d : region.depot_ids) {
        int held = 0;
        for (const auto& a : s.agents)
            if (a.depot == d && a.region != region.id) ++held;
        rs.room.emplace_back(d, std::max(0, sim.depot(d).capacity - held));
    }
    return rs;
}

// Slots open to the region's free agents: room minus region agents that keep
// their depot (busy or unavailable).
inline std::vector<std::pair<DepotId, int>> open_slots(const RegionState& rs) {
    auto slots = rs.room;
    for (auto& [d, n] : slots) {
        for (const auto& a : rs.state.agents)
            if (a.depot == d && !a.is_free()) --n;
        n = std::max(0, n);
    }
    return slots;
}

// A full assignment of a region's free agents to depots, agents in id order.
struct AllocationAction {
    std::vector<std::pair<AgentId, DepotId>> assignment;

    friend bool operator==(const AllocationAction&, const AllocationAction&) = default;
    friend auto operator<=>(const AllocationAction&, const AllocationAction&) = default;
};

// Every way of placing the free agents on open slots, in lexicographic order of
// depot choices. A region with no free agents has the single empty action.
inline std::vector<AllocationAction> enumerate_actions(const RegionState& rs, std::size_t limit = 200000) {
    std::vector<AgentId> free;
    for (const auto& a : rs.state.agents)
        if (a.is_free()) free.push_back(a.id);
    std::sort(free.begin(), free.end());

    std::vector<AllocationAction> out;
    if (free.empty()) {
        out.emplace_back();
        return out;
    }
    const auto open = open_slots(rs);
    std::vector<int> slots;
    for (const auto& [d, n] : open) slots.push_back(n);
    std::vector<std::pair<AgentId, DepotId>> current;
    const auto rec = [&](auto& self, std::size_t k) -> void {
        if (k == free.size()) {
            if (out.size() >= limit) throw Error(concat("region ", rs.region, " has more than ", limit, " actions"));
            out.push_back({current});
            return;
        }
        for (std::size_t d = 0; d < slots.size(); ++d) {
            if (slots[d] == 0) continue;
            --slots[d];
            current.emplace_back(free[k], open[d].first);
            self(self, k + 1);
            current.pop_back();
            ++slots[d];
        }
    };
    rec(rec, 0);
    if (out.empty()) {
        throw Error(concat("region ", rs.region, " has ", free.size(), " free agents but too few open depot slots"));
    }
    return out;
}

// Standard UCT: mean + c * sqrt(ln(parent visits) / visits). Unvisited nodes
// score +inf so they are tried first.
inline double uct_score(double mean, double c, int parent_visits, int visits) {
    if (visits <= 0) return kInf;
    return mean + c * std::sqrt(std::log(static_cast<double>(parent_visits)) / visits);
}

// ---------------------------------------------------------------------------
// Default policy: greedy dispatch, no re-allocation.

struct AdvanceResult {
    double reward = 0.0;
    // False once the chain is exhausted and every queued incident is served.
    bool reached_incident = false;
};

// Runs greedy dispatch from the current state until the next chain incident
// has been reported and handled. Only decision points are visited: incident
// arrivals, and the moments a busy agent frees up while incidents wait.
// Rewards are added onto `carried` in dispatch order.
inline AdvanceResult advance_to_next_incident(const Simulator& sim, SimState& s, std::span<const Incident> chain,
                                              std::size_t& pos, double horizon_start, double alpha,
                                              double carried = 0.0) {
    AdvanceResult out;
    out.reward = carried;
    const auto serve = [&] {
        while (!s.pending.empty()) {
            const DispatchDecision d = greedy_dispatch(sim, s, s.pending.front());
            if (!d.agent) break;
            const DispatchOutcome o = sim.dispatch(s, *d.agent, d.incident);
            out.reward += reward(o.record.response_s, (s.clock - horizon_start) / kSecondsPerMinute, alpha);
        }
    };
    for (;;) {
        const double t_inc = pos < chain.size() ? chain[pos].time : kInf;
        double t_free = kInf;
        if (!s.pending.empty()) {
            for (const auto& a : s.agents) {
                const double t = sim.free_time(a, s.clock);
                if (t > s.clock) t_free = std::min(t_free, t);
            }
        }
        const double t = std::min(t_inc, t_free);
        if (t == kInf) return out;
        sim.step_to(s, t);
        if (t_inc <= t) {
            s.pending.push_back(chain[pos++]);
            serve();
            out.reached_incident = true;
            return out;
        }
        serve();
    }
}

// Discounted response time accumulated by the default policy over the rest of
// the chain (incidents from `pos` on), including any already queued.
inline double rollout(const Simulator& sim, SimState s, std::span<const Incident> chain, std::size_t pos,
                      double horizon_start, double alpha) {
    double total = 0.0;
    for (;;) {
        const AdvanceResult r = advance_to_next_incident(sim, s, chain, pos, horizon_start, alpha, total);
        total = r.reward;
        if (!r.reached_incident) return total;
    }
}

inline double rollout(const Simulator& sim, const RegionState& rs, const IncidentChain& chain, double alpha) {
    return rollout(sim, rs.state, chain.incidents, 0, rs.state.clock, alpha);
}

// ---------------------------------------------------------------------------
// Search tree

struct SearchNode {
    SimState state;
    std::size_t next_incident = 0;
    // Discounted response time accrued between the parent and this node.
    double edge_reward = 0.0;
    int parent = -1;
    int depth = 0;
    bool terminal = false;

    bool expanded_actions = false;
    std::vector<AllocationAction> actions;
    // Node index per action, -1 while unexpanded.
    std::vector<int> children;
    // Order in which unexpanded actions are tried.
    std::vector<int> expansion_order;
    std::size_t next_expansion = 0;

    int visits = 0;
    double value_sum = 0.0;
    int own_rollouts = 0;
    double cached_rollout = std::numeric_limits<double>::quiet_NaN();

    double mean() const { return visits ? value_sum / visits : 0.0; }
};

struct MctsOptions {
    int iterations = 1000;
    double c = 1.44;
    double alpha = 0.99995;
    // Nodes at this depth are evaluated by rollout and never expanded.
    int max_depth = 2;
    std::uint64_t seed = 0;
};

struct ActionScore {
    AllocationAction action;
    // Mean negated discounted response time (higher is better).
    double mean = 0.0;
    int visits = 0;
};

// Scores are negated discounted response times; UCT runs on scores min-max
// normalised over everything backed up so far so that c is scale-free.
class MctsSearch {
public:
    MctsSearch(const Simulator& sim, const RegionState& root, const IncidentChain& chain, const MctsOptions& opt)
        : sim_(sim), region_(root), chain_(chain.incidents), opt_(opt), rng_(opt.seed) {
        if (opt.iterations < 1) throw Error("MCTS needs at least one iteration");
        horizon_start_ = root.state.clock;
        SearchNode n;
        n.state = root.state;
        nodes_.push_back(std::move(n));
        ensure_actions(0);
        if (nodes_[0].actions.empty()) throw Error(concat("region ", root.region, " has no valid action"));
    }

    std::vector<ActionScore> run() {
        for (int it = 0; it < opt_.iterations; ++it) iterate();
        return root_scores();
    }

    const std::vector<SearchNode>& nodes() const { return nodes_; }

    std::vector<ActionScore> root_scores() const {
        std::vector<ActionScore> out;
        const SearchNode& root = nodes_[0];
        for (std::size_t a = 0; a < root.actions.size(); ++a) {
            const int c = root.children[a];
            if (c < 0) continue;
            const SearchNode& n = nodes_[static_cast<std::size_t>(c)];
            out.push_back({root.actions[a], n.mean(), n.visits});
        }
        return out;
    }

private:
    void ensure_actions(int idx) {
        SearchNode& n = nodes_[static_cast<std::size_t>(idx)];
        if (n.expanded_actions) return;
        n.expanded_actions = true;
        RegionState rs;
        rs.region = region_.region;
        rs.state = n.state;
        rs.room = region_.room;
        n.actions = enumerate_actions(rs);
        n.children.assign(n.actions.size(), -1);
        n.expansion_order.resize(n.actions.size());
        for (std::size_t i = 0; i < n.actions.size(); ++i) n.expansion_order[i] = static_cast<int>(i);
        shuffle(n.expansion_order, rng_);
    }

    double leaf_value(int idx) {
        SearchNode& n = nodes_[static_cast<std::size_t>(idx)];
        if (n.terminal) return 0.0;
        if (std::isnan(n.cached_rollout)) {
            n.cached_rollout = rollout(sim_, n.state, chain_, n.next_incident, horizon_start_, opt_.alpha);
        }
        return n.cached_rollout;
    }

    int expand(int parent_idx, int action) {
        SearchNode child;
        {
            const SearchNode& parent = nodes_[static_cast<std::size_t>(parent_idx)];
            child.state = parent.state;
            child.next_incident = parent.next_incident;
            child.parent = parent_idx;
            child.depth = parent.depth + 1;
            const auto& assignment = parent.actions[static_cast<std::size_t>(action)].assignment;
            if (!assignment.empty()) sim_.assign_depots(child.state, assignment);
        }
        const AdvanceResult r =
            advance_to_next_incident(sim_, child.state, chain_, child.next_incident, horizon_start_, opt_.alpha);
        child.edge_reward = r.reward;
        child.terminal = !r.reached_incident;
        nodes_.push_back(std::move(child));
        const int idx = static_cast<int>(nodes_.size()) - 1;
        nodes_[static_cast<std::size_t>(parent_idx)].children[static_cast<std::size_t>(action)] = idx;
        return idx;
    }

    int select_child(int idx) const {
        const SearchNode& n = nodes_[static_cast<std::size_t>(idx)];
        const double range = hi_ - lo_;
        int best = -1;
        double best_score = -kInf;
        for (std::size_t a = 0; a < n.children.size(); ++a) {
            const int c = n.children[a];
            const SearchNode& ch = nodes_[static_cast<std::size_t>(c)];
            const double norm = range > 0.0 ? (ch.mean() - lo_) / range : 0.0;
            const double score = uct_score(norm, opt_.c, n.visits, ch.visits);
            if (best < 0 || score > best_score) {
                best = c;
                best_score = score;
            }
        }
        return best;
    }

    void iterate() {
        int idx = 0;
        double accrued = 0.0;
        double leaf = 0.0;
        for (;;) {
            SearchNode& n = nodes_[static_cast<std::size_t>(idx)];
            accrued += n.edge_reward;
            if (n.terminal || n.depth >= opt_.max_depth) {
                ++nodes_[static_cast<std::size_t>(idx)].own_rollouts;
                leaf = leaf_value(idx);
                break;
            }
            ensure_actions(idx);
            SearchNode& m = nodes_[static_cast<std::size_t>(idx)];
            if (m.next_expansion < m.expansion_order.size()) {
                const int action = m.expansion_order[m.next_expansion++];
                const int child = expand(idx, action);
                accrued += nodes_[static_cast<std::size_t>(child)].edge_reward;
                ++nodes_[static_cast<std::size_t>(child)].own_rollouts;
                leaf = leaf_value(child);
                idx = child;
                break;
            }
            idx = select_child(idx);
        }

        const double score = -(accrued + leaf);
        lo_ = std::min(lo_, score);
        hi_ = std::max(hi_, score);
        for (int i = idx; i >= 0; i = nodes_[static_cast<std::size_t>(i)].parent) {
            ++nodes_[static_cast<std::size_t>(i)].visits;
            nodes_[static_cast<std::size_t>(i)].value_sum += score;
        }
    }

    const Simulator& sim_;
    RegionState region_;
    std::span<const Incident> chain_;
    MctsOptions opt_;
    Rng rng_;
    double horizon_start_ = 0.0;
    double lo_ = kInf;
    double hi_ = -kInf;
    std::vector<SearchNode> nodes_;
};

inline std::vector<ActionScore> mcts(const Simulator& sim, const RegionState& root, const IncidentChain& chain,
                                     const MctsOptions& opt) {
    MctsSearch search(sim, root, chain, opt);
    return search.run();
}

// ---------------------------------------------------------------------------
// Root-parallel planning over all regions

struct LowLevelOptions {
    int n_chains = 50;
    int iterations = 1000;
    double c = 1.44;
    double alpha = 0.99995;
    int max_depth = 2;
    double horizon_s = 60.0 * kSecondsPerMinute;
    int workers = 1;
};

struct RegionPlan {
    RegionId region = 0;
    AllocationAction action;
    double mean_score = 0.0;
    int n_trees = 0;
    // Mean score per scored action, in canonical action order.
    std::vector<ActionScore> scores;
};

struct RegionPlanResult {
    std::vector<RegionPlan> plans;
    std::vector<std::string> warnings;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written to per-index storage so the outcome is schedule independent.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(w);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
                next = n;
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline IncidentChain planning_chain(const PoissonModel& region_model, double t0, double horizon_s, std::uint64_t seed,
                                    const SpikeSchedule& spikes) {
    IncidentChain c = sample_chain(region_model, t0, t0 + horizon_s, seed, spikes);
    for (auto& inc : c.incidents) inc.id += kPlanningIdBase;
    return c;
}

// For each region: sample n region-restricted chains, grow one tree per
// chain, average each root action's score over the trees that scored it, and
// recommend the best average (ties to the earlier action in canonical order).
inline RegionPlanResult plan_regions(const Simulator& sim, std::span<const Region> regions, const SimState& state,
                                     const PoissonModel& model, const SpikeSchedule& spikes,
                                     const LowLevelOptions& opt, std::uint64_t seed) {
    struct Job {
        std::size_t region_slot;
        int chain;
    };
    RegionPlanResult result;
    std::vector<RegionState> roots(regions.size());
    std::vector<std::vector<AllocationAction>> actions(regions.size());
    std::vector<bool> plannable(regions.size(), false);
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < regions.size(); ++r) {
        if (regions[r].depot_ids.empty()) continue;
        roots[r] = decompose(sim, state, regions[r]);
        try {
            actions[r] = enumerate_actions(roots[r]);
        } catch (const Error& e) {
            result.warnings.push_back(e.what());
            continue;
        }
        plannable[r] = true;
        if (actions[r].size() == 1) continue;
        for (int c = 0; c < opt.n_chains; ++c) jobs.push_back({r, c});
    }

    std::vector<std::vector<ActionScore>> tree_scores(jobs.size());
    parallel_for(jobs.size(), opt.workers, [&](std::size_t j) {
        const Region& region = regions[jobs[j].region_slot];
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(region.id),
                                            static_cast<std::uint64_t>(jobs[j].chain));
        const IncidentChain chain =
            planning_chain(model.restricted_to(region), state.clock, opt.horizon_s, s, spikes);
        MctsOptions mo;
        mo.iterations = opt.iterations;
        mo.c = opt.c;
        mo.alpha = opt.alpha;
        mo.max_depth = opt.max_depth;
        mo.seed = derive_seed(s, 1);
        tree_scores[j] = mcts(sim, roots[jobs[j].region_slot], chain, mo);
    });

    for (std::size_t r = 0; r < regions.size(); ++r) {
        if (!plannable[r]) continue;
        RegionPlan plan;
        plan.region = regions[r].id;
        const auto& acts = actions[r];
        if (acts.size() == 1) {
            plan.action = acts[0];
            result.plans.push_back(std::move(plan));
            continue;
        }
        std::map<AllocationAction, std::pair<double, int>> agg;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].region_slot != r) continue;
            for (const auto& sc : tree_scores[j]) {
                auto& [sum, n] = agg[sc.action];
                sum += sc.mean;
                ++n;
            }
        }
        int best = -1;
        for (const auto& a : acts) {
            auto it = agg.find(a);
            if (it == agg.end()) continue;
            const double mean = it->second.first / it->second.second;
            plan.scores.push_back({a, mean, it->second.second});
            if (best < 0 || mean > plan.mean_score) {
                best = static_cast<int>(plan.scores.size()) - 1;
                plan.mean_score = mean;
                plan.action = a;
                plan.n_trees = it->second.second;
            }
        }
        result.plans.push_back(std::move(plan));
    }
    return result;
}

}  // namespace hierplan
