#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "hierplan/lowlevel.hpp"
#include "test_util.hpp"

using namespace hierplan;
using namespace hierplan::testing;

TEST(Decompose, FiltersAgentsAndIncidents) {
    const Simulator sim = make_sim(1, 6, {0, 1, 2, 4, 5});
    const Segmentation seg = make_segmentation(sim.grid(), {{0, 1, 2}, {3, 4, 5}}, sim.depots());
    SimState s;
    for (auto [d, r] : std::vector<std::pair<DepotId, RegionId>>{{0, 0}, {3, 1}, {1, 0}, {4, 1}, {2, 1}})
        s.agents.push_back(sim.make_agent(static_cast<AgentId>(s.agents.size()), d, r));
    const RegionState r0 = decompose(sim, s, seg.regions[0]);
    ASSERT_EQ(r0.state.agents.size(), 2u);
    EXPECT_EQ(r0.state.agents[0].id, 0);
    EXPECT_EQ(r0.state.agents[1].id, 2);
    EXPECT_TRUE(r0.state.pending.empty());
    // Depot 2 lies in region 0 but holds a region-1 agent.
    EXPECT_EQ(r0.room, (std::vector<std::pair<DepotId, int>>{{0, 1}, {1, 1}, {2, 0}}));

    s.pending.push_back({0, 0.0, 4});
    s.pending.push_back({1, 1.0, 1});
    const RegionState r1 = decompose(sim, s, seg.regions[1]);
    ASSERT_EQ(r1.state.pending.size(), 1u);
    EXPECT_EQ(r1.state.pending[0].id, 0);
}

TEST(Decompose, CopyIsIndependent) {
    const Simulator sim = make_sim(1, 4, {0, 3});
    const Segmentation seg = make_segmentation(sim.grid(), {{0, 1, 2, 3}}, sim.depots());
    SimState s = make_state(sim, {0});
    RegionState rs = decompose(sim, s, seg.regions[0]);
    sim.assign_depot(rs.state, 0, 1);
    EXPECT_EQ(s.agents[0].depot, 0);
    EXPECT_EQ(s.agents[0].status, AgentStatus::waiting);
}

TEST(Decompose, PartitionOverRandomStates) {
    int cases = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const Snapshot snap = random_snapshot(seed);
        const Grid& g = snap.sim.grid();
        Rng rng(seed);
        std::vector<std::vector<CellId>> cells(2);
        for (CellId c = 0; c < g.size(); ++c) cells[c < g.size() / 2 ? 0 : 1].push_back(c);
        const Segmentation seg = make_segmentation(g, cells, snap.sim.depots());
        SimState s = snap.state;
        for (auto& a : s.agents) a.region = static_cast<RegionId>(rng.below(2));
        std::multiset<AgentId> seen;
        std::size_t pending = 0;
        for (const auto& r : seg.regions) {
            const RegionState rs = decompose(snap.sim, s, r);
            for (const auto& a : rs.state.agents) {
                seen.insert(a.id);
                EXPECT_EQ(a.region, r.id);
            }
            for (const auto& inc : rs.state.pending) EXPECT_EQ(seg.region_of_cell(inc.cell), r.id);
            pending += rs.state.pending.size();
            EXPECT_EQ(rs.state.clock, s.clock);
        }
        EXPECT_EQ(seen.size(), s.agents.size());
        for (const auto& a : s.agents) EXPECT_EQ(seen.count(a.id), 1u);
        EXPECT_EQ(pending, s.pending.size());
        ++cases;
    }
    EXPECT_GE(cases, 300);
}

TEST(Actions, EnumerationAndForcedMove) {
    const Simulator sim = make_sim(1, 4, {0, 2, 3});
    const Segmentation seg = make_segmentation(sim.grid(), {{0, 1, 2, 3}}, sim.depots());
    SimState s = make_state(sim, {0, 1});
    for (auto& a : s.agents) a.region = 0;
    const auto acts = enumerate_actions(decompose(sim, s, seg.regions[0]));
    EXPECT_EQ(acts.size(), 6u);  // 3!/1!
    EXPECT_TRUE(std::is_sorted(acts.begin(), acts.end()));

    const Simulator one = make_sim(1, 4, {2});
    const Segmentation seg1 = make_segmentation(one.grid(), {{0, 1, 2, 3}}, one.depots());
    const auto forced = enumerate_actions(decompose(one, make_state(one, {0}), seg1.regions[0]));
    ASSERT_EQ(forced.size(), 1u);
    EXPECT_EQ(forced[0].assignment, (std::vector<std::pair<AgentId, DepotId>>{{0, 0}}));
}

TEST(Actions, BusyAgentsKeepTheirSlot) {
    const Simulator sim = make_sim(1, 4, {0, 3});
    const Segmentation seg = make_segmentation(sim.grid(), {{0, 1, 2, 3}}, sim.depots());
    SimState s = make_state(sim, {0, 1});
    s.pending.push_back({0, 0.0, 1});
    sim.dispatch(s, 0, 0);
    const auto acts = enumerate_actions(decompose(sim, s, seg.regions[0]));
    ASSERT_EQ(acts.size(), 1u);
    EXPECT_EQ(acts[0].assignment, (std::vector<std::pair<AgentId, DepotId>>{{1, 1}}));
}

TEST(Actions, NoSlotsIsAnError) {
    const Simulator sim = make_sim(1, 4, {0, 3});
    const Segmentation seg = make_segmentation(sim.grid(), {{0, 1}, {2, 3}}, sim.depots());
    SimState s = make_state(sim, {0});
    s.agents[0].region = 1;  // region 1 agent parked in region 0's depot
    s.agents.push_back(sim.make_agent(1, 1, 1));
    s.agents.push_back(sim.make_agent(2, 0, 1));
    s.agents[2].depot = 1;
    const RegionState rs = decompose(sim, s, seg.regions[1]);
    EXPECT_THROW(enumerate_actions(rs), Error);
    const IncidentChain chain;
    MctsOptions opt;
    EXPECT_THROW(mcts(sim, rs, chain, opt), Error);
}

TEST(Actions, NoFreeAgentsGiveEmptyAction) {
    RegionState rs;
    const auto acts = enumerate_actions(rs);
    ASSERT_EQ(acts.size(), 1u);
    EXPECT_TRUE(acts[0].assignment.empty());
}

TEST(Uct, HandEvaluation) {
    EXPECT_NEAR(uct_score(0.5, 1.44, 100, 10), 0.5 + 1.44 * std::sqrt(std::log(100.0) / 10.0), 1e-12);
    EXPECT_NEAR(uct_score(0.5, 1.44, 100, 10), 1.4772, 1e-4);
    EXPECT_EQ(uct_score(0.3, 0.0, 100, 10), 0.3);
    EXPECT_GT(uct_score(0.4, 1.0, 55, 5), uct_score(0.4, 1.0, 55, 50));
    EXPECT_EQ(uct_score(0.4, 1.0, 55, 0), kInf);
}

TEST(Reward, DiscountExamples) {
    EXPECT_EQ(reward(240.0, 0.0, 0.99995), 240.0);
    EXPECT_NEAR(reward(240.0, 60.0, 0.99995), 239.28, 5e-3);
    std::vector<ResponseRecord> none;
    EXPECT_EQ(total_reward(none, 0.0, 0.9), 0.0);
}

TEST(Rollout, EmptyTailIsZero) {
    const Simulator sim = make_sim(1, 4, {0});
    RegionState rs;
    rs.state = make_state(sim, {0});
    EXPECT_EQ(rollout(sim, rs, IncidentChain{}, 0.99995), 0.0);
}

TEST(Rollout, SingleIncident) {
    const Simulator sim = make_sim(1, 4, {0});
    RegionState rs;
    rs.state = make_state(sim, {0});
    const IncidentChain chain = make_chain({{3600.0, 2}});
    EXPECT_DOUBLE_EQ(rollout(sim, rs, chain, 0.99995), reward(240.0, 60.0, 0.99995));
}

TEST(Rollout, EqualsSimulatorExactly) {
    int compared = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const Snapshot snap = random_snapshot(seed);
        const double alpha = 0.9995;
        const double r = rollout(snap.sim, snap.state, snap.rest.incidents, 0, snap.state.clock, alpha);
        RunOptions opt;
        const RunResult run = snap.sim.run(snap.rest, snap.state, greedy_policy(), {}, opt);
        EXPECT_EQ(r, total_reward(run.records, snap.state.clock, alpha)) << "seed " << seed;
        ++compared;
    }
    EXPECT_EQ(compared, 300);
}

namespace {

// One agent, depots at both ends of a 1 x 9 line, demand only at cell 0.
struct Biased {
    Simulator sim = make_sim(1, 9, {0, 8});
    Segmentation seg;
    PoissonModel model;
    SimState state;

    Biased() {
        seg = make_segmentation(sim.grid(), {{0, 1, 2, 3, 4, 5, 6, 7, 8}}, sim.depots());
        model.rate_per_min.assign(9, 0.0);
        model.rate_per_min[0] = 0.02;
        state = make_state(sim, {1});
        state.clock = 1000.0;
        sim.step_to(state, 1000.0);
    }
};

}  // namespace

TEST(Mcts, PrefersDepotNearDemand) {
    const Biased w;
    const RegionState rs = decompose(w.sim, w.state, w.seg.regions[0]);
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const IncidentChain chain = planning_chain(w.model, w.state.clock, 3 * 3600.0, seed, {});
        ASSERT_FALSE(chain.incidents.empty());
        MctsOptions opt;
        opt.iterations = 50;
        opt.seed = seed;
        const auto scores = mcts(w.sim, rs, chain, opt);
        ASSERT_EQ(scores.size(), 2u);
        const auto at = [&](DepotId d) {
            for (const auto& s : scores)
                if (s.action.assignment[0].second == d) return s.mean;
            return -kInf;
        };
        EXPECT_GT(at(0), at(1)) << "seed " << seed;
    }
}

TEST(Mcts, SingleIteration) {
    const Biased w;
    const RegionState rs = decompose(w.sim, w.state, w.seg.regions[0]);
    const IncidentChain chain = planning_chain(w.model, w.state.clock, 3600.0, 3, {});
    MctsOptions opt;
    opt.iterations = 1;
    const auto scores = mcts(w.sim, rs, chain, opt);
    ASSERT_EQ(scores.size(), 1u);
    EXPECT_EQ(scores[0].visits, 1);
    EXPECT_THROW(mcts(w.sim, rs, chain, MctsOptions{0, 1.44, 0.99995, 2, 0}), Error);
}

TEST(Mcts, DeterministicForSeed) {
    const Biased w;
    const RegionState rs = decompose(w.sim, w.state, w.seg.regions[0]);
    const IncidentChain chain = planning_chain(w.model, w.state.clock, 3600.0, 5, {});
    MctsOptions opt;
    opt.iterations = 40;
    opt.seed = 77;
    const auto a = mcts(w.sim, rs, chain, opt);
    const auto b = mcts(w.sim, rs, chain, opt);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].action, b[i].action);
        EXPECT_EQ(a[i].mean, b[i].mean);
        EXPECT_EQ(a[i].visits, b[i].visits);
    }
}

TEST(MctsProperties, BackupConservation) {
    int nodes_checked = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        const Snapshot snap = random_snapshot(seed);
        const Grid& g = snap.sim.grid();
        std::vector<CellId> all(static_cast<std::size_t>(g.size()));
        std::iota(all.begin(), all.end(), 0);
        const Segmentation seg = make_segmentation(g, {all}, snap.sim.depots());
        SimState s = snap.state;
        for (auto& a : s.agents) a.region = 0;
        const RegionState rs = decompose(snap.sim, s, seg.regions[0]);
        MctsOptions opt;
        opt.iterations = 60;
        opt.max_depth = 1 + static_cast<int>(seed % 3);
        opt.seed = seed;
        MctsSearch search(snap.sim, rs, snap.rest, opt);
        search.run();
        const auto& nodes = search.nodes();
        EXPECT_EQ(nodes[0].visits, opt.iterations);
        for (const auto& n : nodes) {
            int child_visits = 0;
            double child_sum = 0.0;
            for (int c : n.children) {
                if (c < 0) continue;
                child_visits += nodes[static_cast<std::size_t>(c)].visits;
                child_sum += nodes[static_cast<std::size_t>(c)].value_sum;
            }
            EXPECT_EQ(n.visits, child_visits + n.own_rollouts);
            EXPECT_GE(n.visits, 1);
            if (n.own_rollouts == 0) {
                EXPECT_NEAR(n.value_sum, child_sum, 1e-9 * (1.0 + std::abs(n.value_sum)));
            }
            ++nodes_checked;
        }
    }
    EXPECT_GE(nodes_checked, 1000);
}

namespace {

struct TwoRegions {
    Simulator sim = make_sim(2, 6, {0, 2, 5, 6, 9, 11});
    Segmentation seg;
    PoissonModel model;
    SimState state;

    TwoRegions() {
        seg = make_segmentation(sim.grid(), {{0, 1, 2, 6, 7, 8}, {3, 4, 5, 9, 10, 11}}, sim.depots());
        model.rate_per_min.assign(12, 0.004);
        model.rate_per_min[1] = 0.02;
        model.rate_per_min[10] = 0.03;
        for (auto [d, r] : std::vector<std::pair<DepotId, RegionId>>{{0, 0}, {3, 0}, {2, 1}, {5, 1}})
            state.agents.push_back(sim.make_agent(static_cast<AgentId>(state.agents.size()), d, r));
    }
};

LowLevelOptions small_options() {
    LowLevelOptions o;
    o.n_chains = 4;
    o.iterations = 30;
    o.horizon_s = 3600.0;
    return o;
}

}  // namespace

TEST(PlanRegions, OneChainEqualsSingleSearch) {
    const TwoRegions w;
    LowLevelOptions opt = small_options();
    opt.n_chains = 1;
    const auto res = plan_regions(w.sim, w.seg.regions, w.state, w.model, {}, opt, 9);
    ASSERT_EQ(res.plans.size(), 2u);
    for (const auto& plan : res.plans) {
        const Region& region = w.seg.region(plan.region);
        const std::uint64_t s = derive_seed(9, static_cast<std::uint64_t>(region.id), 0);
        const IncidentChain chain = planning_chain(w.model.restricted_to(region), 0.0, opt.horizon_s, s, {});
        MctsOptions mo{opt.iterations, opt.c, opt.alpha, opt.max_depth, derive_seed(s, 1)};
        auto single = mcts(w.sim, decompose(w.sim, w.state, region), chain, mo);
        std::sort(single.begin(), single.end(),
                  [](const ActionScore& a, const ActionScore& b) { return a.action < b.action; });
        ASSERT_EQ(single.size(), plan.scores.size());
        for (std::size_t i = 0; i < single.size(); ++i) {
            EXPECT_EQ(single[i].action, plan.scores[i].action);
            EXPECT_EQ(single[i].mean, plan.scores[i].mean);
        }
    }
}

TEST(PlanRegions, IdenticalChainsAgreeWithOne) {
    // A zero-rate model makes every chain empty and every score equal, so
    // the recommendation is the first action in canonical order.
    TwoRegions w;
    w.model.rate_per_min.assign(12, 0.0);
    LowLevelOptions opt = small_options();
    for (int n : {1, 5}) {
        opt.n_chains = n;
        const auto res = plan_regions(w.sim, w.seg.regions, w.state, w.model, {}, opt, 2);
        for (const auto& plan : res.plans) {
            const auto acts = enumerate_actions(decompose(w.sim, w.state, w.seg.region(plan.region)));
            EXPECT_EQ(plan.action, acts.front());
            EXPECT_EQ(plan.mean_score, 0.0);
        }
    }
}

TEST(PlanRegions, WorkerCountDoesNotMatter) {
    const TwoRegions w;
    LowLevelOptions opt = small_options();
    const auto one = plan_regions(w.sim, w.seg.regions, w.state, w.model, {}, opt, 4);
    opt.workers = 4;
    const auto four = plan_regions(w.sim, w.seg.regions, w.state, w.model, {}, opt, 4);
    ASSERT_EQ(one.plans.size(), four.plans.size());
    for (std::size_t i = 0; i < one.plans.size(); ++i) {
        EXPECT_EQ(one.plans[i].action, four.plans[i].action);
        EXPECT_EQ(one.plans[i].mean_score, four.plans[i].mean_score);
        ASSERT_EQ(one.plans[i].scores.size(), four.plans[i].scores.size());
        for (std::size_t j = 0; j < one.plans[i].scores.size(); ++j)
            EXPECT_EQ(one.plans[i].scores[j].mean, four.plans[i].scores[j].mean);
    }
}

TEST(PlanRegions, IsolationAndValidity) {
    int cases = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        TwoRegions w;
        Rng rng(seed);
        // Random busy agents and relocations.
        SimState s = w.state;
        s.clock = rng.uniform(0.0, 1000.0);
        w.sim.step_to(s, s.clock);
        if (rng.uniform() < 0.5) {
            s.pending.push_back({0, s.clock, static_cast<CellId>(rng.below(12))});
            drain_queue(w.sim, s);
        }
        LowLevelOptions opt = small_options();
        opt.n_chains = 2;
        opt.iterations = 15;
        const auto res = plan_regions(w.sim, w.seg.regions, s, w.model, {}, opt, seed);
        // Region 0's plan must not depend on region 1's agents.
        SimState other = s;
        for (auto& a : other.agents) {
            if (a.region != 1 || !a.is_free()) continue;
            const DepotId swap = a.depot == 2 ? 5 : 2;
            bool taken = false;
            for (const auto& b : other.agents) taken |= b.depot == swap;
            if (!taken) w.sim.assign_depot(other, a.id, swap);
        }
        const auto res2 = plan_regions(w.sim, std::span<const Region>(w.seg.regions).first(1), other, w.model, {},
                                       opt, seed);
        ASSERT_FALSE(res2.plans.empty());
        EXPECT_EQ(res.plans[0].action, res2.plans[0].action);
        EXPECT_EQ(res.plans[0].mean_score, res2.plans[0].mean_score);
        // Every recommendation is executable on the real state.
        SimState exec = s;
        for (const auto& plan : res.plans) {
            for (const auto& [agent, depot] : plan.action.assignment) {
                EXPECT_EQ(exec.agent(agent).region, plan.region);
                EXPECT_TRUE(exec.agent(agent).is_free());
            }
            EXPECT_NO_THROW(w.sim.assign_depots(exec, plan.action.assignment));
        }
        ++cases;
    }
    EXPECT_EQ(cases, 40);
}

TEST(ParallelFor, CoversEveryIndexAndPropagatesErrors) {
    std::vector<int> hit(100, 0);
    parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3,
                              [](std::size_t i) {
                                  if (i == 7) throw Error("boom");
                              }),
                 Error);
}
