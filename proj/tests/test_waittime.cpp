#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "hierplan/surrogate.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hierplan;
using namespace hierplan::testing;

TEST(MmcWait, EmptySystem) { EXPECT_EQ(mmc_wait({3, 0.0, 0.05}), 0.0); }

TEST(MmcWait, SingleServerClosedForm) {
    const double w = mmc_wait({1, 0.025, 0.05});
    EXPECT_NEAR(w, 20.0, 20.0 * 1e-9);
    for (double g : {0.001, 0.01, 0.03, 0.049}) {
        const double mm1 = g / (0.05 * (0.05 - g));
        EXPECT_NEAR(mmc_wait({1, g, 0.05}), mm1, mm1 * 1e-9);
    }
}

TEST(MmcWait, TwoServerHandEvaluation) {
    // a = 1.6, rho = 0.8: P0 = 1 / (1 + 1.6 + 1.28 / 0.2) = 1/9,
    // Lq = (1/9) * 1.28 * 0.8 / 0.04 = 2.8444, Wq = Lq / 0.08.
    const double p0 = 1.0 / 9.0;
    const double lq = p0 * 1.28 * 0.8 / 0.04;
    EXPECT_NEAR(lq, 2.8444, 1e-4);
    EXPECT_NEAR(mmc_wait({2, 0.08, 0.05}), lq / 0.08, 1e-9);
    EXPECT_NEAR(mmc_wait({2, 0.08, 0.05}), 35.556, 1e-3);
}

TEST(MmcWait, MatchesQueueSimulation) {
    const double sim = oracle::simulated_mmc_wait(2, 0.08, 0.05, 1000000, 7);
    EXPECT_NEAR(sim, mmc_wait({2, 0.08, 0.05}), 0.05 * mmc_wait({2, 0.08, 0.05}));
}

TEST(MmcWait, UnstableIsInfinite) {
    EXPECT_EQ(mmc_wait({1, 0.05, 0.05}), kInf);
    EXPECT_EQ(mmc_wait({2, 0.2, 0.05}), kInf);
    EXPECT_EQ(mmc_wait({0, 0.01, 0.05}), kInf);
    EXPECT_THROW(mmc_wait({1, 0.01, 0.0}), Error);
    EXPECT_THROW(mmc_wait({1, -0.01, 0.05}), Error);
}

TEST(MmcWait, MonotoneInRateAndServers) {
    int cases = 0;
    Rng rng(5);
    for (int i = 0; i < 1500; ++i) {
        const int p = 1 + static_cast<int>(rng.below(12));
        const double mu = rng.uniform(0.01, 0.2);
        const double g1 = rng.uniform(0.0001, 0.999) * p * mu;
        const double g2 = g1 + rng.uniform(1e-6, p * mu - g1);
        if (g2 >= p * mu) continue;
        EXPECT_LT(mmc_wait({p, g1, mu}), mmc_wait({p, g2, mu}));
        EXPECT_GT(mmc_wait({p, g1, mu}), mmc_wait({p + 1, g1, mu}));
        ++cases;
    }
    EXPECT_GE(cases, 1000);
}

TEST(MmcWait, LargeServerCountStaysFinite) {
    const double w = mmc_wait({150, 7.0, 0.05});
    EXPECT_TRUE(std::isfinite(w));
    EXPECT_GE(w, 0.0);
}

namespace {

PMedianInstance line_instance(int p) {
    PMedianInstance inst;
    inst.p = p;
    inst.weights = {1, 1, 4};
    const double depots[] = {0.0, 2.0};
    for (double x : {0.0, 1.0, 2.0}) inst.distances.push_back({std::abs(x - depots[0]), std::abs(x - depots[1])});
    return inst;
}

}  // namespace

TEST(GreedyAdd, FirstPickIsOneMedian) {
    const PMedianSolution s = greedy_add(line_instance(1));
    EXPECT_EQ(s.chosen, std::vector<int>{1});
    EXPECT_DOUBLE_EQ(s.score, 3.0);
    EXPECT_DOUBLE_EQ(pmedian_cost(line_instance(1), {0}), 9.0);
}

TEST(GreedyAdd, SecondPick) {
    const PMedianSolution s = greedy_add(line_instance(2));
    EXPECT_EQ(s.chosen, (std::vector<int>{1, 0}));
    EXPECT_DOUBLE_EQ(s.score, 1.0);
    EXPECT_EQ(s.score_history, (std::vector<double>{3.0, 1.0}));
}

TEST(GreedyAdd, SaturationOpensEverything) {
    Rng rng(2);
    PMedianInstance inst = oracle::random_instance(rng);
    inst.p = static_cast<int>(inst.distances[0].size());
    const PMedianSolution s = greedy_add(inst);
    std::vector<int> all(inst.p);
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> chosen = s.chosen;
    std::sort(chosen.begin(), chosen.end());
    EXPECT_EQ(chosen, all);
    EXPECT_DOUBLE_EQ(s.score, oracle::cost(inst, all));
}

TEST(GreedyAdd, Errors) {
    PMedianInstance inst = line_instance(3);
    EXPECT_THROW(greedy_add(inst), Error);
    inst.p = 1;
    inst.distances[1].pop_back();
    EXPECT_THROW(greedy_add(inst), Error);
}

TEST(GreedyAdd, MatchesBruteForceOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const PMedianInstance inst = oracle::random_instance(rng);
        const PMedianSolution s = greedy_add(inst);
        EXPECT_EQ(s.chosen, oracle::greedy_add(inst)) << "trial " << trial;
        EXPECT_NEAR(s.score, oracle::cost(inst, s.chosen), 1e-9);
        const auto [k, c] = oracle::one_median(inst);
        EXPECT_EQ(s.chosen[0], k);
        EXPECT_NEAR(s.score_history[0], c, 1e-9);
        for (std::size_t i = 1; i < s.score_history.size(); ++i)
            EXPECT_LE(s.score_history[i], s.score_history[i - 1]);
    }
}

TEST(Forest, MemorizesWithOneUnboundedTree) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        x.push_back({static_cast<double>(i % 7), rng.uniform(0, 1)});
        y.push_back(rng.uniform(100, 900));
    }
    ForestHyperparams hp;
    hp.n_trees = 1;
    hp.bootstrap = false;
    hp.max_features = 2;
    const ForestModel m = train_forest(x, y, hp, 3);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(m.predict(x[i]), y[i]);
}

TEST(Forest, ConstantLabel) {
    std::vector<std::vector<double>> x = {{1, 0.1}, {2, 0.5}, {3, 0.2}, {4, 0.9}};
    const std::vector<double> y(4, 321.0);
    const ForestModel m = train_forest(x, y, {}, 9);
    for (double p = 0; p < 6; p += 0.5) EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{p, 0.3}), 321.0);
}

TEST(Forest, Errors) {
    EXPECT_THROW(train_forest({}, {}, {}, 1), Error);
    EXPECT_THROW(train_forest({{1.0}}, {1.0, 2.0}, {}, 1), Error);
    EXPECT_THROW(train_forest({{1.0}, {1.0, 2.0}}, {1.0, 2.0}, {}, 1), Error);
    const ForestModel m = train_forest({{1.0}, {2.0}}, {1.0, 2.0}, {}, 1);
    EXPECT_THROW(m.predict(std::vector<double>{1.0, 2.0}), Error);
}

TEST(Forest, PredictionsWithinLabelRangeAndDeterministic) {
    int cases = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<std::vector<double>> x;
        std::vector<double> y;
        for (int i = 0; i < 40; ++i) {
            x.push_back({static_cast<double>(1 + rng.below(6)), rng.uniform(0.0, 0.3)});
            y.push_back(rng.uniform(0, 2000));
        }
        ForestHyperparams hp;
        hp.n_trees = 20;
        const ForestModel m = train_forest(x, y, hp, seed);
        const ForestModel again = train_forest(x, y, hp, seed);
        const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
        for (int q = 0; q < 60; ++q) {
            const std::vector<double> probe = {rng.uniform(0, 8), rng.uniform(-0.1, 0.5)};
            const double v = m.predict(probe);
            EXPECT_GE(v, *lo);
            EXPECT_LE(v, *hi);
            EXPECT_EQ(v, again.predict(probe));
            ++cases;
        }
    }
    EXPECT_GE(cases, 1000);
}

TEST(Forest, LearnsSimpleFunction) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int p = 1; p <= 6; ++p)
        for (int g = 0; g < 20; ++g) {
            x.push_back({static_cast<double>(p), g * 0.01});
            y.push_back(1000.0 / p + 500.0 * g * 0.01);
        }
    const ForestModel m = train_forest(x, y, {}, 4);
    EXPECT_NEAR(m.predict(std::vector<double>{2.0, 0.1}), 550.0, 60.0);
    EXPECT_GT(m.predict(std::vector<double>{1.0, 0.1}), m.predict(std::vector<double>{6.0, 0.1}));
}

namespace {

struct SurrogateWorld {
    Simulator sim = make_sim(3, 4, {0, 3, 5, 6, 8, 11});
    Region region;
    PoissonModel model;

    SurrogateWorld() {
        region.id = 0;
        for (CellId c = 0; c < 12; ++c) region.cell_ids.push_back(c);
        region.depot_ids = {0, 1, 2, 3, 4, 5};
        model.rate_per_min.assign(12, 0.004);
        model.rate_per_min[4] = 0.02;
    }
};

}  // namespace

TEST(Surrogate, SampleCount) {
    SurrogateWorld w;
    TrainingChainOptions opt;
    opt.n_chains = 5;
    opt.horizon_s = 6 * 3600.0;
    const auto chains = sample_training_chains(w.model, w.region, opt, 1);
    for (const auto& c : chains) ASSERT_FALSE(c.chain.incidents.empty());
    const auto ps = all_agent_counts(w.sim, w.region);
    EXPECT_EQ(ps.size(), 6u);
    const auto samples = generate_training_data(w.sim, w.region, w.model, chains, ps);
    EXPECT_EQ(samples.size(), 30u);
    for (const auto& s : samples) EXPECT_GE(s.label, 0.0);
}

TEST(Surrogate, EmptyChainIsDropped) {
    SurrogateWorld w;
    TrainingChain empty;
    empty.chain.t_end = 3600.0;
    TrainingChain one;
    one.chain = make_chain({{10.0, 4}}, 3600.0);
    one.gamma = 0.05;
    const std::vector<TrainingChain> chains = {empty, one};
    const std::vector<int> ps = {1, 2};
    const auto samples = generate_training_data(w.sim, w.region, w.model, chains, ps);
    ASSERT_EQ(samples.size(), 2u);
    for (const auto& s : samples) EXPECT_EQ(s.gamma, 0.05);
}

TEST(Surrogate, MoreAgentsRespondFaster) {
    SurrogateWorld w;
    TrainingChainOptions opt;
    opt.n_chains = 25;
    opt.horizon_s = 12 * 3600.0;
    const auto chains = sample_training_chains(w.model, w.region, opt, 2);
    const std::vector<int> ps = {1, 6};
    const auto samples = generate_training_data(w.sim, w.region, w.model, chains, ps);
    double one = 0, six = 0;
    int n1 = 0, n6 = 0;
    for (const auto& s : samples) (s.p == 1 ? (one += s.label, n1++) : (six += s.label, n6++));
    ASSERT_GE(n1, 20);
    EXPECT_LE(six / n6, one / n1);
}

TEST(Surrogate, Errors) {
    SurrogateWorld w;
    Region bare = w.region;
    bare.depot_ids.clear();
    const std::vector<TrainingChain> none;
    const std::vector<int> ps = {1};
    EXPECT_THROW(generate_training_data(w.sim, bare, w.model, none, ps), Error);
    const std::vector<int> too_many = {7};
    EXPECT_THROW(generate_training_data(w.sim, w.region, w.model, none, too_many), Error);
}

TEST(Surrogate, PlacementFollowsDemand) {
    SurrogateWorld w;
    // Demand concentrates in cell 4, next to the depot in cell 5.
    EXPECT_EQ(place_agents(w.sim, w.region, w.model, 1), std::vector<DepotId>{2});
}

TEST(Estimators, QueueAndForest) {
    const QueueWaitEstimator q(0.05);
    EXPECT_NEAR(q.expected_wait_s(0, 1, 0.025), 1200.0, 1e-6);
    std::vector<SurrogateSample> samples;
    for (int p = 1; p <= 3; ++p) samples.push_back({0, p, 0.1, 100.0 * p});
    const ForestWaitEstimator f({{0, train_surrogate(samples, {}, 1)}});
    EXPECT_EQ(f.expected_wait_s(0, 0, 0.1), kInf);
    EXPECT_THROW(f.expected_wait_s(1, 1, 0.1), Error);
    EXPECT_GE(f.expected_wait_s(0, 2, 0.1), 100.0);
}
