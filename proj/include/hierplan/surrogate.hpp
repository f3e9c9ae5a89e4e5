#pragma once

#include <map>
#include <span>
#include <vector>

#include "hierplan/demand.hpp"
#include "hierplan/dispatch.hpp"
#include "hierplan/forest.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/waittime.hpp"

namespace hierplan {

struct SurrogateSample {
    RegionId region = 0;
    int p = 0;
    double gamma = 0.0;  // per minute
    double label = 0.0;  // mean response time, seconds
};

// A sampled chain together with the region arrival rate it was drawn at.
struct TrainingChain {
    IncidentChain chain;
    double gamma = 0.0;
};

struct TrainingChainOptions {
    int n_chains = 40;
    double horizon_s = 24.0 * 3600.0;
    // Each chain scales the region's rates by a factor drawn uniformly here,
    // so the samples cover a range of arrival rates.
    double rate_scale_min = 0.5;
    double rate_scale_max = 3.0;
};

inline std::vector<TrainingChain> sample_training_chains(const PoissonModel& model, const Region& region,
                                                         const TrainingChainOptions& opt, std::uint64_t seed) {
    const PoissonModel local = model.restricted_to(region);
    std::vector<TrainingChain> out;
    for (int i = 0; i < opt.n_chains; ++i) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(region.id), static_cast<std::uint64_t>(i));
        const double scale = opt.rate_scale_min + (opt.rate_scale_max - opt.rate_scale_min) * hashed_uniform(s, 0);
        PoissonModel scaled = local;
        for (double& r : scaled.rate_per_min) r *= scale;
        out.push_back({sample_chain(scaled, 0.0, opt.horizon_s, s), region_rate(scaled, region)});
    }
    return out;
}

// Candidate slots of a region: each depot repeated once per unit of capacity.
inline std::vector<DepotId> depot_slots(const Simulator& sim, const Region& region) {
    std::vector<DepotId> slots;
    for (DepotId d : region.depot_ids)
        for (int c = 0; c < sim.depot(d).capacity; ++c) slots.push_back(d);
    return slots;
}

// p-median placement of p agents over the region's depots, demand weighted by
// cell rates and distance measured in travel time.
inline std::vector<DepotId> place_agents(const Simulator& sim, const Region& region, const PoissonModel& model, int p) {
    const std::vector<DepotId> slots = depot_slots(sim, region);
    PMedianInstance inst;
    inst.p = p;
    for (CellId c : region.cell_ids) {
        inst.weights.push_back(model.rate(c));
        std::vector<double> row;
        for (DepotId d : slots) row.push_back(sim.travel().time_s(c, sim.depot(d).cell));
        inst.distances.push_back(std::move(row));
    }
    const PMedianSolution sol = greedy_add(inst);
    std::vector<DepotId> out;
    for (int k : sol.chosen) out.push_back(slots[static_cast<std::size_t>(k)]);
    return out;
}

// For every (chain, p): place p agents by Greedy-Add, replay the chain's
// in-region incidents under greedy dispatch with no re-allocation, and label
// the sample with the mean response time. Chains with no in-region incident
// are dropped.
inline std::vector<SurrogateSample> generate_training_data(const Simulator& sim, const Region& region,
                                                           const PoissonModel& model,
                                                           std::span<const TrainingChain> chains,
                                                           std::span<const int> p_values) {
    if (region.depot_ids.empty()) throw Error(concat("region ", region.id, " has no depots"));
    const auto slots = depot_slots(sim, region);
    std::vector<bool> in_region(static_cast<std::size_t>(sim.grid().size()), false);
    for (CellId c : region.cell_ids) in_region[static_cast<std::size_t>(c)] = true;

    std::vector<SurrogateSample> out;
    for (int p : p_values) {
        if (p < 1 || static_cast<std::size_t>(p) > slots.size()) {
            throw Error(concat("region ", region.id, " cannot host ", p, " agents"));
        }
        const std::vector<DepotId> placement = place_agents(sim, region, model, p);
        for (const auto& tc : chains) {
            IncidentChain local;
            local.t_start = tc.chain.t_start;
            local.t_end = tc.chain.t_end;
            for (const auto& inc : tc.chain.incidents)
                if (in_region[static_cast<std::size_t>(inc.cell)]) local.incidents.push_back(inc);
            if (local.incidents.empty()) continue;

            SimState s;
            s.clock = local.t_start;
            for (int a = 0; a < p; ++a) s.agents.push_back(sim.make_agent(a, placement[static_cast<std::size_t>(a)], region.id));
            const RunResult rr = sim.run(local, std::move(s), greedy_policy());
            double sum = 0.0;
            for (const auto& r : rr.records) sum += r.response_s;
            out.push_back({region.id, p, tc.gamma, sum / static_cast<double>(rr.records.size())});
        }
    }
    return out;
}

inline std::vector<int> all_agent_counts(const Simulator& sim, const Region& region) {
    std::vector<int> ps;
    const int n = static_cast<int>(depot_slots(sim, region).size());
    for (int p = 1; p <= n; ++p) ps.push_back(p);
    return ps;
}

inline ForestModel train_surrogate(std::span<const SurrogateSample> samples, const ForestHyperparams& hp,
                                   std::uint64_t seed) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& s : samples) {
        x.push_back({static_cast<double>(s.p), s.gamma});
        y.push_back(s.label);
    }
    return train_forest(x, y, hp, seed);
}

inline double predict_wait(const ForestModel& model, int p, double gamma) {
    const double x[2] = {static_cast<double>(p), gamma};
    return model.predict(x);
}

// One forest per region.
class ForestWaitEstimator final : public WaitEstimator {
public:
    explicit ForestWaitEstimator(std::map<RegionId, ForestModel> models) : models_(std::move(models)) {}

    double expected_wait_s(RegionId region, int p, double gamma_per_min) const override {
        if (p < 1) return kInf;
        auto it = models_.find(region);
        if (it == models_.end()) throw Error(concat("no surrogate model for region ", region));
        return predict_wait(it->second, p, gamma_per_min);
    }

    const std::map<RegionId, ForestModel>& models() const { return models_; }

private:
    std::map<RegionId, ForestModel> models_;
};

}  // namespace hierplan
