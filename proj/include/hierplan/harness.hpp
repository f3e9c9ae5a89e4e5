#pragma once

#include <algorithm>
#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hierplan/config.hpp"
#include "hierplan/demand.hpp"
#include "hierplan/dispatch.hpp"
#include "hierplan/highlevel.hpp"
#include "hierplan/io.hpp"
#include "hierplan/lowlevel.hpp"
#include "hierplan/policy.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/surrogate.hpp"
#include "hierplan/travel.hpp"
#include "hierplan/waittime.hpp"

namespace hierplan {

// Stream tags for derive_seed so each consumer of a seed gets its own stream.
namespace stream {
inline constexpr std::uint64_t history = 0x4849;
inline constexpr std::uint64_t depots = 0x4450;
inline constexpr std::uint64_t jitter = 0x4a54;
inline constexpr std::uint64_t eval = 0x4556;
inline constexpr std::uint64_t spikes = 0x5350;
inline constexpr std::uint64_t failures = 0x4641;
inline constexpr std::uint64_t planner = 0x504c;
inline constexpr std::uint64_t train = 0x5452;
inline constexpr std::uint64_t holdout = 0x484f;
inline constexpr std::uint64_t forest = 0x464f;
inline constexpr std::uint64_t segment = 0x5345;
}  // namespace stream

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
    std::size_t count = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double p9 = 0.0;
    double p91 = 0.0;
    double bin_s = 60.0;
    // counts[i] covers [i * bin_s, (i + 1) * bin_s).
    std::vector<std::size_t> histogram;
};

// Nearest-rank percentile of sorted data: the value at rank ceil(q/100 * n).
inline double nearest_rank(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw Error("percentile of an empty sample");
    if (q <= 0.0) return sorted.front();
    const double rank = std::ceil(q / 100.0 * static_cast<double>(sorted.size()) - 1e-9);
    const std::size_t i = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(sorted.size())));
    return sorted[i - 1];
}

inline Metrics compute_metrics(std::vector<double> values, double bin_s) {
    Metrics m;
    m.bin_s = bin_s;
    m.count = values.size();
    if (values.empty()) return m;
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    m.mean = sum / static_cast<double>(values.size());
    m.min = values.front();
    m.max = values.back();
    m.q1 = nearest_rank(values, 25.0);
    m.median = nearest_rank(values, 50.0);
    m.q3 = nearest_rank(values, 75.0);
    m.p9 = nearest_rank(values, 9.0);
    m.p91 = nearest_rank(values, 91.0);
    m.histogram.assign(static_cast<std::size_t>(std::floor(m.max / bin_s)) + 1, 0);
    for (double v : values) ++m.histogram[static_cast<std::size_t>(std::floor(std::max(0.0, v) / bin_s))];
    return m;
}

inline std::vector<double> response_times(std::span<const ResponseRecord> records) {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.response_s);
    return out;
}

inline nlohmann::json to_json(const Metrics& m) {
    return {{"count", m.count}, {"mean", m.mean},     {"min", m.min}, {"max", m.max},
            {"q1", m.q1},       {"median", m.median}, {"q3", m.q3},   {"p9", m.p9},
            {"p91", m.p91},     {"histogram", {{"bin_s", m.bin_s}, {"counts", m.histogram}}}};
}

// ---------------------------------------------------------------------------
// World: everything fixed by the inputs and the base seed

struct World {
    std::shared_ptr<const Grid> grid;
    std::shared_ptr<const Simulator> sim;
    std::vector<IncidentRecord> history;
    PoissonModel model;
    int n_agents = 0;
    // Generating rates of a synthetic city (empty for file inputs).
    PoissonModel truth;
};

inline PoissonModel synthetic_rates(const Grid& grid, const SyntheticCityConfig& sc) {
    PoissonModel m;
    const std::size_t n = static_cast<std::size_t>(grid.size());
    std::vector<double> w(n, 0.0);
    double hot_total = 0.0;
    for (const auto& cell : grid.cells()) {
        double v = 0.0;
        for (const auto& h : sc.hotspots) {
            const double dr = cell.row - h.row;
            const double dc = cell.col - h.col;
            v += h.weight * std::exp(-(dr * dr + dc * dc) / (2.0 * h.sigma_cells * h.sigma_cells));
        }
        w[static_cast<std::size_t>(cell.id)] = v;
        hot_total += v;
    }
    m.rate_per_min.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        const double hot = hot_total > 0.0 ? w[c] / hot_total : 0.0;
        const double share = sc.background_fraction / static_cast<double>(n) + (1.0 - sc.background_fraction) * hot;
        m.rate_per_min[c] = sc.total_rate_per_min * (hot_total > 0.0 ? share : 1.0 / static_cast<double>(n));
    }
    m.fitted_over_minutes = sc.history_days * 1440.0;
    return m;
}

// Depots on a near-regular lattice, each nudged by up to one cell.
inline std::vector<Depot> synthetic_depots(const Grid& grid, int n, int capacity, std::uint64_t seed) {
    if (n < 1 || n > grid.size()) throw Error(concat("cannot place ", n, " depots on ", grid.size(), " cells"));
    const int rows = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n) * grid.n_rows() / grid.n_cols()))));
    const int cols = (n + rows - 1) / rows;
    Rng rng(derive_seed(seed, stream::depots));
    std::vector<bool> used(static_cast<std::size_t>(grid.size()), false);
    std::vector<Depot> out;
    for (int i = 0; i < rows * cols && static_cast<int>(out.size()) < n; ++i) {
        const int r0 = static_cast<int>((i / cols + 0.5) * grid.n_rows() / rows);
        const int c0 = static_cast<int>((i % cols + 0.5) * grid.n_cols() / cols);
        const int r = std::clamp(r0 + static_cast<int>(rng.below(3)) - 1, 0, grid.n_rows() - 1);
        const int c = std::clamp(c0 + static_cast<int>(rng.below(3)) - 1, 0, grid.n_cols() - 1);
        CellId cell = grid.id_of(r, c);
        if (used[static_cast<std::size_t>(cell)]) cell = grid.id_of(r0, c0);
        while (used[static_cast<std::size_t>(cell)]) cell = (cell + 1) % grid.size();
        used[static_cast<std::size_t>(cell)] = true;
        out.push_back({static_cast<DepotId>(out.size()), cell, capacity});
    }
    return out;
}

// 2024-01-01T00:00:00Z, the start of synthetic history.
inline constexpr double kSyntheticEpoch = 1704067200.0;

struct SyntheticCity {
    std::shared_ptr<const Grid> grid;
    std::vector<Depot> depots;
    std::vector<RawIncident> incidents;
    PoissonModel truth;
};

inline SyntheticCity make_synthetic_city(const SyntheticCityConfig& sc, int depot_capacity, std::uint64_t seed) {
    SyntheticCity city;
    city.grid = std::make_shared<const Grid>(LatLon{sc.origin_lat, sc.origin_lon}, sc.n_rows, sc.n_cols, sc.cell_size_miles);
    city.truth = synthetic_rates(*city.grid, sc);
    city.depots = synthetic_depots(*city.grid, sc.n_depots, depot_capacity, seed);
    const double horizon = sc.history_days * 1440.0 * kSecondsPerMinute;
    const IncidentChain hist = sample_chain(city.truth, 0.0, horizon, derive_seed(seed, stream::history));
    Rng jitter(derive_seed(seed, stream::jitter));
    for (const auto& inc : hist.incidents) {
        const Cell& cell = city.grid->cell(inc.cell);
        // Stay strictly inside the cell so locating the point recovers it.
        const double h = 0.5 * sc.cell_size_miles * (1.0 - 1e-6);
        const Point p{cell.center.x + jitter.uniform(-h, h), cell.center.y + jitter.uniform(-h, h)};
        city.incidents.push_back({kSyntheticEpoch + std::floor(inc.time), city.grid->projection().to_geo(p)});
    }
    return city;
}

inline std::string depots_csv(const std::vector<Depot>& depots, const Grid& grid) {
    std::string out = "depot_id,lat,lon,capacity\n";
    for (const auto& d : depots) {
        const LatLon p = grid.cell(d.cell).centroid;
        out += concat(d.id, ",", format_double(p.lat), ",", format_double(p.lon), ",", d.capacity, "\n");
    }
    return out;
}

inline std::string incidents_csv(const std::vector<RawIncident>& incidents) {
    std::string out = "timestamp,lat,lon\n";
    for (const auto& r : incidents) {
        out += concat(format_iso8601(r.time), ",", format_double(r.where.lat), ",", format_double(r.where.lon), "\n");
    }
    return out;
}

inline SimParams sim_params(const ExperimentConfig& cfg) {
    SimParams p;
    p.service_s = cfg.service_minutes * kSecondsPerMinute;
    p.dropoff_s = cfg.dropoff_minutes * kSecondsPerMinute;
    p.service_mode = cfg.exponential_service ? ServiceMode::exponential : ServiceMode::deterministic;
    p.service_seed = derive_seed(cfg.seed, 0x5356);
    return p;
}

inline World build_world(const ExperimentConfig& cfg) {
    World w;
    std::vector<Depot> depots;
    std::vector<RawIncident> raw;
    if (cfg.uses_synthetic_city()) {
        const SyntheticCity city = make_synthetic_city(cfg.synthetic.value_or(SyntheticCityConfig{}), cfg.depot_capacity, cfg.seed);
        w.grid = city.grid;
        depots = city.depots;
        raw = city.incidents;
        w.truth = city.truth;
    } else {
        raw = read_incidents_csv(cfg.incidents_csv);
        if (raw.empty()) throw ParseError(cfg.incidents_csv, 0, "no incidents");
        const auto raw_depots = read_depots_csv(cfg.depots_csv);
        if (raw_depots.empty()) throw ParseError(cfg.depots_csv, 0, "no depots");
        BoundingBox box;
        if (cfg.grid_box) {
            box = *cfg.grid_box;
        } else {
            box = {raw[0].where.lat, raw[0].where.lon, raw[0].where.lat, raw[0].where.lon};
            const auto grow = [&](LatLon p) {
                box.lat_min = std::min(box.lat_min, p.lat);
                box.lat_max = std::max(box.lat_max, p.lat);
                box.lon_min = std::min(box.lon_min, p.lon);
                box.lon_max = std::max(box.lon_max, p.lon);
            };
            for (const auto& r : raw) grow(r.where);
            for (const auto& d : raw_depots) grow(d.where);
            box.lat_max += 1e-6;
            box.lon_max += 1e-6;
        }
        w.grid = std::make_shared<const Grid>(build_grid(box, cfg.cell_size_miles));
        for (const auto& d : raw_depots) {
            try {
                depots.push_back({d.id, w.grid->locate(d.where), d.capacity});
            } catch (const OutOfGridError& e) {
                throw ParseError(cfg.depots_csv, 0, concat("depot ", d.id, ": ", e.what()));
            }
        }
    }
    w.history = to_records(raw, *w.grid, cfg.incidents_csv.empty() ? "synthetic incidents" : cfg.incidents_csv);

    double observed = cfg.observed_minutes;
    if (observed <= 0.0) {
        if (cfg.uses_synthetic_city()) {
            observed = cfg.synthetic.value_or(SyntheticCityConfig{}).history_days * 1440.0;
        } else {
            double lo = kInf, hi = -kInf;
            for (const auto& r : w.history) {
                lo = std::min(lo, r.time);
                hi = std::max(hi, r.time);
            }
            observed = (hi - lo) / kSecondsPerMinute;
            if (!(observed > 0.0)) throw Error("incident history spans no time; set observed_minutes");
        }
    }
    w.model = fit_poisson(w.history, *w.grid, observed);

    TravelModel travel = cfg.travel_csv.empty() ? TravelModel::euclidean(w.grid, cfg.speed_mph)
                                                : read_travel_csv(cfg.travel_csv, w.grid);
    w.sim = std::make_shared<const Simulator>(std::move(travel), std::move(depots), sim_params(cfg));
    w.n_agents = cfg.n_agents;
    long capacity = 0;
    for (const auto& d : w.sim->depots()) capacity += d.capacity;
    if (capacity < w.n_agents) throw Error(concat("depots hold ", capacity, " agents but n_agents is ", w.n_agents));
    return w;
}

inline Segmentation segment_world(const World& w, int k, std::uint64_t seed) {
    std::vector<Point> pts;
    pts.reserve(w.history.size());
    for (const auto& r : w.history) pts.push_back(w.grid->projection().to_plane(r.where));
    return segment_regions(*w.grid, pts, w.sim->depots(), k, derive_seed(seed, stream::segment));
}

// ---------------------------------------------------------------------------
// Surrogate

struct SurrogateBundle {
    std::vector<SurrogateSample> samples;
    std::map<RegionId, ForestModel> forests;
};

inline std::vector<SurrogateSample> surrogate_samples(const World& w, const Segmentation& seg, const SurrogateConfig& sc,
                                                      int n_chains, std::uint64_t seed) {
    TrainingChainOptions opt;
    opt.n_chains = n_chains;
    opt.horizon_s = sc.horizon_minutes * kSecondsPerMinute;
    opt.rate_scale_min = sc.rate_scale_min;
    opt.rate_scale_max = sc.rate_scale_max;
    std::vector<SurrogateSample> out;
    for (const auto& region : seg.regions) {
        if (region.depot_ids.empty()) continue;
        const auto chains = sample_training_chains(w.model, region, opt, seed);
        const auto s = generate_training_data(*w.sim, region, w.model, chains, all_agent_counts(*w.sim, region));
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

inline std::map<RegionId, ForestModel> train_forests(std::span<const SurrogateSample> samples, const ForestHyperparams& hp,
                                                     std::uint64_t seed) {
    std::map<RegionId, std::vector<SurrogateSample>> by_region;
    for (const auto& s : samples) by_region[s.region].push_back(s);
    std::map<RegionId, ForestModel> out;
    for (const auto& [r, s] : by_region) {
        out[r] = train_surrogate(s, hp, derive_seed(seed, stream::forest, static_cast<std::uint64_t>(r)));
    }
    return out;
}

inline SurrogateBundle train_surrogates(const World& w, const Segmentation& seg, const ExperimentConfig& cfg) {
    SurrogateBundle b;
    b.samples = surrogate_samples(w, seg, cfg.surrogate, cfg.surrogate.n_chains, derive_seed(cfg.seed, stream::train));
    b.forests = train_forests(b.samples, cfg.forest, cfg.seed);
    return b;
}

// ---------------------------------------------------------------------------
// Scenarios

// Square blocks of cells whose rate is multiplied over a window.
inline SpikeSchedule generate_spikes(const World& w, const ScenarioConfig& sc, double horizon_s, std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::spikes));
    SpikeSchedule out;
    const Grid& g = *w.grid;
    const double dur = std::min(sc.spike_duration_minutes * kSecondsPerMinute, horizon_s);
    const int side = std::clamp(sc.spike_block_cells, 1, std::min(g.n_rows(), g.n_cols()));
    for (int i = 0; i < sc.n_spikes; ++i) {
        const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.n_rows() - side + 1)));
        const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.n_cols() - side + 1)));
        Spike s;
        for (int r = r0; r < r0 + side; ++r)
            for (int c = c0; c < c0 + side; ++c) s.cells.push_back(g.id_of(r, c));
        s.start = rng.uniform() * (horizon_s - dur);
        s.end = s.start + dur;
        s.multiplier = rng.uniform(sc.spike_multiplier_min, sc.spike_multiplier_max);
        out.push_back(std::move(s));
    }
    validate(out);
    return out;
}

// n simultaneous failures of distinct agents. For a fixed seed the failed set
// for n is a prefix of the set for n + 1, and all share one start time.
inline std::vector<FailureEvent> generate_failures(int n_agents, int n, double hours, double horizon_s, std::uint64_t seed) {
    if (n < 0 || n >= n_agents) throw Error(concat("cannot fail ", n, " of ", n_agents, " agents"));
    Rng rng(derive_seed(seed, stream::failures));
    std::vector<AgentId> ids(static_cast<std::size_t>(n_agents));
    for (int i = 0; i < n_agents; ++i) ids[static_cast<std::size_t>(i)] = i;
    shuffle(ids, rng);
    const double dur = hours * 3600.0;
    const double start = rng.uniform() * std::max(0.0, horizon_s - dur);
    std::vector<FailureEvent> out;
    for (int i = 0; i < n; ++i) out.push_back({ids[static_cast<std::size_t>(i)], start, start + dur});
    return out;
}

// ---------------------------------------------------------------------------
// Runs

// Agents per region from the high-level allocation at base rates, each region
// filled by p-median placement over its depots.
inline SimState initial_state(const World& w, const Segmentation& seg, const WaitEstimator& estimator, double eta) {
    SimState s;
    const auto demand = region_demand(*w.sim, s, seg, w.model, {}, 0.0);
    const Allocation alloc = allocate(demand, eta, estimator, w.n_agents);
    AgentId next = 0;
    for (const auto& region : seg.regions) {
        const int p = alloc.at(region.id);
        if (p == 0) continue;
        for (DepotId d : place_agents(*w.sim, region, w.model, p)) s.agents.push_back(w.sim->make_agent(next++, d, region.id));
    }
    return s;
}

struct RunSpec {
    std::string policy;
    std::uint64_t seed = 0;
    int chain = 0;
    int n_failures = 0;
};

struct RunOutput {
    RunSpec spec;
    std::vector<ResponseRecord> records;
    int planning_calls = 0;
    int moves = 0;
    // Planning calls where some region held fewer agents than allocated, and
    // how many of those produced no cross-region move.
    int deficit_events = 0;
    int deficit_without_move = 0;
    std::vector<std::string> trace;
    double wall_s = 0.0;
};

struct RunContext {
    const World* world = nullptr;
    const Segmentation* seg = nullptr;
    const ExperimentConfig* cfg = nullptr;
    const std::map<RegionId, ForestModel>* forests = nullptr;
};

inline LowLevelOptions lowlevel_options(const ExperimentConfig& cfg) {
    LowLevelOptions o;
    o.n_chains = cfg.n_chains;
    o.iterations = cfg.mcts_iterations;
    o.c = cfg.c;
    o.alpha = cfg.alpha;
    o.max_depth = cfg.max_tree_depth;
    o.horizon_s = cfg.planning_horizon_minutes * kSecondsPerMinute;
    o.workers = 1;
    return o;
}

inline IncidentChain evaluation_chain(const World& w, const ExperimentConfig& cfg, std::uint64_t seed, int chain,
                                      const SpikeSchedule& spikes) {
    return sample_chain(w.model, 0.0, cfg.eval_horizon_minutes * kSecondsPerMinute,
                        derive_seed(seed, stream::eval, static_cast<std::uint64_t>(chain)), spikes);
}

inline SpikeSchedule scenario_spikes(const World& w, const ExperimentConfig& cfg, std::uint64_t seed, int chain) {
    if (cfg.scenario.kind != ScenarioKind::spikes) return {};
    if (!cfg.scenario.spikes_file.empty()) return spikes_from_json(detail::read_json_file(cfg.scenario.spikes_file));
    return generate_spikes(w, cfg.scenario, cfg.eval_horizon_minutes * kSecondsPerMinute,
                           derive_seed(seed, static_cast<std::uint64_t>(chain)));
}

inline RunOutput run_one(const RunContext& ctx, const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    const World& w = *ctx.world;
    const ExperimentConfig& cfg = *ctx.cfg;
    const SpikeSchedule spikes = scenario_spikes(w, cfg, spec.seed, spec.chain);
    const IncidentChain chain = evaluation_chain(w, cfg, spec.seed, spec.chain, spikes);

    RunOptions ro;
    ro.max_realloc_gap_s = cfg.max_realloc_gap_minutes * kSecondsPerMinute;
    if (spec.n_failures > 0) {
        ro.failures = generate_failures(w.n_agents, spec.n_failures, cfg.scenario.failure_hours,
                                        cfg.eval_horizon_minutes * kSecondsPerMinute,
                                        derive_seed(spec.seed, static_cast<std::uint64_t>(spec.chain)));
    }

    const QueueWaitEstimator queue(cfg.mu_per_min());
    SimState init = initial_state(w, *ctx.seg, queue, cfg.mu_per_min());

    RunOutput out;
    out.spec = spec;
    auto log = std::make_shared<PlanningLog>();
    AllocationPolicy alloc;
    if (spec.policy != "baseline") {
        auto setup = std::make_shared<PlannerSetup>();
        setup->segmentation = ctx.seg;
        setup->model = w.model;
        setup->spikes = spikes;
        setup->lowlevel = lowlevel_options(cfg);
        setup->eta = cfg.mu_per_min();
        setup->seed = derive_seed(spec.seed, stream::planner, static_cast<std::uint64_t>(spec.chain));
        if (cfg.trace) setup->trace = [&out](const std::string& line) { out.trace.push_back(line); };
        if (spec.policy == "ll_only") {
            alloc = lowlevel_policy(setup, log);
        } else {
            if (spec.policy == "hl_ll_forest") {
                if (!ctx.forests) throw Error("hl_ll_forest needs trained surrogate models");
                setup->estimator = std::make_shared<ForestWaitEstimator>(*ctx.forests);
            } else {
                setup->estimator = std::make_shared<QueueWaitEstimator>(cfg.mu_per_min());
            }
            alloc = hierarchical_policy(setup, log);
        }
    }
    RunResult rr = w.sim->run(chain, std::move(init), greedy_policy(), alloc, ro);
    out.records = std::move(rr.records);
    out.planning_calls = rr.planning_calls;
    for (const auto& rec : log->records) {
        out.moves += static_cast<int>(rec.moves.size());
        bool deficit = false;
        for (const auto& [r, target] : rec.allocation) {
            auto it = rec.counts_before.find(r);
            if ((it == rec.counts_before.end() ? 0 : it->second) < target) deficit = true;
        }
        if (deficit) {
            ++out.deficit_events;
            if (rec.moves.empty()) ++out.deficit_without_move;
        }
    }
    out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline std::vector<RunOutput> run_matrix(const RunContext& ctx, const std::vector<RunSpec>& specs, int workers) {
    std::vector<RunOutput> out(specs.size());
    parallel_for(specs.size(), workers, [&](std::size_t i) { out[i] = run_one(ctx, specs[i]); });
    return out;
}

inline std::vector<RunSpec> experiment_specs(const ExperimentConfig& cfg, int n_failures) {
    std::vector<RunSpec> specs;
    for (const auto& p : cfg.policies)
        for (auto seed : cfg.seeds)
            for (int c = 0; c < cfg.n_eval_chains; ++c) specs.push_back({p, seed, c, n_failures});
    return specs;
}

inline bool needs_forest(const ExperimentConfig& cfg) {
    return std::find(cfg.policies.begin(), cfg.policies.end(), "hl_ll_forest") != cfg.policies.end();
}

struct ExperimentReport {
    std::vector<RunOutput> runs;
    double bin_s = 60.0;

    std::vector<std::string> policies() const {
        std::vector<std::string> out;
        for (const auto& r : runs)
            if (std::find(out.begin(), out.end(), r.spec.policy) == out.end()) out.push_back(r.spec.policy);
        return out;
    }

    Metrics pooled(const std::string& policy, int n_failures = -1) const {
        std::vector<double> v;
        for (const auto& r : runs) {
            if (r.spec.policy != policy || (n_failures >= 0 && r.spec.n_failures != n_failures)) continue;
            for (const auto& rec : r.records) v.push_back(rec.response_s);
        }
        return compute_metrics(std::move(v), bin_s);
    }
};

inline std::string run_file_name(const RunSpec& s) {
    std::string name = concat(s.policy, "_seed", s.seed, "_chain", s.chain);
    if (s.n_failures > 0) name += concat("_fail", s.n_failures);
    return name;
}

inline nlohmann::json to_json(const ExperimentReport& rep, const std::vector<int>& failure_levels = {}) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : rep.runs) {
        runs.push_back({{"policy", r.spec.policy},
                        {"seed", r.spec.seed},
                        {"chain", r.spec.chain},
                        {"n_failures", r.spec.n_failures},
                        {"planning_calls", r.planning_calls},
                        {"moves", r.moves},
                        {"deficit_events", r.deficit_events},
                        {"deficit_without_move", r.deficit_without_move},
                        {"metrics", to_json(compute_metrics(response_times(r.records), rep.bin_s))}});
    }
    nlohmann::json pooled = nlohmann::json::object();
    for (const auto& p : rep.policies()) {
        if (failure_levels.empty()) {
            pooled[p] = to_json(rep.pooled(p));
        } else {
            for (int n : failure_levels) pooled[p][std::to_string(n)] = to_json(rep.pooled(p, n));
        }
    }
    return {{"percentiles", "nearest-rank"}, {"runs", runs}, {"pooled", pooled}};
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const World& w, const Segmentation& seg,
                                       const std::map<RegionId, ForestModel>* forests = nullptr) {
    RunContext ctx{&w, &seg, &cfg, forests};
    const int n_fail = cfg.scenario.kind == ScenarioKind::failures ? cfg.scenario.n_failures : 0;
    ExperimentReport rep;
    rep.bin_s = cfg.histogram_bin_s;
    rep.runs = run_matrix(ctx, experiment_specs(cfg, n_fail), cfg.workers);
    return rep;
}

// Every policy at 0..n simultaneous failures.
inline ExperimentReport inject_failures(const ExperimentConfig& cfg, const World& w, const Segmentation& seg, int n,
                                        const std::map<RegionId, ForestModel>* forests = nullptr) {
    if (n < 0 || n >= w.n_agents) throw Error(concat("n_failures must lie in [0, ", w.n_agents, ")"));
    RunContext ctx{&w, &seg, &cfg, forests};
    std::vector<RunSpec> specs;
    for (int f = 0; f <= n; ++f) {
        const auto s = experiment_specs(cfg, f);
        specs.insert(specs.end(), s.begin(), s.end());
    }
    ExperimentReport rep;
    rep.bin_s = cfg.histogram_bin_s;
    rep.runs = run_matrix(ctx, specs, cfg.workers);
    return rep;
}

// ---------------------------------------------------------------------------
// Estimator comparison

struct EstimatorComparison {
    int k = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    // Held-out samples where the queue model predicts no steady state.
    std::size_t n_unstable = 0;
    double mse_queue = 0.0;
    double mse_forest = 0.0;
};

// Scores both estimators on held-out samples. Samples where the queue model
// is unstable (infinite wait) are excluded from both scores and counted.
inline EstimatorComparison compare_estimators(const ExperimentConfig& cfg, const World& w, int k) {
    const Segmentation seg = segment_world(w, k, cfg.seed);
    EstimatorComparison out;
    out.k = k;
    const auto train = surrogate_samples(w, seg, cfg.surrogate, cfg.surrogate.n_chains, derive_seed(cfg.seed, stream::train));
    const auto test =
        surrogate_samples(w, seg, cfg.surrogate, cfg.surrogate.holdout_chains, derive_seed(cfg.seed, stream::holdout));
    out.n_train = train.size();
    const ForestWaitEstimator forest(train_forests(train, cfg.forest, cfg.seed));
    const QueueWaitEstimator queue(cfg.mu_per_min());
    double sq = 0.0, sf = 0.0;
    for (const auto& s : test) {
        const double q = queue.expected_wait_s(s.region, s.p, s.gamma);
        if (!std::isfinite(q)) {
            ++out.n_unstable;
            continue;
        }
        const double f = forest.expected_wait_s(s.region, s.p, s.gamma);
        sq += (q - s.label) * (q - s.label);
        sf += (f - s.label) * (f - s.label);
        ++out.n_test;
    }
    if (out.n_test == 0) throw Error("no held-out sample has a finite queue estimate");
    out.mse_queue = sq / static_cast<double>(out.n_test);
    out.mse_forest = sf / static_cast<double>(out.n_test);
    return out;
}

inline nlohmann::json to_json(const EstimatorComparison& e) {
    return {{"k", e.k},
            {"n_train", e.n_train},
            {"n_test", e.n_test},
            {"n_unstable", e.n_unstable},
            {"mse_queue", e.mse_queue},
            {"mse_forest", e.mse_forest}};
}

}  // namespace hierplan
