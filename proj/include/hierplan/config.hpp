#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hierplan/core.hpp"
#include "hierplan/forest.hpp"
#include "hierplan/io.hpp"
#include "hierplan/spatial.hpp"

namespace hierplan {

enum class ScenarioKind { stationary, spikes, failures };

inline std::string_view to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::stationary: return "stationary";
        case ScenarioKind::spikes: return "spikes";
        case ScenarioKind::failures: return "failures";
    }
    return "?";
}

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::stationary;
    // Spike schedule file (minutes); when empty, spikes are generated.
    std::string spikes_file;
    int n_spikes = 2;
    double spike_multiplier_min = 2.0;
    double spike_multiplier_max = 5.0;
    double spike_duration_minutes = 240.0;
    // Spiking area: a square block of this many cells per side.
    int spike_block_cells = 4;
    int n_failures = 3;
    double failure_hours = 8.0;
};

struct Hotspot {
    double row = 0.0;
    double col = 0.0;
    double sigma_cells = 1.5;
    double weight = 1.0;
};

// A generated city used when no incident file is given.
struct SyntheticCityConfig {
    double origin_lat = 36.10;
    double origin_lon = -86.85;
    int n_rows = 10;
    int n_cols = 10;
    double cell_size_miles = 1.0;
    int n_depots = 12;
    double total_rate_per_min = 0.16;
    // Share of the rate spread uniformly over all cells.
    double background_fraction = 0.1;
    std::vector<Hotspot> hotspots = {{2.0, 2.0, 1.2, 1.0}, {7.0, 3.0, 1.2, 1.0}, {4.5, 7.5, 1.2, 1.0}};
    double history_days = 60.0;
};

struct SurrogateConfig {
    int n_chains = 40;
    int holdout_chains = 20;
    double horizon_minutes = 1440.0;
    double rate_scale_min = 0.5;
    double rate_scale_max = 3.0;
};

inline const std::vector<std::string>& known_policies() {
    static const std::vector<std::string> p = {"baseline", "ll_only", "hl_ll_queue", "hl_ll_forest"};
    return p;
}

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    std::optional<BoundingBox> grid_box;
    double cell_size_miles = 1.0;
    std::string incidents_csv;
    std::string depots_csv;
    std::string travel_csv;
    // 0 means the span between the first and last incident.
    double observed_minutes = 0.0;

    int k = 5;
    std::vector<int> k_values;
    int n_agents = 26;
    int depot_capacity = 1;
    double service_minutes = 20.0;
    double dropoff_minutes = 0.0;
    bool exponential_service = false;
    double speed_mph = 30.0;

    int mcts_iterations = 1000;
    int n_chains = 50;
    double alpha = 0.99995;
    double c = 1.44;
    double max_realloc_gap_minutes = 60.0;
    double planning_horizon_minutes = 60.0;
    int max_tree_depth = 2;

    int n_eval_chains = 5;
    double eval_horizon_minutes = 1440.0;
    ScenarioConfig scenario;
    std::vector<std::string> policies = {"baseline", "ll_only", "hl_ll_queue"};

    ForestHyperparams forest;
    SurrogateConfig surrogate;
    std::optional<SyntheticCityConfig> synthetic;

    int workers = 1;
    double histogram_bin_s = 60.0;
    bool trace = false;

    bool uses_synthetic_city() const { return incidents_csv.empty(); }
    double mu_per_min() const { return 1.0 / (service_minutes + dropoff_minutes); }

    void validate() const {
        if (seeds.empty()) throw Error("config: seeds must not be empty");
        if (k < 1) throw Error("config: k must be at least 1");
        for (int kv : k_values)
            if (kv < 1) throw Error("config: k_values must be positive");
        if (n_agents < 1) throw Error("config: n_agents must be at least 1");
        if (depot_capacity < 1) throw Error("config: depot_capacity must be at least 1");
        if (!(service_minutes > 0.0) || dropoff_minutes < 0.0) throw Error("config: bad service time");
        if (!(speed_mph > 0.0)) throw Error("config: speed_mph must be positive");
        if (mcts_iterations < 1 || n_chains < 1) throw Error("config: MCTS budgets must be positive");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("config: alpha must lie in (0, 1]");
        if (c < 0.0) throw Error("config: c must be non-negative");
        if (!(max_realloc_gap_minutes > 0.0)) throw Error("config: max_realloc_gap_minutes must be positive");
        if (!(planning_horizon_minutes > 0.0)) throw Error("config: planning_horizon_minutes must be positive");
        if (max_tree_depth < 1) throw Error("config: max_tree_depth must be at least 1");
        if (n_eval_chains < 1 || !(eval_horizon_minutes > 0.0)) throw Error("config: bad evaluation chains");
        if (workers < 1) throw Error("config: workers must be at least 1");
        if (!(histogram_bin_s > 0.0)) throw Error("config: histogram_bin_s must be positive");
        if (!incidents_csv.empty() && depots_csv.empty()) throw Error("config: incidents_csv needs depots_csv");
        for (const auto& p : policies) {
            if (std::find(known_policies().begin(), known_policies().end(), p) == known_policies().end()) {
                throw Error(concat("config: unknown policy '", p, "'"));
            }
        }
        if (scenario.spike_multiplier_min < 1.0 || scenario.spike_multiplier_max < scenario.spike_multiplier_min) {
            throw Error("config: bad spike multiplier range");
        }
        if (scenario.n_failures < 0 || scenario.n_failures >= n_agents) {
            throw Error("config: n_failures must lie in [0, n_agents)");
        }
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error(concat("config: ", where, " must be an object"));
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw Error(concat("config: unknown key '", key, "' in ", where));
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    ExperimentConfig c;
    try {
        detail::check_keys(j,
                           {"seed", "seeds", "grid", "incidents_csv", "depots_csv", "travel_csv", "observed_minutes", "k",
                            "k_values", "n_agents", "depot_capacity", "service_minutes", "dropoff_minutes",
                            "service_mode", "speed_mph", "mcts_iterations", "n_chains", "alpha", "c",
                            "max_realloc_gap_minutes", "planning_horizon_minutes", "max_tree_depth", "n_eval_chains",
                            "eval_horizon_minutes", "scenario", "policies", "forest", "surrogate", "synthetic",
                            "workers", "histogram_bin_s", "trace"},
                           "config");
        read(j, "seed", c.seed);
        read(j, "seeds", c.seeds);
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            detail::check_keys(g, {"lat_min", "lon_min", "lat_max", "lon_max", "cell_size_miles"}, "grid");
            BoundingBox b;
            b.lat_min = g.at("lat_min").get<double>();
            b.lon_min = g.at("lon_min").get<double>();
            b.lat_max = g.at("lat_max").get<double>();
            b.lon_max = g.at("lon_max").get<double>();
            c.grid_box = b;
            read(g, "cell_size_miles", c.cell_size_miles);
        }
        read(j, "incidents_csv", c.incidents_csv);
        read(j, "depots_csv", c.depots_csv);
        read(j, "travel_csv", c.travel_csv);
        read(j, "observed_minutes", c.observed_minutes);
        read(j, "k", c.k);
        read(j, "k_values", c.k_values);
        read(j, "n_agents", c.n_agents);
        read(j, "depot_capacity", c.depot_capacity);
        read(j, "service_minutes", c.service_minutes);
        read(j, "dropoff_minutes", c.dropoff_minutes);
        if (j.contains("service_mode")) {
            const auto m = j.at("service_mode").get<std::string>();
            if (m != "deterministic" && m != "exponential") throw Error(concat("config: unknown service_mode '", m, "'"));
            c.exponential_service = m == "exponential";
        }
        read(j, "speed_mph", c.speed_mph);
        read(j, "mcts_iterations", c.mcts_iterations);
        read(j, "n_chains", c.n_chains);
        read(j, "alpha", c.alpha);
        read(j, "c", c.c);
        read(j, "max_realloc_gap_minutes", c.max_realloc_gap_minutes);
        read(j, "planning_horizon_minutes", c.planning_horizon_minutes);
        read(j, "max_tree_depth", c.max_tree_depth);
        read(j, "n_eval_chains", c.n_eval_chains);
        read(j, "eval_horizon_minutes", c.eval_horizon_minutes);
        if (j.contains("scenario")) {
            const auto& s = j.at("scenario");
            detail::check_keys(s,
                               {"type", "spikes_file", "n_spikes", "spike_multiplier_min", "spike_multiplier_max",
                                "spike_duration_minutes", "spike_block_cells", "n_failures", "failure_hours"},
                               "scenario");
            const auto type = s.value("type", std::string("stationary"));
            if (type == "stationary") {
                c.scenario.kind = ScenarioKind::stationary;
            } else if (type == "spikes") {
                c.scenario.kind = ScenarioKind::spikes;
            } else if (type == "failures") {
                c.scenario.kind = ScenarioKind::failures;
            } else {
                throw Error(concat("config: unknown scenario type '", type, "'"));
            }
            read(s, "spikes_file", c.scenario.spikes_file);
            read(s, "n_spikes", c.scenario.n_spikes);
            read(s, "spike_multiplier_min", c.scenario.spike_multiplier_min);
            read(s, "spike_multiplier_max", c.scenario.spike_multiplier_max);
            read(s, "spike_duration_minutes", c.scenario.spike_duration_minutes);
            read(s, "spike_block_cells", c.scenario.spike_block_cells);
            read(s, "n_failures", c.scenario.n_failures);
            read(s, "failure_hours", c.scenario.failure_hours);
        }
        read(j, "policies", c.policies);
        if (j.contains("forest")) c.forest = hyperparams_from_json(j.at("forest"), c.forest);
        if (j.contains("surrogate")) {
            const auto& s = j.at("surrogate");
            detail::check_keys(s, {"n_chains", "holdout_chains", "horizon_minutes", "rate_scale_min", "rate_scale_max"},
                               "surrogate");
            read(s, "n_chains", c.surrogate.n_chains);
            read(s, "holdout_chains", c.surrogate.holdout_chains);
            read(s, "horizon_minutes", c.surrogate.horizon_minutes);
            read(s, "rate_scale_min", c.surrogate.rate_scale_min);
            read(s, "rate_scale_max", c.surrogate.rate_scale_max);
        }
        if (j.contains("synthetic")) {
            const auto& s = j.at("synthetic");
            detail::check_keys(s,
                               {"origin_lat", "origin_lon", "n_rows", "n_cols", "cell_size_miles", "n_depots",
                                "total_rate_per_min", "background_fraction", "hotspots", "history_days"},
                               "synthetic");
            SyntheticCityConfig sc;
            read(s, "origin_lat", sc.origin_lat);
            read(s, "origin_lon", sc.origin_lon);
            read(s, "n_rows", sc.n_rows);
            read(s, "n_cols", sc.n_cols);
            read(s, "cell_size_miles", sc.cell_size_miles);
            read(s, "n_depots", sc.n_depots);
            read(s, "total_rate_per_min", sc.total_rate_per_min);
            read(s, "background_fraction", sc.background_fraction);
            read(s, "history_days", sc.history_days);
            if (s.contains("hotspots")) {
                sc.hotspots.clear();
                for (const auto& h : s.at("hotspots")) {
                    detail::check_keys(h, {"row", "col", "sigma_cells", "weight"}, "hotspot");
                    Hotspot hs;
                    read(h, "row", hs.row);
                    read(h, "col", hs.col);
                    read(h, "sigma_cells", hs.sigma_cells);
                    read(h, "weight", hs.weight);
                    sc.hotspots.push_back(hs);
                }
            }
            c.synthetic = sc;
        }
        read(j, "workers", c.workers);
        read(j, "histogram_bin_s", c.histogram_bin_s);
        read(j, "trace", c.trace);
    } catch (const nlohmann::json::exception& e) {
        throw Error(concat("config: ", e.what()));
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) { return config_from_json(detail::read_json_file(path)); }

}  // namespace hierplan
