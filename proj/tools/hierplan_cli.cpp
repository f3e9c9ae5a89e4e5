#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hierplan/hierplan.hpp"

namespace fs = std::filesystem;
using namespace hierplan;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<int> workers;
};

ExperimentConfig load(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (g.workers) cfg.workers = *g.workers;
    cfg.validate();
    return cfg;
}

std::string out_path(const Globals& g, const std::string& name) { return (fs::path(g.out) / name).string(); }

class Timer {
public:
    explicit Timer(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
    ~Timer() {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::cerr << what_ << ": " << s << " s\n";
    }

private:
    std::string what_;
    std::chrono::steady_clock::time_point start_;
};

Segmentation regions_for(const World& w, const ExperimentConfig& cfg, const std::string& regions_file, int k) {
    if (!regions_file.empty()) return segmentation_from_json(detail::read_json_file(regions_file), *w.grid, w.sim->depots());
    Segmentation seg = segment_world(w, k, cfg.seed);
    for (const auto& warning : seg.warnings) std::cerr << "warning: " << warning << "\n";
    return seg;
}

std::map<RegionId, ForestModel> forests_for(const World& w, const Segmentation& seg, const ExperimentConfig& cfg,
                                            const std::string& forests_file) {
    if (!forests_file.empty()) return forests_from_json(detail::read_json_file(forests_file));
    Timer t("surrogate training");
    return train_surrogates(w, seg, cfg).forests;
}

void write_runs(const Globals& g, const ExperimentReport& rep) {
    for (const auto& r : rep.runs) {
        const std::string name = run_file_name(r.spec);
        write_text(out_path(g, "runs/" + name + ".csv"), run_log_csv(r.records));
        if (!r.trace.empty()) {
            std::string lines;
            for (const auto& l : r.trace) lines += l + "\n";
            write_text(out_path(g, "traces/" + name + ".jsonl"), lines);
        }
        std::cerr << name << ": " << r.records.size() << " incidents, " << r.planning_calls << " planning calls, "
                  << r.wall_s << " s\n";
    }
}

void print_pooled(const ExperimentReport& rep, int n_failures = -1) {
    for (const auto& p : rep.policies()) {
        const Metrics m = rep.pooled(p, n_failures);
        std::cout << p;
        if (n_failures >= 0) std::cout << " failures=" << n_failures;
        std::cout << " count=" << m.count << " mean=" << format_double(m.mean) << " q1=" << format_double(m.q1)
                  << " q3=" << format_double(m.q3) << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical planner for emergency responder allocation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config (JSON)");
    app.add_option("--seed", g.seed, "Override the base seed");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);

    std::string regions_file, forests_file, policy;
    std::optional<int> k_override, n_failures;

    auto* synth = app.add_subcommand("synth-city", "Write the synthetic city as incident and depot CSV files");
    auto* fit = app.add_subcommand("fit-demand", "Fit per-cell Poisson rates");
    auto* seg_cmd = app.add_subcommand("segment", "Cluster the grid into regions");
    seg_cmd->add_option("--k", k_override, "Number of regions");
    auto* train = app.add_subcommand("train-surrogate", "Simulate training samples and fit per-region forests");
    train->add_option("--regions", regions_file, "Region file from `segment`");
    auto* simulate = app.add_subcommand("simulate", "Run one policy over the evaluation chains");
    simulate->add_option("--policy", policy, "baseline, ll_only, hl_ll_queue or hl_ll_forest")->required();
    auto* experiment = app.add_subcommand("experiment", "Run every configured policy over the evaluation chains");
    auto* compare = app.add_subcommand("compare-estimators", "Held-out MSE of the queue and forest estimators");
    auto* failures = app.add_subcommand("inject-failures", "Run every policy with 0..n simultaneous failures");
    failures->add_option("--n", n_failures, "Maximum number of failures");
    for (auto* cmd : {simulate, experiment, failures}) {
        cmd->add_option("--regions", regions_file, "Region file from `segment`");
        cmd->add_option("--forests", forests_file, "Forest file from `train-surrogate`");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg0 = load(g);
        ExperimentConfig cfg = cfg0;
        fs::create_directories(g.out);

        if (synth->parsed()) {
            const SyntheticCity city =
                make_synthetic_city(cfg.synthetic.value_or(SyntheticCityConfig{}), cfg.depot_capacity, cfg.seed);
            write_text(out_path(g, "incidents.csv"), incidents_csv(city.incidents));
            write_text(out_path(g, "depots.csv"), depots_csv(city.depots, *city.grid));
            write_json(out_path(g, "truth_model.json"), to_json(city.truth));
            std::cout << city.incidents.size() << " incidents, " << city.depots.size() << " depots\n";
            return 0;
        }

        const World w = [&] {
            Timer t("load inputs");
            return build_world(cfg);
        }();

        if (fit->parsed()) {
            write_json(out_path(g, "model.json"), to_json(w.model));
            std::cout << "total rate " << format_double(w.model.total_rate()) << " per minute over "
                      << w.grid->size() << " cells\n";
            return 0;
        }

        if (seg_cmd->parsed()) {
            const Segmentation seg = regions_for(w, cfg, "", k_override.value_or(cfg.k));
            write_json(out_path(g, "regions.json"), to_json(seg));
            for (const auto& r : seg.regions) {
                std::cout << "region " << r.id << ": " << r.cell_ids.size() << " cells, " << r.depot_ids.size()
                          << " depots, rate " << format_double(region_rate(w.model, r)) << "\n";
            }
            return 0;
        }

        if (compare->parsed()) {
            nlohmann::json table = nlohmann::json::array();
            std::vector<int> ks = cfg.k_values.empty() ? std::vector<int>{cfg.k} : cfg.k_values;
            for (int k : ks) {
                Timer t(concat("compare estimators k=", k));
                const EstimatorComparison e = compare_estimators(cfg, w, k);
                table.push_back(to_json(e));
                std::cout << "k=" << k << " queue_mse=" << format_double(e.mse_queue)
                          << " forest_mse=" << format_double(e.mse_forest) << " n_test=" << e.n_test
                          << " unstable=" << e.n_unstable << "\n";
            }
            write_json(out_path(g, "estimators.json"), {{"comparisons", table}});
            return 0;
        }

        const Segmentation seg = regions_for(w, cfg, regions_file, cfg.k);

        if (train->parsed()) {
            Timer t("surrogate training");
            const SurrogateBundle b = train_surrogates(w, seg, cfg);
            write_text(out_path(g, "samples.csv"), samples_csv(b.samples));
            write_json(out_path(g, "forests.json"), to_json(b.forests));
            std::cout << b.samples.size() << " samples, " << b.forests.size() << " region models\n";
            return 0;
        }

        if (simulate->parsed()) cfg.policies = {policy};
        cfg.validate();
        std::map<RegionId, ForestModel> forests;
        if (needs_forest(cfg)) forests = forests_for(w, seg, cfg, forests_file);

        if (simulate->parsed() || experiment->parsed()) {
            Timer t("experiment");
            const ExperimentReport rep = run_experiment(cfg, w, seg, &forests);
            write_runs(g, rep);
            write_json(out_path(g, "metrics.json"), to_json(rep));
            print_pooled(rep);
            return 0;
        }

        if (failures->parsed()) {
            Timer t("failure injection");
            const int n = n_failures.value_or(cfg.scenario.n_failures);
            const ExperimentReport rep = inject_failures(cfg, w, seg, n, &forests);
            write_runs(g, rep);
            std::vector<int> levels;
            for (int f = 0; f <= n; ++f) levels.push_back(f);
            write_json(out_path(g, "failures.json"), to_json(rep, levels));
            for (int f : levels) print_pooled(rep, f);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
