#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hierplan/demand.hpp"
#include "hierplan/forest.hpp"
#include "hierplan/highlevel.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/surrogate.hpp"
#include "hierplan/travel.hpp"

namespace hierplan {

class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(line ? concat(file, ":", line, ": ", what) : concat(file, ": ", what)), file_(file), line_(line) {}

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

namespace detail {

inline std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line, const char* what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ParseError(file, line, concat("bad ", what, " '", s, "'"));
    }
    if (used != s.size() || !std::isfinite(v)) throw ParseError(file, line, concat("bad ", what, " '", s, "'"));
    return v;
}

inline long parse_int(const std::string& s, const std::string& file, std::size_t line, const char* what) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(s, &used);
    } catch (const std::exception&) {
        throw ParseError(file, line, concat("bad ", what, " '", s, "'"));
    }
    if (used != s.size()) throw ParseError(file, line, concat("bad ", what, " '", s, "'"));
    return v;
}

// Reads a CSV with the exact expected header. Calls row(fields, line_no) for
// every non-blank data line.
template <typename Fn>
void read_csv(const std::string& path, const std::vector<std::string>& header, Fn&& row) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::string line;
    std::size_t n = 0;
    bool seen_header = false;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (!seen_header) {
            if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
            if (fields != header) {
                std::string expected;
                for (std::size_t i = 0; i < header.size(); ++i) expected += (i ? "," : "") + header[i];
                throw ParseError(path, n, concat("expected header '", expected, "'"));
            }
            seen_header = true;
            continue;
        }
        if (fields.size() != header.size()) {
            throw ParseError(path, n, concat("expected ", header.size(), " fields, got ", fields.size()));
        }
        row(fields, n);
    }
    if (!seen_header) throw ParseError(path, 0, "file is empty");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
}

inline void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace detail

// Writes text to a file, creating parent directories.
inline void write_text(const std::string& path, const std::string& text) {
    detail::ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(concat("cannot write ", path));
    out << text;
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// ISO-8601 UTC timestamp, e.g. 2019-03-01T14:05:00Z, with optional fractional
// seconds and a numeric offset. Returns seconds since the Unix epoch.
inline double parse_iso8601(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    int consumed = 0;
    const char* s = text.c_str();
    if (std::sscanf(s, "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3 || consumed != 10) {
        throw Error(concat("bad timestamp '", text, "'"));
    }
    std::size_t pos = 10;
    if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
        int n = 0;
        if (std::sscanf(s + pos + 1, "%2d:%2d%n", &h, &mi, &n) != 2 || n != 5) {
            throw Error(concat("bad timestamp '", text, "'"));
        }
        pos += 1 + 5;
        if (pos < text.size() && text[pos] == ':') {
            std::size_t end = pos + 1;
            while (end < text.size() && (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.')) ++end;
            try {
                sec = std::stod(text.substr(pos + 1, end - pos - 1));
            } catch (const std::exception&) {
                throw Error(concat("bad timestamp '", text, "'"));
            }
            pos = end;
        }
    }
    double offset = 0.0;
    if (pos < text.size()) {
        const std::string tz = text.substr(pos);
        int oh = 0, om = 0;
        if (tz == "Z" || tz == "z") {
        } else if ((tz[0] == '+' || tz[0] == '-') &&
                   (std::sscanf(tz.c_str() + 1, "%2d:%2d", &oh, &om) == 2 || std::sscanf(tz.c_str() + 1, "%2d%2d", &oh, &om) == 2)) {
            offset = (tz[0] == '+' ? 1 : -1) * (oh * 3600.0 + om * 60.0);
        } else {
            throw Error(concat("bad timestamp '", text, "'"));
        }
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec < 0.0 || sec >= 61.0) throw Error(concat("bad timestamp '", text, "'"));
    const double days = static_cast<double>(sys_days(ymd).time_since_epoch().count());
    return days * 86400.0 + h * 3600.0 + mi * 60.0 + sec - offset;
}

inline std::string format_iso8601(double epoch_s) {
    using namespace std::chrono;
    const auto whole = static_cast<long long>(std::floor(epoch_s));
    const sys_days day = floor<days>(sys_seconds{seconds{whole}});
    const year_month_day ymd{day};
    const hh_mm_ss hms{seconds{whole} - day.time_since_epoch()};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long long>(hms.seconds().count()));
    return buf;
}

// ---------------------------------------------------------------------------
// CSV inputs

struct RawIncident {
    double time = 0.0;
    LatLon where;
};

inline std::vector<RawIncident> read_incidents_csv(const std::string& path) {
    std::vector<RawIncident> out;
    detail::read_csv(path, {"timestamp", "lat", "lon"}, [&](const std::vector<std::string>& f, std::size_t n) {
        RawIncident r;
        try {
            r.time = parse_iso8601(f[0]);
        } catch (const Error& e) {
            throw ParseError(path, n, e.what());
        }
        r.where.lat = detail::parse_double(f[1], path, n, "latitude");
        r.where.lon = detail::parse_double(f[2], path, n, "longitude");
        if (std::abs(r.where.lat) > 90.0 || std::abs(r.where.lon) > 180.0) {
            throw ParseError(path, n, "coordinates out of range");
        }
        out.push_back(r);
    });
    return out;
}

struct RawDepot {
    DepotId id = 0;
    LatLon where;
    int capacity = 1;
};

inline std::vector<RawDepot> read_depots_csv(const std::string& path) {
    std::vector<RawDepot> out;
    detail::read_csv(path, {"depot_id", "lat", "lon", "capacity"}, [&](const std::vector<std::string>& f, std::size_t n) {
        RawDepot d;
        d.id = static_cast<DepotId>(detail::parse_int(f[0], path, n, "depot id"));
        d.where.lat = detail::parse_double(f[1], path, n, "latitude");
        d.where.lon = detail::parse_double(f[2], path, n, "longitude");
        d.capacity = static_cast<int>(detail::parse_int(f[3], path, n, "capacity"));
        if (d.capacity < 1) throw ParseError(path, n, "capacity must be at least 1");
        for (const auto& o : out)
            if (o.id == d.id) throw ParseError(path, n, concat("duplicate depot id ", d.id));
        out.push_back(d);
    });
    return out;
}

// Locates incidents on the grid; points outside it are an error naming the row.
inline std::vector<IncidentRecord> to_records(const std::vector<RawIncident>& raw, const Grid& grid,
                                              const std::string& source = "incidents") {
    std::vector<IncidentRecord> out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        try {
            out.push_back({raw[i].time, raw[i].where, grid.locate(raw[i].where)});
        } catch (const OutOfGridError& e) {
            throw ParseError(source, i + 2, e.what());
        }
    }
    return out;
}

inline std::vector<Depot> to_depots(const std::vector<RawDepot>& raw, const Grid& grid) {
    std::vector<Depot> out;
    for (const auto& d : raw) out.push_back({d.id, grid.locate(d.where), d.capacity});
    return out;
}

// Travel lookup with every ordered pair of distinct cells.
inline TravelModel read_travel_csv(const std::string& path, std::shared_ptr<const Grid> grid) {
    const std::size_t n = static_cast<std::size_t>(grid->size());
    std::vector<double> table(n * n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n; ++i) table[i * n + i] = 0.0;
    detail::read_csv(path, {"from_cell", "to_cell", "seconds"}, [&](const std::vector<std::string>& f, std::size_t ln) {
        const long a = detail::parse_int(f[0], path, ln, "from_cell");
        const long b = detail::parse_int(f[1], path, ln, "to_cell");
        const double s = detail::parse_double(f[2], path, ln, "seconds");
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n) {
            throw ParseError(path, ln, concat("cell pair (", a, ", ", b, ") outside the ", n, "-cell grid"));
        }
        if (s < 0.0) throw ParseError(path, ln, "negative travel time");
        table[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = s;
    });
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (std::isnan(table[a * n + b])) throw ParseError(path, 0, concat("missing travel pair (", a, ", ", b, ")"));
    return TravelModel::lookup(std::move(grid), std::move(table));
}

// ---------------------------------------------------------------------------
// JSON formats

inline nlohmann::json to_json(const Segmentation& seg) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : seg.regions) regions.push_back({{"id", r.id}, {"cell_ids", r.cell_ids}, {"depot_ids", r.depot_ids}});
    return {{"regions", regions}, {"k", seg.k}, {"seed", seg.seed}};
}

inline Segmentation segmentation_from_json(const nlohmann::json& j, const Grid& grid, std::span<const Depot> depots) {
    Segmentation seg;
    try {
        seg.k = j.at("k").get<int>();
        seg.seed = j.at("seed").get<std::uint64_t>();
        seg.cell_region.assign(static_cast<std::size_t>(grid.size()), -1);
        for (const auto& rj : j.at("regions")) {
            Region r;
            r.id = rj.at("id").get<RegionId>();
            r.cell_ids = rj.at("cell_ids").get<std::vector<CellId>>();
            r.depot_ids = rj.at("depot_ids").get<std::vector<DepotId>>();
            if (r.id != static_cast<RegionId>(seg.regions.size())) throw Error("region ids must be 0..m-1 in order");
            for (CellId c : r.cell_ids) {
                if (!grid.valid(c)) throw Error(concat("region ", r.id, " lists unknown cell ", c));
                if (seg.cell_region[static_cast<std::size_t>(c)] >= 0) throw Error(concat("cell ", c, " is in two regions"));
                seg.cell_region[static_cast<std::size_t>(c)] = r.id;
            }
            for (DepotId d : r.depot_ids) seg.depot_region[d] = r.id;
            seg.regions.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(concat("bad region file: ", e.what()));
    }
    for (std::size_t c = 0; c < seg.cell_region.size(); ++c)
        if (seg.cell_region[c] < 0) throw Error(concat("cell ", c, " belongs to no region"));
    for (const auto& d : depots) {
        auto it = seg.depot_region.find(d.id);
        if (it == seg.depot_region.end() || it->second != seg.region_of_cell(d.cell)) {
            throw Error(concat("depot ", d.id, " is not listed under the region of its cell"));
        }
    }
    return seg;
}

inline nlohmann::json to_json(const PoissonModel& m) {
    nlohmann::json rates = nlohmann::json::object();
    for (std::size_t c = 0; c < m.rate_per_min.size(); ++c)
        if (m.rate_per_min[c] != 0.0) rates[std::to_string(c)] = m.rate_per_min[c];
    return {{"rates", rates}, {"fitted_over_minutes", m.fitted_over_minutes}};
}

inline PoissonModel model_from_json(const nlohmann::json& j, int n_cells) {
    PoissonModel m;
    m.rate_per_min.assign(static_cast<std::size_t>(n_cells), 0.0);
    try {
        m.fitted_over_minutes = j.at("fitted_over_minutes").get<double>();
        for (const auto& [key, value] : j.at("rates").items()) {
            const int c = std::stoi(key);
            if (c < 0 || c >= n_cells) throw Error(concat("rate for unknown cell ", key));
            const double r = value.get<double>();
            if (r < 0.0) throw Error(concat("negative rate for cell ", key));
            m.rate_per_min[static_cast<std::size_t>(c)] = r;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(concat("bad model file: ", e.what()));
    }
    return m;
}

// Spike times are in minutes on file and seconds in memory.
inline nlohmann::json to_json(const SpikeSchedule& spikes) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : spikes) {
        out.push_back({{"cells", s.cells},
                       {"start_min", s.start / kSecondsPerMinute},
                       {"end_min", s.end / kSecondsPerMinute},
                       {"multiplier", s.multiplier}});
    }
    return out;
}

inline SpikeSchedule spikes_from_json(const nlohmann::json& j) {
    SpikeSchedule out;
    try {
        for (const auto& sj : j) {
            Spike s;
            s.cells = sj.at("cells").get<std::vector<CellId>>();
            s.start = sj.at("start_min").get<double>() * kSecondsPerMinute;
            s.end = sj.at("end_min").get<double>() * kSecondsPerMinute;
            s.multiplier = sj.at("multiplier").get<double>();
            out.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(concat("bad spike schedule: ", e.what()));
    }
    validate(out);
    return out;
}

inline nlohmann::json to_json(const ForestHyperparams& hp) {
    return {{"n_trees", hp.n_trees},
            {"max_depth", hp.max_depth},
            {"min_samples_split", hp.min_samples_split},
            {"min_samples_leaf", hp.min_samples_leaf},
            {"max_features", hp.max_features},
            {"bootstrap", hp.bootstrap}};
}

inline ForestHyperparams hyperparams_from_json(const nlohmann::json& j, ForestHyperparams hp = {}) {
    hp.n_trees = j.value("n_trees", hp.n_trees);
    hp.max_depth = j.value("max_depth", hp.max_depth);
    hp.min_samples_split = j.value("min_samples_split", hp.min_samples_split);
    hp.min_samples_leaf = j.value("min_samples_leaf", hp.min_samples_leaf);
    hp.max_features = j.value("max_features", hp.max_features);
    hp.bootstrap = j.value("bootstrap", hp.bootstrap);
    return hp;
}

// Trees are stored as flat node arrays [feature, threshold, left, right, value].
inline nlohmann::json to_json(const ForestModel& m) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : m.trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
        trees.push_back(nodes);
    }
    return {{"trees", trees}, {"hyperparams", to_json(m.hyperparams)}, {"seed", m.seed}, {"n_features", m.n_features}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
    ForestModel m;
    try {
        m.hyperparams = hyperparams_from_json(j.at("hyperparams"));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.n_features = j.value("n_features", 2);
        for (const auto& tj : j.at("trees")) {
            RegressionTree t;
            for (const auto& nj : tj) {
                TreeNode n;
                n.feature = nj.at(0).get<int>();
                n.threshold = nj.at(1).get<double>();
                n.left = nj.at(2).get<int>();
                n.right = nj.at(3).get<int>();
                n.value = nj.at(4).get<double>();
                t.nodes.push_back(n);
            }
            const int size = static_cast<int>(t.nodes.size());
            if (size == 0) throw Error("empty tree in forest file");
            for (const auto& n : t.nodes) {
                if (n.feature >= m.n_features || (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size))) {
                    throw Error("corrupt tree in forest file");
                }
            }
            m.trees.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(concat("bad forest file: ", e.what()));
    }
    return m;
}

inline nlohmann::json to_json(const std::map<RegionId, ForestModel>& models) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [r, m] : models) j[std::to_string(r)] = to_json(m);
    return j;
}

inline std::map<RegionId, ForestModel> forests_from_json(const nlohmann::json& j) {
    std::map<RegionId, ForestModel> out;
    for (const auto& [key, value] : j.items()) out[std::stoi(key)] = forest_from_json(value);
    return out;
}

inline nlohmann::json to_json(const Move& m) {
    return {{"agent", m.agent}, {"from", m.from}, {"to", m.to}, {"depot", m.depot}};
}

inline nlohmann::json allocation_json(const std::map<RegionId, int>& p, std::span<const Move> moves = {}) {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [r, n] : p) counts[std::to_string(r)] = n;
    nlohmann::json mv = nlohmann::json::array();
    for (const auto& m : moves) mv.push_back(to_json(m));
    return {{"allocation", counts}, {"moves", mv}};
}

// ---------------------------------------------------------------------------
// CSV outputs

inline std::string samples_csv(std::span<const SurrogateSample> samples) {
    std::string out = "region,p,gamma_per_min,mean_response_s\n";
    for (const auto& s : samples) {
        out += concat(s.region, ",", s.p, ",", format_double(s.gamma), ",", format_double(s.label), "\n");
    }
    return out;
}

inline std::vector<SurrogateSample> read_samples_csv(const std::string& path) {
    std::vector<SurrogateSample> out;
    detail::read_csv(path, {"region", "p", "gamma_per_min", "mean_response_s"},
                     [&](const std::vector<std::string>& f, std::size_t n) {
                         SurrogateSample s;
                         s.region = static_cast<RegionId>(detail::parse_int(f[0], path, n, "region"));
                         s.p = static_cast<int>(detail::parse_int(f[1], path, n, "p"));
                         s.gamma = detail::parse_double(f[2], path, n, "gamma");
                         s.label = detail::parse_double(f[3], path, n, "label");
                         out.push_back(s);
                     });
    return out;
}

inline std::string run_log_csv(std::span<const ResponseRecord> records) {
    std::string out = "incident_time,cell,dispatch_time,arrival_time,response_s,agent_id\n";
    for (const auto& r : records) {
        out += concat(format_double(r.incident_time), ",", r.cell, ",", format_double(r.dispatch_time), ",",
                      format_double(r.arrival_time), ",", format_double(r.response_s), ",", r.agent, "\n");
    }
    return out;
}

}  // namespace hierplan
