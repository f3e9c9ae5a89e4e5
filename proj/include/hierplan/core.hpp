#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hierplan {

using CellId = int;
using DepotId = int;
using AgentId = int;
using RegionId = int;
using IncidentId = int;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kSecondsPerMinute = 60.0;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Planar coordinates in miles, x east and y north of the grid origin.
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline double squared_distance(Point a, Point b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

struct Depot {
    DepotId id = 0;
    CellId cell = 0;
    int capacity = 1;
};

// A sampled or observed incident on the simulation clock (seconds).
struct Incident {
    IncidentId id = 0;
    double time = 0.0;
    CellId cell = 0;

    friend bool operator==(const Incident&, const Incident&) = default;
};

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

// Seed derivation. Every stochastic stream in the library is keyed by an
// explicit (seed, stream...) tuple so results never depend on call order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t first, Rest... rest) {
    return derive_seed(splitmix64(seed ^ splitmix64(first + 0x632BE59BD9B4E019ULL)), rest...);
}

// xoshiro256** with splitmix seeding; small and portable so sampled values are
// identical across standard library implementations.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9E3779B97F4A7C15ULL;
            s = splitmix64(x);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error("Rng::below called with n = 0");
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t v;
        do {
            v = (*this)();
        } while (v >= limit);
        return v % n;
    }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

// Stateless uniform draw keyed by (seed, key), used where a value must not
// depend on how many other draws happened first.
inline double hashed_uniform(std::uint64_t seed, std::uint64_t key) {
    return static_cast<double>(derive_seed(seed, key) >> 11) * 0x1.0p-53;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace hierplan
