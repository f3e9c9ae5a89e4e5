#pragma once

#include <cmath>
#include <vector>

#include "hierplan/core.hpp"

namespace hierplan {

struct QueueParams {
    int p = 1;             // servers (agents)
    double gamma = 0.0;    // arrivals per minute
    double mu = 0.05;      // services per minute per agent
};

// Mean queueing delay of an M/M/c system in minutes (Erlang C), computed as
// L_q / gamma with
//   P0  = [ sum_{m<c} a^m/m! + a^c / (c! (1 - rho)) ]^-1,  a = gamma/mu, rho = a/c
//   L_q = P0 a^c rho / (c! (1 - rho)^2).
// Returns +inf when the system is not stable (rho >= 1) or has no servers.
inline double mmc_wait(const QueueParams& q) {
    if (!(q.mu > 0.0)) throw Error("service rate must be positive");
    if (q.gamma < 0.0) throw Error("arrival rate must be non-negative");
    if (q.gamma == 0.0) return 0.0;
    if (q.p < 1) return kInf;
    const double a = q.gamma / q.mu;
    const double c = q.p;
    const double rho = a / c;
    if (rho >= 1.0) return kInf;

    // term = a^m / m!, accumulated incrementally to avoid overflow.
    double term = 1.0;
    double sum = 0.0;
    for (int m = 0; m < q.p; ++m) {
        sum += term;
        term *= a / (m + 1);
    }
    // term is now a^c / c!
    const double p0 = 1.0 / (sum + term / (1.0 - rho));
    const double lq = p0 * term * rho / ((1.0 - rho) * (1.0 - rho));
    return lq / q.gamma;
}

// ---------------------------------------------------------------------------
// p-median placement by Greedy-Add

struct PMedianInstance {
    // Demand weight a_i of each cell.
    std::vector<double> weights;
    // distances[i][k]: cell i to candidate depot k.
    std::vector<std::vector<double>> distances;
    int p = 1;
};

struct PMedianSolution {
    // Chosen candidate indices in the order they were added.
    std::vector<int> chosen;
    double score = 0.0;
    // Objective after each addition.
    std::vector<double> score_history;
};

inline double pmedian_cost(const PMedianInstance& inst, const std::vector<int>& open) {
    double cost = 0.0;
    for (std::size_t i = 0; i < inst.weights.size(); ++i) {
        double best = kInf;
        for (int k : open) best = std::min(best, inst.distances[i][static_cast<std::size_t>(k)]);
        cost += inst.weights[i] * best;
    }
    return cost;
}

// Adds, one at a time, the candidate whose inclusion minimises the
// demand-weighted distance of every cell to its nearest open depot. Ties go
// to the lower candidate index. O(p |D| |G|).
inline PMedianSolution greedy_add(const PMedianInstance& inst) {
    const std::size_t n_cells = inst.weights.size();
    if (inst.distances.size() != n_cells) throw Error("p-median distance rows must match the cell count");
    const std::size_t n_depots = n_cells ? inst.distances[0].size() : 0;
    for (const auto& row : inst.distances)
        if (row.size() != n_depots) throw Error("p-median distance matrix is ragged");
    if (inst.p < 0) throw Error("p must be non-negative");
    if (static_cast<std::size_t>(inst.p) > n_depots) {
        throw Error(concat("p-median: p = ", inst.p, " exceeds the ", n_depots, " candidate depots"));
    }

    PMedianSolution sol;
    std::vector<double> nearest(n_cells, kInf);
    std::vector<bool> open(n_depots, false);
    for (int z = 0; z < inst.p; ++z) {
        int best_k = -1;
        double best_u = kInf;
        for (std::size_t k = 0; k < n_depots; ++k) {
            if (open[k]) continue;
            double u = 0.0;
            for (std::size_t i = 0; i < n_cells; ++i) {
                u += inst.weights[i] * std::min(nearest[i], inst.distances[i][k]);
            }
            if (best_k < 0 || u < best_u) {
                best_u = u;
                best_k = static_cast<int>(k);
            }
        }
        open[static_cast<std::size_t>(best_k)] = true;
        for (std::size_t i = 0; i < n_cells; ++i)
            nearest[i] = std::min(nearest[i], inst.distances[i][static_cast<std::size_t>(best_k)]);
        sol.chosen.push_back(best_k);
        sol.score = best_u;
        sol.score_history.push_back(best_u);
    }
    return sol;
}

// ---------------------------------------------------------------------------

// Expected response delay of a region, in seconds, given its agent count and
// arrival rate (per minute).
class WaitEstimator {
public:
    virtual ~WaitEstimator() = default;
    virtual double expected_wait_s(RegionId region, int p, double gamma_per_min) const = 0;
};

class QueueWaitEstimator final : public WaitEstimator {
public:
    explicit QueueWaitEstimator(double mu_per_min) : mu_(mu_per_min) {}

    double expected_wait_s(RegionId, int p, double gamma_per_min) const override {
        return mmc_wait({p, gamma_per_min, mu_}) * kSecondsPerMinute;
    }

private:
    double mu_;
};

}  // namespace hierplan
