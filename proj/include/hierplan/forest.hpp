#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "hierplan/core.hpp"

namespace hierplan {

struct ForestHyperparams {
    int n_trees = 150;
    // 0 means unlimited.
    int max_depth = 0;
    int min_samples_split = 2;
    int min_samples_leaf = 1;
    // 0 means floor(sqrt(n_features)), at least one.
    int max_features = 0;
    bool bootstrap = true;
};

struct TreeNode {
    // -1 for a leaf.
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

struct ForestModel {
    std::vector<RegressionTree> trees;
    ForestHyperparams hyperparams;
    std::uint64_t seed = 0;
    int n_features = 0;

    double predict(std::span<const double> x) const {
        if (trees.empty()) throw Error("forest has no trees");
        if (x.size() != static_cast<std::size_t>(n_features)) throw Error("feature count mismatch");
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x);
        return s / static_cast<double>(trees.size());
    }
};

namespace detail {

// CART regression tree grown with variance-reduction (MSE) splits.
class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<double>& y, const ForestHyperparams& hp,
                int n_features, Rng& rng)
        : x_(x), y_(y), hp_(hp), n_features_(n_features), rng_(rng) {
        mtry_ = hp.max_features > 0 ? std::min(hp.max_features, n_features)
                                    : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(n_features))));
    }

    RegressionTree build(std::vector<std::size_t> idx) {
        tree_.nodes.clear();
        grow(idx, 0);
        return std::move(tree_);
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double sse = kInf;
    };

    int grow(std::vector<std::size_t>& idx, int depth) {
        const int node = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();

        const double n = static_cast<double>(idx.size());
        double sum = 0.0, sq = 0.0;
        for (std::size_t i : idx) {
            sum += y_[i];
            sq += y_[i] * y_[i];
        }
        const double mean = sum / n;
        tree_.nodes[static_cast<std::size_t>(node)].value = mean;
        const double sse = std::max(0.0, sq - sum * sum / n);

        const bool depth_ok = hp_.max_depth <= 0 || depth < hp_.max_depth;
        const int count = static_cast<int>(idx.size());
        if (!depth_ok || count < hp_.min_samples_split || count < 2 * hp_.min_samples_leaf ||
            sse <= 1e-12 * std::max(1.0, sq)) {
            return node;
        }

        const Split split = best_split(idx);
        if (split.feature < 0) return node;

        std::vector<std::size_t> left, right;
        for (std::size_t i : idx) {
            (x_[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        tree_.nodes[static_cast<std::size_t>(node)].feature = split.feature;
        tree_.nodes[static_cast<std::size_t>(node)].threshold = split.threshold;
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        tree_.nodes[static_cast<std::size_t>(node)].left = l;
        tree_.nodes[static_cast<std::size_t>(node)].right = r;
        return node;
    }

    // Examines mtry random features, continuing past mtry only while no valid
    // split has been found.
    Split best_split(const std::vector<std::size_t>& idx) {
        std::vector<int> features(static_cast<std::size_t>(n_features_));
        std::iota(features.begin(), features.end(), 0);
        shuffle(features, rng_);

        Split best;
        std::vector<std::size_t> order(idx);
        const std::size_t n = idx.size();
        const std::size_t min_leaf = static_cast<std::size_t>(std::max(1, hp_.min_samples_leaf));
        for (std::size_t fi = 0; fi < features.size(); ++fi) {
            if (static_cast<int>(fi) >= mtry_ && best.feature >= 0) break;
            const int f = features[fi];
            const auto fx = [&](std::size_t i) { return x_[i][static_cast<std::size_t>(f)]; };
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return fx(a) != fx(b) ? fx(a) < fx(b) : a < b;
            });
            double total = 0.0, total_sq = 0.0;
            for (std::size_t i : order) {
                total += y_[i];
                total_sq += y_[i] * y_[i];
            }
            double ls = 0.0, lsq = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                const double yi = y_[order[k]];
                ls += yi;
                lsq += yi * yi;
                const std::size_t nl = k + 1;
                const std::size_t nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double a = fx(order[k]);
                const double b = fx(order[k + 1]);
                if (!(a < b)) continue;
                const double rs = total - ls;
                const double rsq = total_sq - lsq;
                const double sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                if (sse < best.sse) {
                    best.sse = sse;
                    best.feature = f;
                    double mid = a + (b - a) / 2.0;
                    if (!(mid < b)) mid = a;
                    best.threshold = mid;
                }
            }
        }
        return best;
    }

    const std::vector<std::vector<double>>& x_;
    const std::vector<double>& y_;
    const ForestHyperparams& hp_;
    int n_features_;
    int mtry_ = 1;
    Rng& rng_;
    RegressionTree tree_;
};

}  // namespace detail

// Bagged CART regression trees; the prediction is the mean over trees.
inline ForestModel train_forest(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                const ForestHyperparams& hp, std::uint64_t seed) {
    if (x.empty()) throw Error("cannot train a forest on an empty sample set");
    if (x.size() != y.size()) throw Error("feature and label counts differ");
    if (hp.n_trees < 1) throw Error("forest needs at least one tree");
    const int n_features = static_cast<int>(x.front().size());
    if (n_features < 1) throw Error("samples need at least one feature");
    for (const auto& row : x)
        if (static_cast<int>(row.size()) != n_features) throw Error("ragged feature matrix");

    ForestModel model;
    model.hyperparams = hp;
    model.seed = seed;
    model.n_features = n_features;
    const std::size_t n = x.size();
    for (int t = 0; t < hp.n_trees; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> idx(n);
        if (hp.bootstrap) {
            for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
        } else {
            std::iota(idx.begin(), idx.end(), std::size_t{0});
        }
        detail::TreeBuilder builder(x, y, hp, n_features, rng);
        model.trees.push_back(builder.build(std::move(idx)));
    }
    return model;
}

}  // namespace hierplan
