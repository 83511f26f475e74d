#pragma once

// CART trees: Gini classification trees for the forest and squared-error
// regression trees for boosting. Split ties go to the lowest feature index,
// then the lowest threshold.

#include "emdtrade/common.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace emdtrade::tree {

inline constexpr int kClasses = 3;

struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;       // classification leaves
    double value = 0.0;  // regression leaves
};

namespace detail {

using Counts = std::array<std::int64_t, kClasses>;

/// Partition score sum_c cL^2 / nL + sum_c cR^2 / nR held as a fraction so
/// that candidate splits compare exactly.
struct GiniScore {
    __int128 num = 0;
    __int128 den = 1;
    bool valid = false;

    static GiniScore make(const Counts& left, std::int64_t nl, const Counts& right, std::int64_t nr) {
        __int128 a = 0, b = 0;
        for (int c = 0; c < kClasses; ++c) {
            a += static_cast<__int128>(left[c]) * left[c];
            b += static_cast<__int128>(right[c]) * right[c];
        }
        return {a * nr + b * nl, static_cast<__int128>(nl) * nr, true};
    }

    bool better_than(const GiniScore& o) const {
        if (!o.valid) return valid;
        return num * o.den > o.num * den;
    }
};

inline double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return mid < hi ? mid : lo;
}

inline int majority(const Counts& counts) {
    int best = 0;
    for (int c = 1; c < kClasses; ++c)
        if (counts[c] > counts[best]) best = c;
    return best;
}

}  // namespace detail

struct TreeParams {
    std::size_t mtry = 0;       // candidate features per split; 0 = all
    std::size_t min_leaf = 1;
    std::size_t max_depth = 0;  // 0 = unlimited
};

class ClassificationTree {
public:
    /// Grows a tree on X[sample] (duplicates allowed, as in a bootstrap).
    static ClassificationTree grow(const RowMatrix& X, std::span<const int> y, std::vector<std::size_t> sample,
                                   const TreeParams& params, std::mt19937_64& rng) {
        ClassificationTree tree;
        if (sample.empty()) throw std::invalid_argument("ClassificationTree: empty sample");
        const std::size_t d = X.cols();
        const std::size_t mtry = (params.mtry == 0 || params.mtry > d) ? d : params.mtry;
        const std::size_t min_leaf = std::max<std::size_t>(params.min_leaf, 1);

        struct Task {
            int node;
            std::size_t begin, end, depth;
        };
        std::vector<Task> stack;
        tree.nodes_.push_back({});
        stack.push_back({0, 0, sample.size(), 0});

        std::vector<std::pair<double, int>> buf;
        std::vector<std::size_t> order(d);
        std::vector<std::size_t> candidates;

        while (!stack.empty()) {
            const Task task = stack.back();
            stack.pop_back();
            const auto node_span = std::span(sample).subspan(task.begin, task.end - task.begin);
            const auto n = static_cast<std::int64_t>(node_span.size());

            detail::Counts counts{};
            for (auto i : node_span) ++counts[y[i]];
            tree.nodes_[task.node].label = detail::majority(counts);

            const bool pure = std::count(counts.begin(), counts.end(), 0) == kClasses - 1;
            if (pure || node_span.size() < 2 * min_leaf || (params.max_depth && task.depth >= params.max_depth))
                continue;

            // Random feature order; keep the first mtry that vary in this node.
            std::iota(order.begin(), order.end(), std::size_t{0});
            candidates.clear();
            for (std::size_t i = 0; i < d && candidates.size() < mtry; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, d - 1);
                std::swap(order[i], order[pick(rng)]);
                const auto f = order[i];
                double lo = X(node_span[0], f), hi = lo;
                for (auto s : node_span) {
                    lo = std::min(lo, X(s, f));
                    hi = std::max(hi, X(s, f));
                }
                if (lo < hi) candidates.push_back(f);
            }
            if (candidates.empty()) continue;
            std::sort(candidates.begin(), candidates.end());

            detail::GiniScore best;
            int best_feature = -1;
            double best_threshold = 0.0;
            for (auto f : candidates) {
                buf.clear();
                for (auto s : node_span) buf.emplace_back(X(s, f), y[s]);
                std::sort(buf.begin(), buf.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
                detail::Counts left{};
                detail::Counts right = counts;
                for (std::size_t i = 0; i + 1 < buf.size(); ++i) {
                    ++left[buf[i].second];
                    --right[buf[i].second];
                    if (!(buf[i].first < buf[i + 1].first)) continue;
                    const auto nl = static_cast<std::int64_t>(i + 1);
                    const auto nr = n - nl;
                    if (nl < static_cast<std::int64_t>(min_leaf) || nr < static_cast<std::int64_t>(min_leaf)) continue;
                    auto score = detail::GiniScore::make(left, nl, right, nr);
                    if (score.better_than(best)) {
                        best = score;
                        best_feature = static_cast<int>(f);
                        best_threshold = detail::midpoint(buf[i].first, buf[i + 1].first);
                    }
                }
            }
            if (best_feature < 0) continue;

            auto mid = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                      sample.begin() + static_cast<std::ptrdiff_t>(task.end),
                                      [&](std::size_t s) { return X(s, static_cast<std::size_t>(best_feature)) <= best_threshold; });
            const auto split = static_cast<std::size_t>(mid - sample.begin());
            const int left_node = static_cast<int>(tree.nodes_.size());
            tree.nodes_.push_back({});
            tree.nodes_.push_back({});
            auto& node = tree.nodes_[task.node];
            node.feature = best_feature;
            node.threshold = best_threshold;
            node.left = left_node;
            node.right = left_node + 1;
            stack.push_back({left_node + 1, split, task.end, task.depth + 1});
            stack.push_back({left_node, task.begin, split, task.depth + 1});
        }
        return tree;
    }

    int predict(std::span<const double> x) const {
        int i = 0;
        while (nodes_[i].feature >= 0)
            i = x[static_cast<std::size_t>(nodes_[i].feature)] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
        return nodes_[i].label;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

class RegressionTree {
public:
    /// Least-squares CART on X[sample] against `target`; leaves hold means.
    static RegressionTree grow(const RowMatrix& X, std::span<const double> target, std::vector<std::size_t> sample,
                               std::size_t max_depth, std::size_t min_leaf = 1) {
        RegressionTree tree;
        if (sample.empty()) throw std::invalid_argument("RegressionTree: empty sample");
        min_leaf = std::max<std::size_t>(min_leaf, 1);
        struct Task {
            int node;
            std::size_t begin, end, depth;
        };
        std::vector<Task> stack;
        tree.nodes_.push_back({});
        stack.push_back({0, 0, sample.size(), 0});
        std::vector<std::pair<double, double>> buf;

        while (!stack.empty()) {
            const Task task = stack.back();
            stack.pop_back();
            const auto node_span = std::span(sample).subspan(task.begin, task.end - task.begin);
            const double n = static_cast<double>(node_span.size());
            double sum = 0.0;
            for (auto s : node_span) sum += target[s];
            tree.nodes_[task.node].value = sum / n;
            if (task.depth >= max_depth || node_span.size() < 2 * min_leaf) continue;

            const double parent = sum * sum / n;
            double best = parent;
            int best_feature = -1;
            double best_threshold = 0.0;
            for (std::size_t f = 0; f < X.cols(); ++f) {
                buf.clear();
                for (auto s : node_span) buf.emplace_back(X(s, f), target[s]);
                std::sort(buf.begin(), buf.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
                double left_sum = 0.0;
                for (std::size_t i = 0; i + 1 < buf.size(); ++i) {
                    left_sum += buf[i].second;
                    if (!(buf[i].first < buf[i + 1].first)) continue;
                    const double nl = static_cast<double>(i + 1);
                    const double nr = n - nl;
                    if (nl < static_cast<double>(min_leaf) || nr < static_cast<double>(min_leaf)) continue;
                    const double right_sum = sum - left_sum;
                    const double score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                    if (score > best) {
                        best = score;
                        best_feature = static_cast<int>(f);
                        best_threshold = detail::midpoint(buf[i].first, buf[i + 1].first);
                    }
                }
            }
            if (best_feature < 0) continue;

            auto mid = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                      sample.begin() + static_cast<std::ptrdiff_t>(task.end),
                                      [&](std::size_t s) { return X(s, static_cast<std::size_t>(best_feature)) <= best_threshold; });
            const auto split = static_cast<std::size_t>(mid - sample.begin());
            const int left_node = static_cast<int>(tree.nodes_.size());
            tree.nodes_.push_back({});
            tree.nodes_.push_back({});
            auto& node = tree.nodes_[task.node];
            node.feature = best_feature;
            node.threshold = best_threshold;
            node.left = left_node;
            node.right = left_node + 1;
            stack.push_back({left_node + 1, split, task.end, task.depth + 1});
            stack.push_back({left_node, task.begin, split, task.depth + 1});
        }
        return tree;
    }

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes_[i].feature >= 0)
            i = x[static_cast<std::size_t>(nodes_[i].feature)] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
        return nodes_[i].value;
    }

private:
    std::vector<Node> nodes_;
};

}  // namespace emdtrade::tree
