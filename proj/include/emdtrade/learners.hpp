#pragma once

// Classifiers compared against the random baseline: brute-force KNN, a Gini
// random forest, multinomial gradient-boosted trees and the uniform policy.

#include "emdtrade/common.hpp"
#include "emdtrade/market_data.hpp"
#include "emdtrade/tree.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace emdtrade::learners {

using DecisionSequence = std::vector<DecisionLabel>;

enum class LearnerKind { Knn, RandomForest, GradientBoost, RandomBaseline };

inline constexpr std::string_view kind_name(LearnerKind k) {
    switch (k) {
        case LearnerKind::Knn: return "knn";
        case LearnerKind::RandomForest: return "random_forest";
        case LearnerKind::GradientBoost: return "gradient_boost";
        case LearnerKind::RandomBaseline: return "random";
    }
    return "?";
}

inline std::optional<LearnerKind> parse_kind(std::string_view s) {
    for (auto k : {LearnerKind::Knn, LearnerKind::RandomForest, LearnerKind::GradientBoost, LearnerKind::RandomBaseline})
        if (kind_name(k) == s) return k;
    return std::nullopt;
}

struct KnnParams {
    std::size_t k = 5;
};

struct ForestParams {
    std::size_t n_trees = 300;
    std::size_t mtry = 0;  // 0 selects floor(sqrt(d))
    std::size_t min_leaf = 1;
    std::size_t max_depth = 0;  // 0 = unlimited
};

struct BoostParams {
    std::size_t rounds = 200;
    double learning_rate = 0.1;
    std::size_t max_depth = 3;
    double subsample = 1.0;
};

struct LearnerSpec {
    LearnerKind kind = LearnerKind::Knn;
    KnnParams knn;
    ForestParams forest;
    BoostParams boost;
    std::uint64_t seed = 0;

    void validate() const {
        if (knn.k < 1) throw std::invalid_argument("knn.k must be >= 1");
        if (forest.n_trees < 1 || forest.min_leaf < 1) throw std::invalid_argument("random_forest: n_trees, min_leaf >= 1");
        if (!(boost.learning_rate > 0.0) || boost.max_depth < 1 || !(boost.subsample > 0.0 && boost.subsample <= 1.0))
            throw std::invalid_argument("gradient_boost: learning_rate > 0, max_depth >= 1, subsample in (0, 1]");
    }
};

namespace detail {

struct KnnState {
    RowMatrix X;
    std::vector<int> y;
};

struct ForestState {
    std::vector<tree::ClassificationTree> trees;
};

struct BoostState {
    std::array<bool, 3> present{};
    std::array<double, 3> init{};
    std::array<std::vector<tree::RegressionTree>, 3> trees;
    double learning_rate = 0.1;
};

struct BaselineState {};

}  // namespace detail

struct TrainedModel {
    LearnerSpec spec;
    std::variant<detail::KnnState, detail::ForestState, detail::BoostState, detail::BaselineState> state;
    std::size_t n = 0;
    std::size_t d = 0;
    std::array<std::size_t, 3> class_counts{};
    std::vector<std::string> warnings;
};

/// i.i.d. uniform decisions from a seeded generator.
inline DecisionSequence random_policy(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("random_policy: n must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 2);
    DecisionSequence out(n);
    for (auto& d : out) d = static_cast<DecisionLabel>(pick(rng));
    return out;
}

namespace detail {

inline std::vector<int> codes(std::span<const DecisionLabel> y) {
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = code(y[i]);
    return out;
}

inline ForestState train_forest(const ForestParams& p, const RowMatrix& X, const std::vector<int>& y,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = X.rows();
    tree::TreeParams tp;
    tp.mtry = p.mtry ? p.mtry : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(X.cols())))));
    tp.min_leaf = p.min_leaf;
    tp.max_depth = p.max_depth;
    ForestState st;
    st.trees.reserve(p.n_trees);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t b = 0; b < p.n_trees; ++b) {
        std::vector<std::size_t> sample(n);
        for (auto& s : sample) s = pick(rng);
        st.trees.push_back(tree::ClassificationTree::grow(X, y, std::move(sample), tp, rng));
    }
    return st;
}

inline void softmax_present(const std::array<double, 3>& score, const std::array<bool, 3>& present,
                            std::array<double, 3>& prob) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < 3; ++c)
        if (present[c]) mx = std::max(mx, score[c]);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        prob[c] = present[c] ? std::exp(score[c] - mx) : 0.0;
        s += prob[c];
    }
    for (auto& p : prob) p /= s;
}

inline BoostState train_boost(const BoostParams& p, const RowMatrix& X, const std::vector<int>& y,
                              const std::array<std::size_t, 3>& counts, std::uint64_t seed) {
    const std::size_t n = X.rows();
    BoostState st;
    st.learning_rate = p.learning_rate;
    int n_present = 0;
    for (int c = 0; c < 3; ++c) {
        st.present[c] = counts[c] > 0;
        st.init[c] = st.present[c] ? std::log(static_cast<double>(counts[c]) / static_cast<double>(n)) : 0.0;
        n_present += st.present[c];
    }
    if (n_present < 2) return st;

    std::mt19937_64 rng(seed);
    std::vector<std::array<double, 3>> score(n, st.init);
    std::vector<double> residual(n);
    std::array<double, 3> prob{};
    std::vector<std::array<double, 3>> probs(n);
    const auto sub_n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p.subsample * static_cast<double>(n))));
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});

    for (std::size_t round = 0; round < p.rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            softmax_present(score[i], st.present, prob);
            probs[i] = prob;
        }
        std::array<std::vector<double>, 3> updates;
        for (int c = 0; c < 3; ++c) {
            if (!st.present[c]) continue;
            for (std::size_t i = 0; i < n; ++i) residual[i] = (y[i] == c ? 1.0 : 0.0) - probs[i][c];
            std::vector<std::size_t> sample = all;
            if (sub_n < n) {
                std::shuffle(sample.begin(), sample.end(), rng);
                sample.resize(sub_n);
                std::sort(sample.begin(), sample.end());
            }
            auto t = tree::RegressionTree::grow(X, residual, std::move(sample), p.max_depth);
            updates[c].resize(n);
            for (std::size_t i = 0; i < n; ++i) updates[c][i] = t.predict(X.row(i));
            st.trees[c].push_back(std::move(t));
        }
        for (int c = 0; c < 3; ++c)
            if (st.present[c])
                for (std::size_t i = 0; i < n; ++i) score[i][c] += p.learning_rate * updates[c][i];
    }
    return st;
}

}  // namespace detail

/// Deterministic in (spec.seed, X, y). Features are expected standardized.
inline TrainedModel train(const LearnerSpec& spec, const RowMatrix& X, std::span<const DecisionLabel> y) {
    spec.validate();
    if (X.rows() != y.size()) throw std::invalid_argument("train: row/label count mismatch");
    if (spec.kind != LearnerKind::RandomBaseline) {
        if (X.rows() == 0) throw std::invalid_argument("train: empty training set");
        if (X.rows() < 2) throw std::invalid_argument("train: need at least 2 training rows");
    }
    TrainedModel m;
    m.spec = spec;
    m.n = X.rows();
    m.d = X.cols();
    for (auto lab : y) ++m.class_counts[code(lab)];
    const auto distinct = std::count_if(m.class_counts.begin(), m.class_counts.end(), [](auto c) { return c > 0; });
    if (spec.kind != LearnerKind::RandomBaseline && distinct == 1)
        m.warnings.emplace_back("single-class training set");

    const auto yc = detail::codes(y);
    switch (spec.kind) {
        case LearnerKind::Knn: m.state = detail::KnnState{X, yc}; break;
        case LearnerKind::RandomForest: m.state = detail::train_forest(spec.forest, X, yc, spec.seed); break;
        case LearnerKind::GradientBoost:
            m.state = detail::train_boost(spec.boost, X, yc, m.class_counts, spec.seed);
            break;
        case LearnerKind::RandomBaseline: m.state = detail::BaselineState{}; break;
    }
    return m;
}

namespace detail {

/// k nearest by (squared distance, training index); majority vote, and among
/// tied classes the one owning the nearest neighbour.
inline int knn_vote(const KnnState& st, std::size_t k, std::span<const double> q, std::vector<std::size_t>& idx,
                    std::vector<double>& dist) {
    const std::size_t n = st.X.rows();
    k = std::min(k, n);
    idx.resize(n);
    dist.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = st.X.row(i);
        double s = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) {
            const double diff = r[c] - q[c];
            s += diff * diff;
        }
        dist[i] = s;
        idx[i] = i;
    }
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    std::array<std::size_t, 3> votes{};
    for (std::size_t j = 0; j < k; ++j) ++votes[st.y[idx[j]]];
    const auto top = *std::max_element(votes.begin(), votes.end());
    for (std::size_t j = 0; j < k; ++j)
        if (votes[st.y[idx[j]]] == top) return st.y[idx[j]];
    return st.y[idx[0]];
}

}  // namespace detail

inline DecisionSequence predict(const TrainedModel& model, const RowMatrix& X) {
    if (model.spec.kind != LearnerKind::RandomBaseline && X.cols() != model.d)
        throw std::invalid_argument("predict: dimension mismatch");
    DecisionSequence out;
    out.reserve(X.rows());
    if (X.rows() == 0) return out;

    if (const auto* knn = std::get_if<detail::KnnState>(&model.state)) {
        std::vector<std::size_t> idx;
        std::vector<double> dist;
        for (std::size_t r = 0; r < X.rows(); ++r)
            out.push_back(static_cast<DecisionLabel>(detail::knn_vote(*knn, model.spec.knn.k, X.row(r), idx, dist)));
    } else if (const auto* forest = std::get_if<detail::ForestState>(&model.state)) {
        for (std::size_t r = 0; r < X.rows(); ++r) {
            std::array<std::size_t, 3> votes{};
            for (const auto& t : forest->trees) ++votes[t.predict(X.row(r))];
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (votes[c] > votes[best]) best = c;
            out.push_back(static_cast<DecisionLabel>(best));
        }
    } else if (const auto* boost = std::get_if<detail::BoostState>(&model.state)) {
        for (std::size_t r = 0; r < X.rows(); ++r) {
            std::array<double, 3> score = boost->init;
            int best = -1;
            for (int c = 0; c < 3; ++c) {
                if (!boost->present[c]) continue;
                for (const auto& t : boost->trees[c]) score[c] += boost->learning_rate * t.predict(X.row(r));
                if (best < 0 || score[c] > score[best]) best = c;
            }
            out.push_back(static_cast<DecisionLabel>(best));
        }
    } else {
        out = random_policy(X.rows(), model.spec.seed);
    }
    return out;
}

}  // namespace emdtrade::learners
