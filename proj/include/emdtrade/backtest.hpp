#pragma once

// APC scoring, temporal splits and the random-policy baseline band.

#include "emdtrade/common.hpp"
#include "emdtrade/learners.hpp"
#include "emdtrade/market_data.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace emdtrade {

/// Unit long/short/flat position for one step; `cost` is charged per non-Hold decision.
inline constexpr double profit(double omega, DecisionLabel d, double cost = 0.0) {
    switch (d) {
        case DecisionLabel::Buy: return omega - cost;
        case DecisionLabel::Sell: return -omega - cost;
        case DecisionLabel::Hold: return 0.0;
    }
    return 0.0;
}

struct BacktestResult {
    double apc = 0.0;
    std::vector<double> per_step_pnl;
    std::array<std::size_t, 3> n_trades{};  // by decision code
};

inline BacktestResult apc(std::span<const DecisionLabel> decisions, std::span<const double> next_returns,
                          double cost = 0.0) {
    if (decisions.size() != next_returns.size()) throw std::invalid_argument("apc: length mismatch");
    BacktestResult r;
    r.per_step_pnl.reserve(decisions.size());
    for (std::size_t t = 0; t < decisions.size(); ++t) {
        const double g = profit(next_returns[t], decisions[t], cost);
        r.per_step_pnl.push_back(g);
        r.apc += g;
        ++r.n_trades[code(decisions[t])];
    }
    return r;
}

/// Row count of the test block: ceil(n * f), guarded against products that
/// land a rounding error above an integer.
inline std::size_t test_size(std::size_t n, double test_fraction) {
    const double raw = static_cast<double>(n) * test_fraction;
    const double nearest = std::round(raw);
    const double v = std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw) ? nearest : std::ceil(raw);
    return static_cast<std::size_t>(v);
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline Split temporal_split(std::size_t n, double test_fraction) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("temporal_split: fraction outside (0, 1)");
    if (n < 5) throw std::invalid_argument("temporal_split: need at least 5 rows");
    const std::size_t n_test = test_size(n, test_fraction);
    if (n_test == 0 || n_test >= n) throw std::invalid_argument("temporal_split: empty train or test set");
    Split s;
    s.train.resize(n - n_test);
    s.test.resize(n_test);
    std::iota(s.train.begin(), s.train.end(), std::size_t{0});
    std::iota(s.test.begin(), s.test.end(), n - n_test);
    return s;
}

struct BaselineBand {
    double mean = 0.0;
    double p2_5 = 0.0;
    double p97_5 = 0.0;
    std::size_t replicates = 1000;
};

/// Replicate r uses random_policy(n, seed + r).
inline BaselineBand baseline_band(std::span<const double> next_returns, std::size_t replicates, std::uint64_t seed,
                                  double cost = 0.0) {
    if (next_returns.empty()) throw std::invalid_argument("baseline_band: empty returns");
    if (replicates < 100) throw std::invalid_argument("baseline_band: need at least 100 replicates");
    std::vector<double> scores(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        const auto policy = learners::random_policy(next_returns.size(), seed + r);
        double s = 0.0;
        for (std::size_t t = 0; t < policy.size(); ++t) s += profit(next_returns[t], policy[t], cost);
        scores[r] = s;
    }
    BaselineBand b;
    b.replicates = replicates;
    b.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(replicates);
    b.p2_5 = empirical_quantile(scores, 0.025);
    b.p97_5 = empirical_quantile(std::move(scores), 0.975);
    return b;
}

/// counts[true][pred] by label code.
using Confusion = std::array<std::array<std::size_t, 3>, 3>;

inline Confusion confusion(std::span<const DecisionLabel> truth, std::span<const DecisionLabel> pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("confusion: length mismatch");
    Confusion c{};
    for (std::size_t i = 0; i < truth.size(); ++i) ++c[code(truth[i])][code(pred[i])];
    return c;
}

}  // namespace emdtrade
