#pragma once

// Synthetic hourly market with a planted, partly predictable regime.
//
// Log returns follow w(t) = sigma * (s(t) + noise * e(t)), e ~ N(0, 1), where
// the planted drift s(t) = signal * jump * sign(w(t-1)) whenever
// trigger_lo * sigma <= |w(t-1)| < trigger_hi * sigma, and 0 otherwise.
// A moderately large move is therefore followed by a jump in the same
// direction. The pattern is visible to the est_pct_change feature.
//
// The Bayes-optimal decision at t trades sign(s(t)) on trigger steps and
// holds otherwise; its expected profit per step is pi * signal * jump * sigma
// with pi the stationary trigger probability (see bayes_summary).

#include "emdtrade/common.hpp"
#include "emdtrade/config.hpp"
#include "emdtrade/market_data.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace emdtrade::synth {

struct SynthSpec {
    std::size_t length = 2000;  // candles
    std::uint64_t seed = 1;
    double sigma = 0.01;
    double signal = 1.0;  // 0 removes the planted drift
    double noise = 1.0;
    double trigger_lo = 1.7;
    double trigger_hi = 2.2;
    double jump = 4.0;
    double initial_return = 0.0;  // w(-1)
    double start_price = 100.0;
    std::int64_t start_timestamp = 1'600'000'000;
    std::int64_t step_seconds = 3600;
    std::string market_id = "SYN";

    void validate() const {
        if (length < 200) throw ConfigError("synth: length must be >= 200");
        if (!(sigma > 0.0) || !(start_price > 0.0)) throw ConfigError("synth: sigma and start_price must be > 0");
        if (signal < 0.0 || noise < 0.0 || jump < 0.0) throw ConfigError("synth: signal, noise, jump must be >= 0");
        if (!(trigger_lo >= 0.0 && trigger_lo < trigger_hi)) throw ConfigError("synth: need 0 <= trigger_lo < trigger_hi");
        if (step_seconds < 1) throw ConfigError("synth: step_seconds must be >= 1");
    }

    static SynthSpec from_config(KeyValueConfig& kv) {
        SynthSpec s;
        s.length = static_cast<std::size_t>(kv.get_int("length", static_cast<long long>(s.length)));
        s.seed = kv.get_uint("seed", s.seed);
        s.sigma = kv.get_double("sigma", s.sigma);
        s.signal = kv.get_double("signal", s.signal);
        s.noise = kv.get_double("noise", s.noise);
        s.trigger_lo = kv.get_double("trigger_lo", s.trigger_lo);
        s.trigger_hi = kv.get_double("trigger_hi", s.trigger_hi);
        s.jump = kv.get_double("jump", s.jump);
        s.initial_return = kv.get_double("initial_return", s.initial_return);
        s.start_price = kv.get_double("start_price", s.start_price);
        s.start_timestamp = kv.get_int("start_timestamp", s.start_timestamp);
        s.step_seconds = kv.get_int("step_seconds", s.step_seconds);
        s.market_id = kv.get_string("market_id", s.market_id);
        kv.reject_unknown();
        s.validate();
        return s;
    }
};

inline bool is_trigger(double prev_return, const SynthSpec& s) {
    const double a = std::abs(prev_return);
    return a >= s.trigger_lo * s.sigma && a < s.trigger_hi * s.sigma;
}

/// Planted drift of step t in return units, given the previous return.
inline double planted_drift(double prev_return, const SynthSpec& s) {
    if (!is_trigger(prev_return, s) || prev_return == 0.0) return 0.0;
    return s.sigma * s.signal * s.jump * (prev_return > 0.0 ? 1.0 : -1.0);
}

struct SynthMarket {
    CandleSeries candles;
    std::vector<double> returns;  // log returns, returns[t] = ln(close(t+1) / close(t))
    std::vector<double> drift;    // planted drift of each return step
};

inline SynthMarket generate(const SynthSpec& s) {
    s.validate();
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::lognormal_distribution<double> vol(8.0, 0.5);
    SynthMarket m;
    m.candles.market_id = s.market_id;
    m.candles.candles.reserve(s.length);

    double close = s.start_price;
    double prev = s.initial_return;
    for (std::size_t i = 0; i < s.length; ++i) {
        Candle c;
        c.timestamp = s.start_timestamp + static_cast<std::int64_t>(i) * s.step_seconds;
        if (i == 0) {
            c.open = close;
        } else {
            const double drift = planted_drift(prev, s);
            const double w = drift + s.sigma * s.noise * z(rng);
            m.drift.push_back(drift);
            c.open = close;
            close = close * std::exp(w);
            m.returns.push_back(std::log(close / c.open));
            prev = m.returns.back();  // the trigger reads the series as stored
        }
        c.close = close;
        const double wick_up = std::abs(z(rng)) * s.sigma * 0.5;
        const double wick_down = std::abs(z(rng)) * s.sigma * 0.5;
        c.high = std::max(c.open, c.close) * std::exp(wick_up);
        c.low = std::min(c.open, c.close) * std::exp(-wick_down);
        c.volume = vol(rng);
        m.candles.candles.push_back(c);
    }
    return m;
}

/// Decisions d(t) for each return step t, using only returns before t.
inline std::vector<DecisionLabel> bayes_policy(std::span<const double> returns, const SynthSpec& s) {
    std::vector<DecisionLabel> out(returns.size(), DecisionLabel::Hold);
    for (std::size_t t = 0; t < returns.size(); ++t) {
        const double prev = t == 0 ? s.initial_return : returns[t - 1];
        const double d = planted_drift(prev, s);
        if (d > 0.0) out[t] = DecisionLabel::Buy;
        if (d < 0.0) out[t] = DecisionLabel::Sell;
    }
    return out;
}

struct BayesSummary {
    double p_trigger_quiet = 0.0;  // P(trigger | previous step had no drift)
    double p_trigger_after = 0.0;  // P(trigger | previous step had drift)
    double pi = 0.0;               // stationary trigger probability
    double apc_per_step = 0.0;     // expected Bayes-policy profit per step
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Closed-form stationary quantities of the trigger chain.
inline BayesSummary bayes_summary(const SynthSpec& s) {
    BayesSummary b;
    if (s.noise == 0.0) return b;  // deterministic path; no stationary regime
    const double lo = s.trigger_lo / s.noise, hi = s.trigger_hi / s.noise;
    b.p_trigger_quiet = 2.0 * (normal_cdf(hi) - normal_cdf(lo));
    // |m + e| in [lo, hi) with m = signal * jump / noise
    const double m = s.signal * s.jump / s.noise;
    b.p_trigger_after = (normal_cdf(hi - m) - normal_cdf(lo - m)) + (normal_cdf(-lo - m) - normal_cdf(-hi - m));
    b.pi = b.p_trigger_quiet / (1.0 + b.p_trigger_quiet - b.p_trigger_after);
    b.apc_per_step = b.pi * s.signal * s.jump * s.sigma;
    return b;
}

}  // namespace emdtrade::synth
