#pragma once

// Candle loading, log returns and the quantile threshold labeler.

#include "emdtrade/common.hpp"
#include "emdtrade/csv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace emdtrade {

struct Candle {
    std::int64_t timestamp = 0;  // epoch seconds, UTC
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;
};

/// Why a candle is invalid, or an empty string when it is fine.
inline std::string candle_problem(const Candle& c) {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(c.open) || !finite(c.high) || !finite(c.low) || !finite(c.close) || !finite(c.volume))
        return "non-finite value";
    if (c.close <= 0.0) return "non-positive close";
    if (c.open <= 0.0 || c.low <= 0.0 || c.high <= 0.0) return "non-positive price";
    if (c.volume < 0.0) return "negative volume";
    if (c.low > std::min(c.open, c.close) || std::max(c.open, c.close) > c.high)
        return "inconsistent OHLC (need low <= min(open, close) <= max(open, close) <= high)";
    return {};
}

struct CandleSeries {
    std::string market_id;
    std::vector<Candle> candles;

    std::size_t size() const { return candles.size(); }

    std::vector<double> closes() const {
        std::vector<double> out;
        out.reserve(candles.size());
        for (const auto& c : candles) out.push_back(c.close);
        return out;
    }

    /// Number of consecutive pairs whose spacing differs from `step` seconds.
    std::size_t gap_count(std::int64_t step = 3600) const {
        std::size_t gaps = 0;
        for (std::size_t i = 1; i < candles.size(); ++i)
            if (candles[i].timestamp - candles[i - 1].timestamp != step) ++gaps;
        return gaps;
    }

    /// Throws std::invalid_argument on the first violated invariant.
    void validate() const {
        if (candles.size() < 2) throw std::invalid_argument("candle series needs at least 2 candles");
        for (std::size_t i = 0; i < candles.size(); ++i) {
            if (auto why = candle_problem(candles[i]); !why.empty())
                throw std::invalid_argument("candle " + std::to_string(i) + ": " + why);
            if (i > 0 && candles[i].timestamp <= candles[i - 1].timestamp)
                throw std::invalid_argument("candle " + std::to_string(i) + ": non-increasing timestamp");
        }
    }
};

inline constexpr std::string_view kCandleHeader = "timestamp,open,high,low,close,volume";

/// Loads a candle file. Rows must already be in strictly increasing time order.
inline CandleSeries load_candles(const std::string& path, std::string market_id = {}) {
    auto table = csv::read_table(path);
    std::string header;
    for (std::size_t i = 0; i < table.header.size(); ++i) header += (i ? "," : "") + table.header[i];
    if (header != kCandleHeader)
        throw InputError(path + ":1: expected header '" + std::string(kCandleHeader) + "'");

    CandleSeries series;
    series.market_id = market_id.empty() ? path : std::move(market_id);
    series.candles.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        auto where = path + ":" + std::to_string(table.line_numbers[r]) + ": ";
        auto ts = csv::parse_int(row[0]);
        if (!ts) throw InputError(where + "bad timestamp '" + row[0] + "'");
        std::array<double, 5> v{};
        for (std::size_t k = 0; k < 5; ++k) {
            auto parsed = csv::parse_double(row[k + 1]);
            if (!parsed) throw InputError(where + "bad number '" + row[k + 1] + "'");
            v[k] = *parsed;
        }
        Candle c{*ts, v[0], v[1], v[2], v[3], v[4]};
        if (auto why = candle_problem(c); !why.empty()) throw InputError(where + why);
        if (!series.candles.empty() && c.timestamp <= series.candles.back().timestamp)
            throw InputError(where + "non-increasing timestamp " + std::to_string(c.timestamp));
        series.candles.push_back(c);
    }
    if (series.candles.size() < 2) throw InputError(path + ": need at least 2 candles");
    return series;
}

inline void write_candles(const CandleSeries& series, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << kCandleHeader << '\n';
    for (const auto& c : series.candles)
        out << c.timestamp << ',' << format_number(c.open, 15) << ',' << format_number(c.high, 15) << ','
            << format_number(c.low, 15) << ',' << format_number(c.close, 15) << ','
            << format_number(c.volume, 15) << '\n';
    if (!out) throw InputError("write failure on '" + path + "'");
}

struct ReturnSeries {
    std::vector<double> returns;   // returns[t] = ln(close(t+1) / close(t))
    std::size_t aligned_index = 0; // offset of returns[0] in the candle series
};

inline ReturnSeries log_returns(const CandleSeries& series) {
    if (series.size() < 2) throw std::invalid_argument("log_returns: need at least 2 candles");
    ReturnSeries out;
    out.returns.reserve(series.size() - 1);
    for (std::size_t t = 0; t + 1 < series.size(); ++t)
        out.returns.push_back(std::log(series.candles[t + 1].close / series.candles[t].close));
    return out;
}

enum class DecisionLabel : int { Sell = 0, Hold = 1, Buy = 2 };

inline constexpr std::array<DecisionLabel, 3> kAllLabels{DecisionLabel::Sell, DecisionLabel::Hold,
                                                         DecisionLabel::Buy};

constexpr int code(DecisionLabel d) { return static_cast<int>(d); }

inline DecisionLabel label_from_code(int c) {
    if (c < 0 || c > 2) throw std::invalid_argument("decision code out of range: " + std::to_string(c));
    return static_cast<DecisionLabel>(c);
}

constexpr std::string_view label_name(DecisionLabel d) {
    switch (d) {
        case DecisionLabel::Sell: return "sell";
        case DecisionLabel::Hold: return "hold";
        case DecisionLabel::Buy: return "buy";
    }
    return "?";
}

/// Linear-interpolation empirical quantile: h = (n-1)p on the sorted sample.
inline double empirical_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("empirical_quantile: empty input");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("empirical_quantile: p outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

struct Thresholds {
    double lower = 0.0;
    double upper = 0.0;
};

inline Thresholds quantile_thresholds(std::span<const double> returns, double q = 0.035) {
    if (returns.empty()) throw std::invalid_argument("quantile_thresholds: empty returns");
    if (!(q > 0.0 && q < 0.5)) throw std::invalid_argument("quantile_thresholds: q must lie in (0, 0.5)");
    std::vector<double> v(returns.begin(), returns.end());
    return {empirical_quantile(v, q), empirical_quantile(std::move(v), 1.0 - q)};
}

/// Strict comparisons: boundary equality is Hold.
constexpr DecisionLabel label_return(double omega, double lower, double upper) {
    if (omega < lower) return DecisionLabel::Sell;
    if (omega > upper) return DecisionLabel::Buy;
    return DecisionLabel::Hold;
}

struct LabeledSeries {
    ReturnSeries returns;
    std::vector<DecisionLabel> labels;
    double lower_threshold = 0.0;
    double upper_threshold = 0.0;

    std::array<std::size_t, 3> class_counts() const {
        std::array<std::size_t, 3> counts{};
        for (auto d : labels) ++counts[code(d)];
        return counts;
    }
};

inline LabeledSeries label_decisions(ReturnSeries returns, double lower, double upper) {
    if (!(lower <= upper)) throw std::invalid_argument("label_decisions: lower threshold exceeds upper");
    LabeledSeries out;
    out.labels.reserve(returns.returns.size());
    for (double w : returns.returns) out.labels.push_back(label_return(w, lower, upper));
    out.returns = std::move(returns);
    out.lower_threshold = lower;
    out.upper_threshold = upper;
    return out;
}

}  // namespace emdtrade
