#pragma once

// Rolling-window features: one row per window end, aligned to the label at
// that index (the label at t encodes the move from close(t) to close(t+1)).

#include "emdtrade/common.hpp"
#include "emdtrade/market_data.hpp"

#include <array>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace emdtrade {

inline constexpr std::size_t kFeatureCount = 8;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "buy_prop", "sell_prop", "close", "lm_intercept", "lm_slope", "peak_curv", "peak_mag", "est_pct_change"};

struct FeatureVector {
    double buy_proportion = 0.0;
    double sell_proportion = 0.0;
    double close_price = 0.0;
    double lm_intercept = 0.0;
    double lm_slope = 0.0;
    double peaks_avg_curvature = 0.0;
    double peaks_avg_magnitude = 0.0;
    double est_pct_change = 0.0;

    std::array<double, kFeatureCount> as_array() const {
        return {buy_proportion, sell_proportion,     close_price,         lm_intercept,
                lm_slope,       peaks_avg_curvature, peaks_avg_magnitude, est_pct_change};
    }
};

struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
};

/// OLS of y against k = 0..n-1.
inline LinearFit fit_window_linear_model(std::span<const double> y) {
    if (y.size() < 2) throw std::invalid_argument("fit_window_linear_model: need at least 2 points");
    const double n = static_cast<double>(y.size());
    const double k_mean = (n - 1.0) / 2.0;
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double dk = static_cast<double>(k) - k_mean;
        sxy += dk * (y[k] - y_mean);
        sxx += dk * dk;
    }
    const double slope = sxy / sxx;
    return {y_mean - slope * k_mean, slope};
}

struct PeakStats {
    double avg_curvature = 0.0;
    double avg_magnitude = 0.0;
};

/// Means over strict interior local maxima of the second difference and the
/// peak value. (0, 0) when there is no peak.
inline PeakStats peak_statistics(std::span<const double> y) {
    if (y.size() < 3) throw std::invalid_argument("peak_statistics: need at least 3 points");
    double curv = 0.0, mag = 0.0;
    std::size_t peaks = 0;
    for (std::size_t k = 1; k + 1 < y.size(); ++k) {
        if (y[k - 1] < y[k] && y[k] > y[k + 1]) {
            curv += y[k - 1] - 2.0 * y[k] + y[k + 1];
            mag += y[k];
            ++peaks;
        }
    }
    if (peaks == 0) return {};
    return {curv / static_cast<double>(peaks), mag / static_cast<double>(peaks)};
}

struct FeatureOptions {
    std::size_t window = 15;
    // Counts labels t-w+1..t instead of t-w..t-1. Leaks the target.
    bool include_window_end_label = false;
};

/// Features for the window ending at t. Reads closes[t-w+1..t], returns[t-1]
/// and labels strictly before t (or up to t with include_window_end_label).
inline FeatureVector compute_feature_row(std::span<const double> closes, std::span<const DecisionLabel> labels,
                                         std::span<const double> returns, std::size_t t,
                                         const FeatureOptions& opt) {
    const std::size_t w = opt.window;
    auto window = closes.subspan(t + 1 - w, w);

    // Labels in [first, last]; indices before 0 count as neither buy nor sell.
    const std::ptrdiff_t last = opt.include_window_end_label ? static_cast<std::ptrdiff_t>(t)
                                                             : static_cast<std::ptrdiff_t>(t) - 1;
    const std::ptrdiff_t first = last - static_cast<std::ptrdiff_t>(w) + 1;
    std::size_t buys = 0, sells = 0;
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(first, 0); i <= last; ++i) {
        if (labels[static_cast<std::size_t>(i)] == DecisionLabel::Buy) ++buys;
        if (labels[static_cast<std::size_t>(i)] == DecisionLabel::Sell) ++sells;
    }

    const auto fit = fit_window_linear_model(window);
    const auto peaks = peak_statistics(window);
    FeatureVector f;
    f.buy_proportion = static_cast<double>(buys) / static_cast<double>(w);
    f.sell_proportion = static_cast<double>(sells) / static_cast<double>(w);
    f.close_price = closes[t];
    f.lm_intercept = fit.intercept;
    f.lm_slope = fit.slope;
    f.peaks_avg_curvature = peaks.avg_curvature;
    f.peaks_avg_magnitude = peaks.avg_magnitude;
    f.est_pct_change = returns[t - 1];
    return f;
}

struct FeatureRow {
    std::size_t t = 0;  // window-end index into the candle/label series
    FeatureVector features;
    DecisionLabel target = DecisionLabel::Hold;
};

struct FeatureMatrix {
    std::string market_id;
    std::size_t window_length = 15;
    std::vector<FeatureRow> rows;

    std::size_t size() const { return rows.size(); }

    RowMatrix to_matrix() const {
        RowMatrix m(rows.size(), kFeatureCount);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto a = rows[r].features.as_array();
            std::copy(a.begin(), a.end(), m.row(r).begin());
        }
        return m;
    }
};

/// One row per window end t in {w-1, ..., L-1}, L = label count.
inline FeatureMatrix extract_features(const LabeledSeries& labeled, const CandleSeries& candles,
                                      const FeatureOptions& opt = {}) {
    const std::size_t w = opt.window;
    if (w < 3) throw std::invalid_argument("extract_features: window must be >= 3");
    if (labeled.labels.size() + 1 != candles.size())
        throw std::invalid_argument("extract_features: labels must number candles - 1");
    if (candles.size() < w + 1) throw std::invalid_argument("extract_features: insufficient data for one window");

    const auto closes = candles.closes();
    FeatureMatrix out;
    out.market_id = candles.market_id;
    out.window_length = w;
    const std::size_t L = labeled.labels.size();
    out.rows.reserve(L - w + 1);
    for (std::size_t t = w - 1; t < L; ++t)
        out.rows.push_back({t, compute_feature_row(closes, labeled.labels, labeled.returns.returns, t, opt),
                            labeled.labels[t]});
    return out;
}

inline void write_feature_matrix(const FeatureMatrix& fm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << "t";
    for (auto name : kFeatureNames) out << ',' << name;
    out << ",target\n";
    for (const auto& row : fm.rows) {
        out << row.t;
        for (double v : row.features.as_array()) out << ',' << format_number(v, 15);
        out << ',' << code(row.target) << '\n';
    }
    if (!out) throw InputError("write failure on '" + path + "'");
}

/// Per-column z-score fitted on one set of rows and applied to others.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const RowMatrix& x) {
        if (x.empty()) throw std::invalid_argument("Standardizer::fit: no rows");
        Standardizer s;
        s.mean.assign(x.cols(), 0.0);
        s.scale.assign(x.cols(), 1.0);
        const double n = static_cast<double>(x.rows());
        for (std::size_t c = 0; c < x.cols(); ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < x.rows(); ++r) m += x(r, c);
            m /= n;
            double var = 0.0;
            for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, c) - m) * (x(r, c) - m);
            const double sd = std::sqrt(var / n);
            s.mean[c] = m;
            s.scale[c] = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;  // constant column: centre only
        }
        return s;
    }

    RowMatrix apply(const RowMatrix& x) const {
        if (x.cols() != mean.size()) throw std::invalid_argument("Standardizer::apply: column mismatch");
        RowMatrix out(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
        return out;
    }
};

}  // namespace emdtrade
