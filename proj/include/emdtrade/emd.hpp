#pragma once

// Empirical mode decomposition by sifting, plus the cumulative
// high/medium/low stochasticity and trend components built from the IMFs.

#include "emdtrade/common.hpp"
#include "emdtrade/spline.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emdtrade::emd {

struct EmdConfig {
    double sd_stop = 0.3;
    int max_sift_iters = 50;
    int max_imfs = 12;
    int boundary_pad_extrema = 2;

    void validate() const {
        if (!(sd_stop > 0.0)) throw std::invalid_argument("emd: sd_stop must be > 0");
        if (max_sift_iters < 1 || max_imfs < 1) throw std::invalid_argument("emd: caps must be >= 1");
        if (boundary_pad_extrema < 1) throw std::invalid_argument("emd: boundary_pad_extrema must be >= 1");
    }
};

struct Extrema {
    std::vector<std::size_t> maxima;
    std::vector<std::size_t> minima;
    std::size_t count() const { return maxima.size() + minima.size(); }
};

/// Strict interior extrema; plateaus are not extrema.
inline Extrema find_extrema(std::span<const double> x, std::size_t first = 1, std::size_t last = 0) {
    Extrema e;
    if (x.size() < 3) return e;
    if (last == 0 || last > x.size() - 2) last = x.size() - 2;
    first = std::max<std::size_t>(first, 1);
    for (std::size_t k = first; k <= last; ++k) {
        if (x[k - 1] < x[k] && x[k] > x[k + 1]) e.maxima.push_back(k);
        else if (x[k - 1] > x[k] && x[k] < x[k + 1]) e.minima.push_back(k);
    }
    return e;
}

/// Sign changes between consecutive samples in [first, last]; exact zeros
/// are skipped so a touch-and-return does not count.
inline std::size_t count_zero_crossings(std::span<const double> x, std::size_t first = 0,
                                        std::size_t last = static_cast<std::size_t>(-1)) {
    last = std::min(last, x.size() ? x.size() - 1 : 0);
    std::size_t crossings = 0;
    int prev_sign = 0;
    for (std::size_t k = first; k <= last && k < x.size(); ++k) {
        const int s = (x[k] > 0.0) - (x[k] < 0.0);
        if (s == 0) continue;
        if (prev_sign != 0 && s != prev_sign) ++crossings;
        prev_sign = s;
    }
    return crossings;
}

namespace detail {

/// Knots for one envelope: the extrema plus `pad` of them mirrored across
/// each end of the signal (about index 0 and index n-1).
inline void envelope_knots(std::span<const double> x, const std::vector<std::size_t>& idx, int pad,
                           std::vector<double>& kx, std::vector<double>& ky) {
    const auto n_last = static_cast<double>(x.size() - 1);
    const std::size_t p = std::min<std::size_t>(static_cast<std::size_t>(pad), idx.size());
    kx.clear();
    ky.clear();
    kx.reserve(idx.size() + 2 * p);
    ky.reserve(idx.size() + 2 * p);
    for (std::size_t i = p; i-- > 0;) {
        kx.push_back(-static_cast<double>(idx[i]));
        ky.push_back(x[idx[i]]);
    }
    for (auto i : idx) {
        kx.push_back(static_cast<double>(i));
        ky.push_back(x[i]);
    }
    for (std::size_t i = 0; i < p; ++i) {
        const auto j = idx[idx.size() - 1 - i];
        kx.push_back(2.0 * n_last - static_cast<double>(j));
        ky.push_back(x[j]);
    }
}

}  // namespace detail

/// Mean of the upper and lower cubic-spline envelopes, or nullopt when either
/// envelope would have fewer than two knots (mirrored knots included) or
/// would not span the whole signal.
inline std::optional<std::vector<double>> mean_envelope(std::span<const double> x, int boundary_pad_extrema = 2) {
    if (x.size() < 3) return std::nullopt;
    const auto ext = find_extrema(x);
    if (ext.maxima.empty() || ext.minima.empty()) return std::nullopt;

    std::vector<double> kx, ky;
    detail::envelope_knots(x, ext.maxima, boundary_pad_extrema, kx, ky);
    if (kx.size() < 2 || kx.front() > 0.0 || kx.back() < static_cast<double>(x.size() - 1)) return std::nullopt;
    auto upper = NaturalCubicSpline(kx, ky).evaluate_grid(x.size());

    detail::envelope_knots(x, ext.minima, boundary_pad_extrema, kx, ky);
    if (kx.size() < 2 || kx.front() > 0.0 || kx.back() < static_cast<double>(x.size() - 1)) return std::nullopt;
    auto lower = NaturalCubicSpline(kx, ky).evaluate_grid(x.size());

    for (std::size_t i = 0; i < upper.size(); ++i) upper[i] = 0.5 * (upper[i] + lower[i]);
    return upper;
}

struct SiftResult {
    std::vector<double> imf;
    std::vector<double> proto_residual;  // signal - imf
    int iterations = 0;
    double final_sd = 0.0;
};

/// SD = sum (prev - next)^2 / prev^2 over samples with prev != 0.
inline double sifting_sd(std::span<const double> prev, std::span<const double> next) {
    double sd = 0.0;
    for (std::size_t t = 0; t < prev.size(); ++t) {
        if (prev[t] == 0.0) continue;
        const double d = prev[t] - next[t];
        sd += d * d / (prev[t] * prev[t]);
    }
    return sd;
}

/// Extracts one IMF, or nullopt when the signal is itself a residual (fewer
/// than two interior extrema, or no envelope can be formed).
inline std::optional<SiftResult> sift_one_imf(std::span<const double> signal, const EmdConfig& cfg = {}) {
    for (double v : signal)
        if (!std::isfinite(v)) throw std::invalid_argument("sift_one_imf: non-finite input");
    if (find_extrema(signal).count() < 2) return std::nullopt;

    std::vector<double> h(signal.begin(), signal.end());
    std::vector<double> next(h.size());
    SiftResult res;
    for (int k = 1; k <= cfg.max_sift_iters; ++k) {
        auto m = mean_envelope(h, cfg.boundary_pad_extrema);
        if (!m) {
            if (k == 1) return std::nullopt;
            break;
        }
        for (std::size_t t = 0; t < h.size(); ++t) next[t] = h[t] - (*m)[t];
        res.final_sd = sifting_sd(h, next);
        h.swap(next);
        res.iterations = k;
        if (res.final_sd <= cfg.sd_stop) break;
    }
    res.proto_residual.resize(h.size());
    for (std::size_t t = 0; t < h.size(); ++t) res.proto_residual[t] = signal[t] - h[t];
    res.imf = std::move(h);
    return res;
}

struct Decomposition {
    std::vector<std::vector<double>> imfs;  // imfs[0] is the highest-frequency mode
    std::vector<double> residual;
    std::string source_id;

    std::size_t imf_count() const { return imfs.size(); }
    std::size_t length() const { return residual.size(); }

    std::vector<double> reconstruct() const {
        std::vector<double> out(residual.size(), 0.0);
        for (const auto& c : imfs)
            for (std::size_t t = 0; t < out.size(); ++t) out[t] += c[t];
        for (std::size_t t = 0; t < out.size(); ++t) out[t] += residual[t];
        return out;
    }
};

inline constexpr std::size_t kMinDecomposeLength = 8;

/// An IMF whose peak magnitude is below this fraction of the input range is
/// rounding noise; sifting stops instead of storing it.
inline constexpr double kNegligibleImfRatio = 1e-10;

/// True when sifting `r` yields no IMF, or only one at rounding level
/// relative to `scale`.
inline bool is_residual(std::span<const double> r, double scale, const EmdConfig& cfg = {}) {
    auto step = sift_one_imf(r, cfg);
    if (!step) return true;
    double peak = 0.0;
    for (double v : step->imf) peak = std::max(peak, std::abs(v));
    return peak <= kNegligibleImfRatio * scale;
}

inline Decomposition decompose(std::span<const double> signal, const EmdConfig& cfg = {}, std::string source_id = {}) {
    cfg.validate();
    if (signal.size() < kMinDecomposeLength) throw std::invalid_argument("decompose: signal shorter than 8 samples");
    Decomposition d;
    d.source_id = std::move(source_id);
    d.residual.assign(signal.begin(), signal.end());
    const double floor = kNegligibleImfRatio * series_range(signal);
    while (static_cast<int>(d.imfs.size()) < cfg.max_imfs) {
        auto step = sift_one_imf(d.residual, cfg);
        if (!step) break;
        double peak = 0.0;
        for (double v : step->imf) peak = std::max(peak, std::abs(v));
        if (peak <= floor) break;
        // r_j = r_{j-1} - c_j
        for (std::size_t t = 0; t < d.residual.size(); ++t) d.residual[t] -= step->imf[t];
        d.imfs.push_back(std::move(step->imf));
    }
    return d;
}

enum class Component { High, Medium, Low, Trend };

struct Cutoffs {
    std::size_t r1 = 0, r2 = 0, r3 = 0;
};

/// r1 = max(1, J-6), r2 = max(1, J-4), r3 = max(1, J-2). J = 0 maps to zeros.
constexpr Cutoffs adaptive_cutoffs(std::size_t J) {
    if (J == 0) return {};
    auto clamp = [J](std::size_t drop) { return J > drop + 1 ? J - drop : std::size_t{1}; };
    return {clamp(6), clamp(4), clamp(2)};
}

struct ComponentSet {
    std::vector<double> high, medium, low, trend;
    Cutoffs cutoffs;

    const std::vector<double>& get(Component c) const {
        switch (c) {
            case Component::High: return high;
            case Component::Medium: return medium;
            case Component::Low: return low;
            case Component::Trend: return trend;
        }
        return trend;
    }
};

/// Cumulative IMF sums up to each cutoff; the trend takes the remaining IMFs
/// and, by default, the residual so that low + trend reproduces the input.
inline ComponentSet assemble_components(const Decomposition& d, bool trend_includes_residual = true) {
    const std::size_t n = d.length();
    const std::size_t J = d.imf_count();
    ComponentSet cs;
    cs.cutoffs = adaptive_cutoffs(J);
    cs.high.assign(n, 0.0);
    cs.trend.assign(n, 0.0);
    if (J == 0) {
        cs.medium = cs.high;
        cs.low = cs.high;
        cs.trend = d.residual;
        return cs;
    }
    auto accumulate = [&](std::vector<double>& acc, std::size_t from, std::size_t to) {
        for (std::size_t j = from; j < to; ++j)
            for (std::size_t t = 0; t < n; ++t) acc[t] += d.imfs[j][t];
    };
    accumulate(cs.high, 0, cs.cutoffs.r1);
    cs.medium = cs.high;
    accumulate(cs.medium, cs.cutoffs.r1, cs.cutoffs.r2);
    cs.low = cs.medium;
    accumulate(cs.low, cs.cutoffs.r2, cs.cutoffs.r3);
    accumulate(cs.trend, cs.cutoffs.r3, J);
    if (trend_includes_residual)
        for (std::size_t t = 0; t < n; ++t) cs.trend[t] += d.residual[t];
    return cs;
}

/// Causal component series: the value at index i is the last sample of the
/// components of the trailing window x[i-window+1 .. i]. Windows shorter than
/// the decomposition floor are all trend.
inline ComponentSet causal_components(std::span<const double> x, const EmdConfig& cfg, std::size_t window,
                                      bool trend_includes_residual = true) {
    if (window < kMinDecomposeLength) throw std::invalid_argument("causal_components: window below 8");
    const std::size_t n = x.size();
    ComponentSet cs;
    cs.high.assign(n, 0.0);
    cs.medium.assign(n, 0.0);
    cs.low.assign(n, 0.0);
    cs.trend.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = std::min(window, i + 1);
        if (len < kMinDecomposeLength) {
            cs.trend[i] = trend_includes_residual ? x[i] : 0.0;
            continue;
        }
        const auto part = assemble_components(decompose(x.subspan(i + 1 - len, len), cfg), trend_includes_residual);
        cs.high[i] = part.high.back();
        cs.medium[i] = part.medium.back();
        cs.low[i] = part.low.back();
        cs.trend[i] = part.trend.back();
    }
    return cs;
}

/// Columns: t, input, imf_1..imf_J, residual.
inline void write_decomposition(const Decomposition& d, std::span<const double> input, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << "t,input";
    for (std::size_t j = 0; j < d.imf_count(); ++j) out << ",imf_" << (j + 1);
    out << ",residual\n";
    for (std::size_t t = 0; t < d.length(); ++t) {
        out << t << ',' << format_number(input[t], 17);
        for (const auto& c : d.imfs) out << ',' << format_number(c[t], 17);
        out << ',' << format_number(d.residual[t], 17) << '\n';
    }
    if (!out) throw InputError("write failure on '" + path + "'");
}

}  // namespace emdtrade::emd
