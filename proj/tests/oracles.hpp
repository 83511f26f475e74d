#pragma once

// Independent reference computations used by the tests. Each one is written
// the slow, obvious way and shares no code with the library.

#include "emdtrade/common.hpp"
#include "emdtrade/market_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using emdtrade::DecisionLabel;

inline std::vector<double> random_walk(std::size_t n, std::uint64_t seed, double step = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, step);
    std::vector<double> x(n);
    double v = 0.0;
    for (auto& e : x) e = (v += z(rng));
    return x;
}

inline emdtrade::RowMatrix gaussian_rows(std::size_t n, std::size_t d, std::uint64_t seed, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    emdtrade::RowMatrix m(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) m(r, c) = z(rng) + shift;
    return m;
}

/// Quantile by explicit order statistics (insertion sort, no std::sort).
inline double quantile(std::vector<double> v, double p) {
    for (std::size_t i = 1; i < v.size(); ++i)
        for (std::size_t j = i; j > 0 && v[j - 1] > v[j]; --j) std::swap(v[j - 1], v[j]);
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const double fl = std::floor(h);
    const auto i = static_cast<std::size_t>(fl);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (h - fl) * (v[i + 1] - v[i]);
}

/// OLS through the 2x2 normal equations in raw (uncentred) sums.
inline std::pair<double, double> ols(const std::vector<double>& y) {
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double x = static_cast<double>(k);
        s0 += 1;
        s1 += x;
        s2 += x * x;
        t0 += y[k];
        t1 += x * y[k];
    }
    const double det = s0 * s2 - s1 * s1;
    return {(t0 * s2 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det};
}

/// Natural cubic spline second derivatives by dense Gaussian elimination.
inline std::vector<double> spline_second_derivatives(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
        a[i][i - 1] = h0;
        a[i][i] = 2 * (h0 + h1);
        a[i][i + 1] = h1;
        a[i][n] = 6 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
        }
    }
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = a[i][n] / a[i][i];
    return m;
}

inline double spline_eval(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& m,
                          double at) {
    std::size_t i = 0;
    while (i + 2 < x.size() && at > x[i + 1]) ++i;
    const double h = x[i + 1] - x[i];
    const double a = (x[i + 1] - at) / h, b = (at - x[i]) / h;
    return a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
}

/// Exhaustive k-NN: stable sort of (distance, index), vote, nearest-class tie break.
inline DecisionLabel knn(const emdtrade::RowMatrix& X, const std::vector<DecisionLabel>& y, std::size_t k,
                         const std::vector<double>& q) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < X.rows(); ++i) {
        double s = 0;
        for (std::size_t c = 0; c < q.size(); ++c) s += (X(i, c) - q[c]) * (X(i, c) - q[c]);
        d.emplace_back(s, i);
    }
    std::stable_sort(d.begin(), d.end());
    k = std::min(k, d.size());
    std::map<int, int> votes;
    for (std::size_t j = 0; j < k; ++j) votes[emdtrade::code(y[d[j].second])]++;
    int top = 0;
    for (auto& [c, v] : votes) top = std::max(top, v);
    for (std::size_t j = 0; j < k; ++j)
        if (votes[emdtrade::code(y[d[j].second])] == top) return y[d[j].second];
    return y[d[0].second];
}

inline double apc(const std::vector<DecisionLabel>& d, const std::vector<double>& w) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] == DecisionLabel::Buy) s += w[i];
        if (d[i] == DecisionLabel::Sell) s -= w[i];
    }
    return s;
}

/// Closed-form Gaussian MLE log-likelihood with covariance S (d x d, row-major).
inline double gaussian_loglik(const emdtrade::RowMatrix& X, const std::vector<double>& mu,
                              std::vector<double> S) {
    const std::size_t d = mu.size();
    // Cholesky S = L L^T in place (lower).
    std::vector<double> L(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = S[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
            L[i * d + j] = i == j ? std::sqrt(s) : s / L[j * d + j];
        }
    double logdet = 0;
    for (std::size_t i = 0; i < d; ++i) logdet += 2 * std::log(L[i * d + i]);
    double total = 0;
    std::vector<double> z(d);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            double s = X(r, i) - mu[i];
            for (std::size_t k = 0; k < i; ++k) s -= L[i * d + k] * z[k];
            z[i] = s / L[i * d + i];
        }
        double q = 0;
        for (double v : z) q += v * v;
        total += -0.5 * (static_cast<double>(d) * std::log(2 * std::numbers::pi) + logdet + q);
    }
    return total;
}

}  // namespace oracle

namespace oracle {

/// Reference sifting: same stopping rule and boundary mirroring, but dense
/// spline solves and no shared code with the library.
inline std::vector<double> envelope_mean(const std::vector<double>& x, int pad, bool& ok) {
    const std::size_t n = x.size();
    std::vector<double> mx, my, nx, ny;
    std::vector<std::size_t> maxi, mini;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (x[k] > x[k - 1] && x[k] > x[k + 1]) maxi.push_back(k);
        if (x[k] < x[k - 1] && x[k] < x[k + 1]) mini.push_back(k);
    }
    ok = !maxi.empty() && !mini.empty();
    if (!ok) return {};
    auto build = [&](const std::vector<std::size_t>& idx, std::vector<double>& kx, std::vector<double>& ky) {
        const std::size_t p = std::min<std::size_t>(pad, idx.size());
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < p; ++i) pts.emplace_back(-double(idx[i]), x[idx[i]]);
        for (auto i : idx) pts.emplace_back(double(i), x[i]);
        for (std::size_t i = 0; i < p; ++i) {
            auto j = idx[idx.size() - 1 - i];
            pts.emplace_back(2.0 * double(n - 1) - double(j), x[j]);
        }
        std::sort(pts.begin(), pts.end());
        for (auto& [a, b] : pts) {
            if (!kx.empty() && a == kx.back()) continue;
            kx.push_back(a);
            ky.push_back(b);
        }
    };
    build(maxi, mx, my);
    build(mini, nx, ny);
    if (mx.size() < 2 || nx.size() < 2 || mx.front() > 0 || nx.front() > 0 || mx.back() < double(n - 1) ||
        nx.back() < double(n - 1)) {
        ok = false;
        return {};
    }
    auto mm = spline_second_derivatives(mx, my);
    auto nm = spline_second_derivatives(nx, ny);
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t)
        out[t] = 0.5 * (spline_eval(mx, my, mm, double(t)) + spline_eval(nx, ny, nm, double(t)));
    return out;
}

inline std::vector<double> sift(std::vector<double> h, double sd_stop = 0.3, int max_iters = 50, int pad = 2) {
    for (int k = 0; k < max_iters; ++k) {
        bool ok = false;
        auto m = envelope_mean(h, pad, ok);
        if (!ok) break;
        double sd = 0;
        std::vector<double> next(h.size());
        for (std::size_t t = 0; t < h.size(); ++t) {
            next[t] = h[t] - m[t];
            if (h[t] != 0) sd += (h[t] - next[t]) * (h[t] - next[t]) / (h[t] * h[t]);
        }
        h = next;
        if (sd <= sd_stop) break;
    }
    return h;
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b, std::size_t from, std::size_t to) {
    double ma = 0, mb = 0;
    const double n = double(to - from);
    for (std::size_t i = from; i < to; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = from; i < to; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
