#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace emdtrade {

/// Natural cubic spline (zero second derivative at both end knots).
class NaturalCubicSpline {
public:
    /// Knot abscissae must be strictly increasing; at least two knots.
    NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys) : x_(std::move(xs)), y_(std::move(ys)) {
        const std::size_t n = x_.size();
        if (n < 2 || y_.size() != n) throw std::invalid_argument("NaturalCubicSpline: need >= 2 matching knots");
        for (std::size_t i = 1; i < n; ++i)
            if (!(x_[i] > x_[i - 1])) throw std::invalid_argument("NaturalCubicSpline: knots not increasing");

        m_.assign(n, 0.0);
        if (n == 2) return;

        // Thomas algorithm on the interior second derivatives.
        const std::size_t k = n - 2;
        std::vector<double> diag(k), upper(k), rhs(k);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = x_[i] - x_[i - 1];
            const double h1 = x_[i + 1] - x_[i];
            diag[i - 1] = 2.0 * (h0 + h1);
            upper[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
        }
        for (std::size_t i = 1; i < k; ++i) {
            const double lower = x_[i + 1] - x_[i];  // h_{i} couples row i to row i-1
            const double w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m_[k] = rhs[k - 1] / diag[k - 1];
        for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
    }

    /// Values at ascending abscissae inside [front knot, back knot].
    std::vector<double> evaluate_sorted(std::span<const double> at) const {
        std::vector<double> out;
        out.reserve(at.size());
        std::size_t seg = 0;
        for (double x : at) {
            while (seg + 2 < x_.size() && x > x_[seg + 1]) ++seg;
            out.push_back(eval_segment(seg, x));
        }
        return out;
    }

    /// Values at 0, 1, ..., count-1.
    std::vector<double> evaluate_grid(std::size_t count) const {
        std::vector<double> out;
        out.reserve(count);
        std::size_t seg = 0;
        for (std::size_t i = 0; i < count; ++i) {
            const double x = static_cast<double>(i);
            while (seg + 2 < x_.size() && x > x_[seg + 1]) ++seg;
            out.push_back(eval_segment(seg, x));
        }
        return out;
    }

    double operator()(double x) const {
        std::size_t seg = 0;
        while (seg + 2 < x_.size() && x > x_[seg + 1]) ++seg;
        return eval_segment(seg, x);
    }

private:
    double eval_segment(std::size_t i, double x) const {
        const double h = x_[i + 1] - x_[i];
        const double a = (x_[i + 1] - x) / h;
        const double b = (x - x_[i]) / h;
        return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
    }

    std::vector<double> x_, y_, m_;
};

}  // namespace emdtrade
