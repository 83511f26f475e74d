#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emdtrade {

/// Bad or unreadable input data (candle files, series files).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration or synth spec.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles; rows are observations.
class RowMatrix {
public:
    RowMatrix() = default;
    RowMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    void set_column(std::size_t c, std::span<const double> values) {
        if (values.size() != rows_) throw std::invalid_argument("set_column: length mismatch");
        for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
    }

    /// Rows picked by index, in the given order.
    RowMatrix select_rows(std::span<const std::size_t> idx) const {
        RowMatrix out(idx.size(), cols_);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = row(idx[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// 64-bit FNV-1a. Stable across platforms; used for derived seeds.
constexpr std::uint64_t fnv1a(std::string_view text,
                              std::uint64_t hash = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : text) {
        hash ^= ch;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// Seed derived from a base seed and an ordered list of key parts.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::string_view> parts) {
    std::string key = std::to_string(base);
    for (auto p : parts) {
        key += '|';
        key += p;
    }
    return fnv1a(key);
}

/// Shortest "%.*g" text that keeps `digits` significant digits.
inline std::string format_number(double v, int digits = 12) {
    if (v == 0.0) return "0";  // folds -0
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline double series_range(std::span<const double> x) {
    if (x.empty()) return 0.0;
    auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace emdtrade
