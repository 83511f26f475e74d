#pragma once

#include "emdtrade/common.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace emdtrade::csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// A delimited text file held as a header plus raw string cells.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row

    std::optional<std::size_t> column_index(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }
};

/// Reads a comma-separated file with a header row. Blank lines are skipped.
inline Table read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    Table table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = trim(line);
        if (line_no == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
        if (view.empty()) continue;
        auto cells = split(view);
        if (!have_header) {
            for (auto c : cells) table.header.emplace_back(c);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size())
            throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(table.header.size()) + " fields, got " +
                             std::to_string(cells.size()));
        std::vector<std::string> row;
        row.reserve(cells.size());
        for (auto c : cells) row.emplace_back(c);
        table.rows.push_back(std::move(row));
        table.line_numbers.push_back(line_no);
    }
    if (!have_header) throw InputError(path + ": empty file");
    if (in.bad()) throw InputError("read failure on '" + path + "'");
    return table;
}

}  // namespace emdtrade::csv
