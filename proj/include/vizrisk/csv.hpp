#pragma once

// Minimal comma-separated tables: no quoting, ids must not contain commas.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "vizrisk/error.hpp"

namespace vizrisk::csv {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find(',', start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Row {
    std::size_t line = 0;  // 1-based line number in the file
    std::vector<std::string> cells;
};

struct Table {
    std::string path;
    std::vector<std::string> header;
    std::vector<Row> rows;
};

/// Reads a header plus rows; blank lines are skipped, CR before LF is dropped,
/// and every row must have as many cells as the header.
inline Table read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "'");
    Table t;
    t.path = path;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw input_error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                              " fields, found " + std::to_string(cells.size()));
        }
        t.rows.push_back(Row{lineno, std::move(cells)});
    }
    if (!have_header) throw input_error(path + ": empty file (no header)");
    return t;
}

inline void expect_header_prefix(const Table& t, const std::vector<std::string>& prefix) {
    bool ok = t.header.size() >= prefix.size();
    for (std::size_t i = 0; ok && i < prefix.size(); ++i) ok = t.header[i] == prefix[i];
    if (!ok) {
        std::string want;
        for (const auto& p : prefix) want += (want.empty() ? "" : ",") + p;
        throw input_error(t.path + ":1: header must start with '" + want + "'");
    }
}

/// Joins cells with commas and a trailing LF.
inline std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    out += '\n';
    return out;
}

}  // namespace vizrisk::csv
