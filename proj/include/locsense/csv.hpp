// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "locsense/core.hpp"

namespace locsense {

/// Full-precision decimal rendering: %.17g round-trips every double
/// bit-exactly through text.
inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

using CsvCell = std::variant<double, std::int64_t, std::string>;

/// UTF-8 CSV with unit-annotated column names, '#' metadata comment lines
/// before the header, decimal dot, and deterministic row order (rows are
/// emitted exactly as appended).
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add_comment(const std::string& line) { comments_.push_back(line); }

    void add_row(std::vector<CsvCell> row) {
        if (row.size() != columns_.size())
            throw std::invalid_argument("csv row size does not match header");
        rows_.push_back(std::move(row));
    }

    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t n_rows() const { return rows_.size(); }

    std::string header_line() const {
        std::string out;
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) out += ",";
            out += columns_[i];
        }
        return out;
    }

    std::string to_string() const {
        std::string out;
        for (const auto& c : comments_) out += "# " + c + "\n";
        out += header_line() + "\n";
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out += ",";
                if (std::holds_alternative<double>(row[i]))
                    out += format_full(std::get<double>(row[i]));
                else if (std::holds_alternative<std::int64_t>(row[i]))
                    out += std::to_string(std::get<std::int64_t>(row[i]));
                else
                    out += std::get<std::string>(row[i]);
            }
            out += "\n";
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open for writing: " + path);
        f << to_string();
        if (!f) throw std::runtime_error("write failed: " + path);
    }

private:
    std::vector<std::string> columns_;
    std::vector<std::string> comments_;
    std::vector<std::vector<CsvCell>> rows_;
};

/// Minimal reader for round-trip checks and downstream tooling: skips
/// comment lines, splits on commas, no quoting (the writers never emit
/// commas inside cells).
struct CsvContent {
    std::vector<std::string> comments;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return int(i);
        throw std::invalid_argument("no such csv column: " + name);
    }
};

inline CsvContent read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    CsvContent out;
    std::string line;
    bool header_done = false;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            out.comments.push_back(line.size() > 2 ? line.substr(2) : "");
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            auto pos = line.find(',', start);
            cells.push_back(line.substr(start, pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (!header_done) {
            out.columns = std::move(cells);
            header_done = true;
        } else {
            out.rows.push_back(std::move(cells));
        }
    }
    return out;
}

}  // namespace locsense
