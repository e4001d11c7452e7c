#pragma once

// Plain CSV in and out. Numbers are written with 17 significant digits so
// every double survives a round trip.

#include "fftune/lifted.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

namespace fftune::csv {

inline std::string format_number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path), path_(path)
    {
        if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
    }

    Writer& header(const std::vector<std::string>& names)
    {
        write_row(names);
        return *this;
    }

    template <class... Cells>
    Writer& row(const Cells&... cells)
    {
        std::vector<std::string> parts;
        (parts.push_back(cell(cells)), ...);
        write_row(parts);
        return *this;
    }

    Writer& row(const std::vector<std::string>& cells)
    {
        write_row(cells);
        return *this;
    }

    void flush() { out_.flush(); }

    static std::string cell(double v) { return format_number(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class Int>
        requires std::is_integral_v<Int>
    static std::string cell(Int v) { return std::to_string(v); }

private:
    void write_row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
        if (!out_) throw std::runtime_error("write to " + path_ + " failed");
    }

    std::ofstream out_;
    std::string path_;
};

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep = ',')
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

/// Header row plus numeric rows; blank lines are skipped.
inline Table read_numeric(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Table table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split(line);
        if (table.columns.empty()) {
            table.columns = std::move(cells);
            continue;
        }
        if (cells.size() != table.columns.size())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(table.columns.size()) + " columns");
        std::vector<double> values;
        for (const auto& c : cells) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(c, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != c.size() || c.empty())
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": '" + c + "' is not a number");
            values.push_back(v);
        }
        table.rows.push_back(std::move(values));
    }
    if (table.columns.empty()) throw std::runtime_error(path + ": empty file");
    return table;
}

/// Reference in the `t, ch1, ch2, ...` layout.
inline Signal read_reference(const std::string& path)
{
    const Table table = read_numeric(path);
    if (table.columns.size() < 2 || table.columns.front() != "t")
        throw std::runtime_error(path + ": header must be 't, ch1, ch2, ...'");
    if (table.rows.empty()) throw std::runtime_error(path + ": no samples");
    Signal s(table.rows.size(), table.columns.size() - 1);
    for (std::size_t t = 0; t < table.rows.size(); ++t)
        for (std::size_t c = 0; c + 1 < table.columns.size(); ++c) s(c, t) = table.rows[t][c + 1];
    return s;
}

inline void write_reference(const std::string& path, const Signal& y, double sample_time)
{
    Writer w(path);
    std::vector<std::string> head{"t"};
    for (std::size_t c = 0; c < y.n_channels(); ++c) head.push_back("ch" + std::to_string(c + 1));
    w.header(head);
    for (std::size_t t = 0; t < y.n_samples(); ++t) {
        std::vector<std::string> row{format_number(static_cast<double>(t) * sample_time)};
        for (std::size_t c = 0; c < y.n_channels(); ++c) row.push_back(format_number(y(c, t)));
        w.row(row);
    }
}

} // namespace fftune::csv
