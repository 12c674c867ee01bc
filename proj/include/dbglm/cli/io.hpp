#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../types.hpp"

namespace dbglm::io {

/// Error raised for unreadable or unwritable files; maps to exit status 2.
class IoError : public InputError
{
public:
    using InputError::InputError;
};

/// Shortest text that round-trips: 17 significant digits.
inline std::string fmt(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(std::string const& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Splits one CSV line on commas; double quotes group fields.
inline std::vector<std::string> split_csv(std::string const& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '"') {
            if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else {
                quoted = !quoted;
            }
        } else if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::string quote_csv(std::string const& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Parses a finite number; empty, NA and NaN cells count as missing.
inline bool parse_number(std::string const& cell, double& out)
{
    if (cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "nan") return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtod(cell.c_str(), &end);
    return errno == 0 && end == cell.c_str() + cell.size() && std::isfinite(out);
}

struct Table
{
    std::vector<std::string> header;
    Matrix values;
};

/**
 * Reads a numeric CSV with a header row. Cells that are empty, NA or not
 * numbers are reported together, by 1-based data row, in one error.
 */
inline Table read_numeric_csv(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + " is empty");
    Table t;
    t.header = split_csv(line);
    std::size_t const cols = t.header.size();

    std::vector<std::vector<double>> rows;
    std::vector<std::string> bad;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        auto cells = split_csv(line);
        if (cells.size() != cols) {
            bad.push_back("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " fields, expected " +
                          std::to_string(cols));
            continue;
        }
        std::vector<double> r(cols);
        std::vector<std::string> missing;
        for (std::size_t c = 0; c < cols; ++c)
            if (!parse_number(cells[c], r[c])) missing.push_back(t.header[c]);
        if (!missing.empty()) {
            std::string m = "row " + std::to_string(row) + " (";
            for (std::size_t k = 0; k < missing.size(); ++k)
                m += (k ? ", " : "") + missing[k];
            bad.push_back(m + ")");
            continue;
        }
        rows.push_back(std::move(r));
    }
    if (!bad.empty()) {
        std::string msg = path.string() + ": missing or non-numeric values in ";
        for (std::size_t k = 0; k < bad.size() && k < 20; ++k)
            msg += (k ? "; " : "") + bad[k];
        if (bad.size() > 20) msg += "; and " + std::to_string(bad.size() - 20) + " more";
        throw InputError(msg);
    }
    t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c)
            t.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return t;
}

inline void ensure_directory(std::filesystem::path const& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

inline void write_text(std::filesystem::path const& path, std::string const& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(std::filesystem::path const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace dbglm::io
