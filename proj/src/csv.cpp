#include "searchphase/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "searchphase/errors.hpp"

namespace searchphase {

std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

void CsvTable::add_row(const std::vector<Cell>& cells) {
    if (cells.size() != columns.size())
        throw InvalidArgument("row has " + std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(columns.size()));
    std::vector<std::string> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
        if (const auto* d = std::get_if<double>(&c))
            row.push_back(format_number(*d));
        else if (const auto* i = std::get_if<long long>(&c))
            row.push_back(std::to_string(*i));
        else
            row.push_back(std::get<std::string>(c));
    }
    rows.push_back(std::move(row));
}

std::size_t CsvTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw LookupError("no column '" + name + "'");
}

std::vector<double> CsvTable::numeric_column(const std::string& name) const {
    const auto j = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        const std::string& s = r.at(j);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        out.push_back(end != s.c_str() && *end == '\0' ? v : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

std::vector<std::string> CsvTable::text_column(const std::string& name) const {
    const auto j = column_index(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.at(j));
    return out;
}

const std::string* CsvTable::meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

namespace {

void check_cell(const std::string& s) {
    if (s.find_first_of(",\n\r") != std::string::npos) throw InvalidArgument("CSV cell contains a separator: " + s);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string to_csv(const CsvTable& t) {
    std::string out;
    for (const auto& [k, v] : t.meta) {
        if (k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
            throw InvalidArgument("metadata must be single-line");
        out += "# " + k + ": " + v + "\n";
    }
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
        check_cell(t.columns[i]);
        out += (i ? "," : "") + t.columns[i];
    }
    out += "\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            check_cell(r[i]);
            out += (i ? "," : "") + r[i];
        }
        out += "\n";
    }
    return out;
}

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto body = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
            const auto colon = body.find(": ");
            if (colon == std::string::npos)
                t.meta.emplace_back(body, "");
            else
                t.meta.emplace_back(body.substr(0, colon), body.substr(colon + 2));
            continue;
        }
        if (!header) {
            t.columns = split(line);
            header = true;
            continue;
        }
        auto row = split(line);
        if (row.size() != t.columns.size())
            throw AlignmentError("CSV row with " + std::to_string(row.size()) + " cells under a " +
                                 std::to_string(t.columns.size()) + "-column header");
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LookupError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigurationError("cannot write '" + path + "'");
    f << text;
    if (!f) throw ConfigurationError("write failed for '" + path + "'");
}

}  // namespace searchphase
