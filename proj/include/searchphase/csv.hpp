#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace searchphase {

// 12 significant digits; inf, -inf and nan spelled out.
std::string format_number(double x);

using Cell = std::variant<double, long long, std::string>;

struct CsvTable {
    std::vector<std::pair<std::string, std::string>> meta;  // written as "# key: value"
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(const std::vector<Cell>& cells);
    // Throws LookupError for an unknown column; non-numeric cells become nan.
    std::vector<double> numeric_column(const std::string& name) const;
    std::vector<std::string> text_column(const std::string& name) const;
    std::size_t column_index(const std::string& name) const;
    const std::string* meta_value(const std::string& key) const;
};

// LF line endings, '#' metadata lines first, then the header row.
std::string to_csv(const CsvTable& t);
CsvTable parse_csv(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace searchphase
