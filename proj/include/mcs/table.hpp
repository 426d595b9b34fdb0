#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mcs {

/// Raw string table as read from a CSV file with a header row.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column_index(std::string_view name) const;  // -1 when absent
    std::size_t size() const { return rows.size(); }
};

Table parse_csv(std::string_view text);
Table read_csv(const std::filesystem::path& path);
std::string to_csv(const Table& table);
void write_csv(const std::filesystem::path& path, const Table& table);

std::string trim(std::string_view s);
std::vector<std::string> split_list(std::string_view s, char sep = ',');

}  // namespace mcs
