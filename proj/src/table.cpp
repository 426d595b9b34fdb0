#include "mcs/table.hpp"

#include "mcs/container.hpp"
#include "mcs/core.hpp"

#include <boost/tokenizer.hpp>

#include <sstream>

namespace mcs {

int Table::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    return -1;
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find(sep, start);
        if (end == std::string_view::npos) end = s.size();
        auto item = trim(s.substr(start, end - start));
        if (!item.empty()) out.push_back(std::move(item));
        start = end + 1;
    }
    return out;
}

Table parse_csv(std::string_view text) {
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    std::istringstream in{std::string(text)};
    std::string line;
    Table t;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        try {
            Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
            for (const auto& c : tok) cells.push_back(trim(c));
        } catch (const boost::escaped_list_error& e) {
            throw UserError("CSV line " + std::to_string(line_no) + ": " + e.what());
        }
        if (t.columns.empty()) {
            t.columns = std::move(cells);
            continue;
        }
        if (cells.size() != t.columns.size())
            throw UserError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(t.columns.size()) +
                            " cells, got " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (t.columns.empty()) throw UserError("CSV input has no header row");
    return t;
}

Table read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

namespace {
std::string quote(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '\\';
        out += c;
    }
    return out + "\"";
}
}  // namespace

std::string to_csv(const Table& table) {
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += quote(row[i]);
        }
        out += '\n';
    };
    emit(table.columns);
    for (const auto& r : table.rows) emit(r);
    return out;
}

void write_csv(const std::filesystem::path& path, const Table& table) { write_file(path, to_csv(table)); }

}  // namespace mcs
