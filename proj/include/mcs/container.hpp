#pragma once

#include "mcs/autodiff.hpp"
#include "mcs/core.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mcs {

/// Versioned binary container shared by every persisted artifact.
///
/// Layout (all integers and floats little-endian):
///   "MCS1" | u32 version | u32 section count
///   per section: u32 name length | name | u8 kind
///     kind 0 (matrix): u64 rows | u64 cols | rows*cols f64, row-major
///     kind 1 (text):   u64 length | bytes
///   u64 FNV-1a checksum of every preceding byte
class Container {
public:
    static constexpr std::string_view kMagic = "MCS1";
    static constexpr std::uint32_t kVersion = 1;

    void put(std::string name, Matrix value);
    void put_text(std::string name, std::string value);

    bool has(std::string_view name) const;
    const Matrix& matrix(std::string_view name) const;
    const std::string& text(std::string_view name) const;
    std::vector<std::string> names() const;

    std::string serialize() const;
    static Container parse(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

private:
    struct Section {
        std::string name;
        std::variant<Matrix, std::string> payload;
    };
    const Section& find(std::string_view name) const;
    std::vector<Section> sections_;
};

void put_parameters(Container& out, const ad::ParameterStore& store, std::string_view prefix);
/// Overwrites every parameter of `store` from `prefix/<name>` sections; shapes must match.
void get_parameters(const Container& in, ad::ParameterStore& store, std::string_view prefix);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mcs
