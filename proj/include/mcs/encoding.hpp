#pragma once

#include "mcs/core.hpp"
#include "mcs/table.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mcs {

enum class AttributeKind { Continuous, Categorical };

/// One-dimensional Gaussian mixture.
struct GmmModel {
    Vector weights;
    Vector means;
    Vector stds;

    static constexpr double kStdFloor = 1e-4;

    int modes() const { return static_cast<int>(weights.size()); }
    /// Log of each weighted component density at x.
    Vector log_joint(double x) const;
    Vector posterior(double x) const;
    int argmax_mode(double x) const;
    double mean_log_likelihood(std::span<const double> values) const;
};

struct GmmFitOptions {
    int max_iterations = 200;
    double tolerance = 1e-6;
};

/// EM fit of a K-mode mixture. Stops when the mean log-likelihood improves by
/// less than `tolerance` or after `max_iterations`. Fewer distinct values than
/// K collapses K to the distinct count. `trace`, when given, receives the mean
/// log-likelihood after every iteration.
GmmModel fit_gmm(std::span<const double> values, int modes, const GmmFitOptions& options = {},
                 std::vector<double>* trace = nullptr);

struct AttributeSpec {
    std::string name;
    AttributeKind kind = AttributeKind::Continuous;
    std::vector<std::string> categories;  // categorical only, in encoding order
    Vector frequencies;                   // categorical only, empirical, sums to 1
    GmmModel gmm;                         // continuous only
    int requested_modes = 5;

    int width() const;
    int category_index(std::string_view value) const;  // throws UserError
};

using Value = std::variant<double, std::string>;
using Record = std::vector<Value>;

struct Block {
    int offset = 0;
    int width = 0;
};

/// Ordered attribute metadata fixing the encoded layout: continuous attribute
/// -> [mode one-hot (K) | normalized scalar], categorical -> one-hot.
class DataSchema {
public:
    DataSchema() = default;
    explicit DataSchema(std::vector<AttributeSpec> attributes, std::string label = {});

    const std::vector<AttributeSpec>& attributes() const { return attributes_; }
    const AttributeSpec& attribute(int i) const { return attributes_.at(i); }
    int size() const { return static_cast<int>(attributes_.size()); }
    int index_of(std::string_view name) const;  // throws UserError
    bool contains(std::string_view name) const;
    int width() const { return width_; }
    Block block(int i) const { return blocks_.at(i); }
    const std::string& label() const { return label_; }

    /// Copy without one attribute (the label for classifier features).
    DataSchema without(std::string_view name) const;

    std::string to_json() const;
    static DataSchema from_json(std::string_view text);
    std::uint64_t hash() const;

private:
    std::vector<AttributeSpec> attributes_;
    std::vector<Block> blocks_;
    std::string label_;
    int width_ = 0;
};

RowVector encode_instance(const Record& row, const DataSchema& schema);
Matrix encode_all(std::span<const Record> rows, const DataSchema& schema);

/// Inverse of encode_instance. With `harden`, one-hot blocks resolve by
/// argmax; without it every one-hot block must already be exact.
Record decode_instance(const Eigen::Ref<const RowVector>& encoded, const DataSchema& schema, bool harden);

/// Sets every one-hot block (categorical and mode blocks) to its argmax one-hot.
void harden_blocks(Eigen::Ref<Matrix> encoded, const DataSchema& schema);

/// Partially specified instance: nullopt marks a masked attribute.
struct Query {
    std::vector<std::optional<Value>> values;
};

struct EncodedQuery {
    RowVector vector;          // masked attributes are zero blocks
    RowVector dim_mask;        // 1 on encoded dims of unmasked attributes
    std::vector<bool> kept;    // per attribute
};

EncodedQuery make_query(const Query& query, const DataSchema& schema);
/// Builds a query from name -> raw string cells; absent names are masked.
Query parse_query(const std::map<std::string, std::string>& cells, const DataSchema& schema);
RowVector attribute_dim_mask(const std::vector<bool>& kept, const DataSchema& schema);

Value parse_value(std::string_view cell, const AttributeSpec& spec);
std::string format_value(const Value& v);
std::vector<Record> to_records(const Table& table, const DataSchema& schema);
Table to_table(std::span<const Record> rows, const DataSchema& schema);

struct PreprocessRules {
    std::vector<std::string> drop_columns;
    std::map<std::string, std::map<std::string, std::string>> merges;  // column -> value -> replacement
    std::set<std::string> missing_tokens{"", "?"};
};

/// Drops rows with missing cells, deletes listed columns, applies value merges.
Table preprocess(const Table& table, const PreprocessRules& rules);

struct AttributeConfig {
    std::string name;
    AttributeKind kind = AttributeKind::Continuous;
    std::vector<std::string> categories;
    int modes = 5;
};

struct SchemaConfig {
    std::vector<AttributeConfig> attributes;
    std::string label;
    PreprocessRules rules;
};

/// Parses the key-value schema file: a [dataset] section (label, drop,
/// missing) followed by one section per attribute (kind, categories or
/// modes, merge = from:to, ...).
SchemaConfig parse_schema_config(std::string_view text);
SchemaConfig load_schema_config(const std::filesystem::path& path);

/// Fits mixture models and category frequencies on a preprocessed table.
DataSchema fit_schema(const Table& table, const SchemaConfig& config);

}  // namespace mcs
