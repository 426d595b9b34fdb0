#pragma once

#include "mcs/classifiers.hpp"
#include "mcs/encoding.hpp"
#include "mcs/table.hpp"

#include <random>
#include <string>
#include <vector>

namespace mcs::testing {

/// Two continuous attributes (bimodal and unimodal) and one categorical.
inline DataSchema mixed_schema(std::uint64_t seed = 1) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> bimodal, unimodal;
    for (int i = 0; i < 400; ++i) {
        bimodal.push_back(i % 2 ? 10.0 + g(rng) : g(rng));
        unimodal.push_back(3.0 + 0.5 * g(rng));
    }
    AttributeSpec a{"a", AttributeKind::Continuous, {}, {}, fit_gmm(bimodal, 2), 2};
    AttributeSpec b{"b", AttributeKind::Continuous, {}, {}, fit_gmm(unimodal, 1), 1};
    AttributeSpec c{"color", AttributeKind::Categorical, {"red", "green", "blue"}, Vector(3), {}, 0};
    c.frequencies << 0.5, 0.3, 0.2;
    return DataSchema({a, b, c});
}

struct Dataset {
    DataSchema schema;  // label included
    std::vector<Record> records;
    Matrix encoded;
    LabeledData labeled;
};

inline Dataset dataset_from(const Table& raw, const std::string& schema_text) {
    const SchemaConfig cfg = parse_schema_config(schema_text);
    const Table table = preprocess(raw, cfg.rules);
    Dataset d;
    d.schema = fit_schema(table, cfg);
    d.records = to_records(table, d.schema);
    d.encoded = encode_all(d.records, d.schema);
    d.labeled = split_label(d.schema, d.encoded);
    return d;
}

inline const char* moons_schema_text() {
    return "[dataset]\nlabel = label\n[x1]\nkind = continuous\nmodes = 5\n[x2]\nkind = continuous\nmodes = 5\n"
           "[label]\nkind = categorical\ncategories = neg, pos\n";
}

inline const char* minority_schema_text() {
    return "[dataset]\nlabel = label\n[status]\nkind = categorical\ncategories = married, single, widowed\n"
           "[age]\nkind = continuous\nmodes = 5\n[hours]\nkind = continuous\nmodes = 5\n"
           "[label]\nkind = categorical\ncategories = neg, pos\n";
}

/// Two Gaussian blobs in the plane, separable with a wide margin.
inline Table blobs(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    Table t;
    t.columns = {"x1", "x2", "label"};
    for (int i = 0; i < n; ++i) {
        const bool pos = i % 2;
        const double cx = pos ? 2.0 : -2.0;
        t.rows.push_back({std::to_string(cx + g(rng)), std::to_string(g(rng)), pos ? "pos" : "neg"});
    }
    return t;
}

/// XOR quadrants with a margin around the axes.
inline Table xor_table(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    Table t;
    t.columns = {"x1", "x2", "label"};
    for (int i = 0; i < n; ++i) {
        const double x = sign(rng) ? u(rng) : -u(rng);
        const double y = sign(rng) ? u(rng) : -u(rng);
        t.rows.push_back({std::to_string(x), std::to_string(y), (x > 0) != (y > 0) ? "pos" : "neg"});
    }
    return t;
}

}  // namespace mcs::testing
