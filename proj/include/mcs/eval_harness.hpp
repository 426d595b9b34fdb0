#pragma once

#include "mcs/classifiers.hpp"
#include "mcs/synthesizer.hpp"

#include <span>
#include <string>
#include <vector>

namespace mcs {

/// Mean Euclidean distance between a query and each sample over the encoded
/// dims selected by `mask` (1 = compared). Throws UserError on an empty set.
double avg_euclid_distance(const RowVector& query, const RowVector& mask, const Matrix& samples);
double avg_euclid_distance(const CounterfactualSet& set);

/// Fraction of predictions equal to `desired`. Throws UserError on an empty set.
double validity_rate(std::span<const int> predictions, int desired);
double validity_rate(const CounterfactualSet& set);

struct CompatibilityRow {
    ClassifierKind kind = ClassifierKind::Mlp;
    std::string source;          // "original" or "synthesized"
    std::vector<double> rounds;  // F-score per round
    double mean = 0.0;
};

struct CompatibilityReport {
    std::vector<CompatibilityRow> rows;

    const CompatibilityRow& find(ClassifierKind kind, std::string_view source) const;
    /// kind, source, mean, round_1..round_k.
    Table to_table() const;
    /// Plain layout: one line per kind with the original and synthesized means.
    std::string to_text() const;
};

struct CompatibilityOptions {
    int rounds = 5;
    double train_fraction = 0.8;
    std::string positive;  // class scored by F; empty: the last label category
    MlpConfig mlp;
    ForestConfig forest;
};

/// Each round splits both sources with the same round seed. Classifiers are
/// trained on the training part of each source and scored on the held-out
/// part of the original data. Both matrices use the full `schema` layout,
/// label included.
CompatibilityReport model_compatibility(const DataSchema& schema, const Matrix& original, const Matrix& synthesized,
                                        std::span<const ClassifierKind> kinds, std::uint64_t seed,
                                        const CompatibilityOptions& options = {});

struct Histogram {
    std::string attribute;
    std::vector<std::string> labels;  // category names or "[lo,hi)" bins
    std::vector<double> edges;        // continuous only, size labels + 1
    Vector frequencies;
};

/// Categorical: per-category frequency. Continuous: 20 equal bins spanning
/// the widest mixture component's mean +- 3 std range; values outside are
/// counted in the end bins.
Histogram conditional_histogram(std::span<const Record> samples, const DataSchema& schema, std::string_view attribute);

/// Fraction of samples whose `attribute` equals `value`.
double match_rate(std::span<const Record> samples, const DataSchema& schema, std::string_view attribute,
                  const Value& value);

struct LatencyPoint {
    int queries = 0;
    double mean_seconds = 0.0;  // per query, averaged over repeats
    double std_seconds = 0.0;
};

struct LatencyOptions {
    std::vector<int> counts{10, 20, 30};
    int repeats = 5;
    int samples = 20;  // counterfactuals per query
};

/// Wall time per query for generating `samples` counterfactuals, with the
/// queries taken from `pool` in order (cycled when the pool is short).
std::vector<LatencyPoint> latency_profile(const TrainedSynthesizer& synth, std::span<const Query> pool,
                                          std::uint64_t seed, const LatencyOptions& options = {});
Table latency_table(std::span<const LatencyPoint> points);

/// Two interleaving half circles with Gaussian noise; columns x1, x2, label (neg/pos).
Table make_moons(int n, double noise, std::uint64_t seed);

/// Imbalanced tabular set: status (married 60%, single 37%, widowed 3%),
/// age and hours continuous, label (neg/pos) from a logistic score in which
/// widowed lowers the odds and long hours raise them.
Table make_minority(int n, std::uint64_t seed);

}  // namespace mcs
