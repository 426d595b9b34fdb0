#pragma once

#include "mcs/encoding.hpp"
#include "mcs/umbrella.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mcs {

/// Training queries paired with the real rows they were built from.
struct QueryBatch {
    std::vector<int> rows;  // real instance paired with each query
    Matrix queries;         // encoded, masked attributes zero
    Matrix masks;           // 1 on encoded dims of unmasked attributes
    Vector weights;         // importance weights, sum to 1
};

/// Independent per-attribute keep draws; `always` attributes are never masked.
struct MaskPolicy {
    double keep = 0.5;
    std::vector<int> always;
};

class QuerySource {
public:
    virtual ~QuerySource() = default;
    virtual std::string name() const = 0;
    virtual QueryBatch draw(int batch, Rng& rng) const = 0;
};

/// Sources keep references to the schema and encoded matrix they were built on.
/// The focus attributes of the lf and us sources are always kept.

/// Queries from uniformly drawn rows with the mask policy (MCS-base).
std::unique_ptr<QuerySource> plain_queries(const DataSchema& schema, const Matrix& encoded, MaskPolicy policy);

/// All-zero queries with uniformly drawn real rows (observational training).
std::unique_ptr<QuerySource> zero_queries(const DataSchema& schema, const Matrix& encoded);

/// Category masses proportional to ln(1 + count); zero counts get no mass.
Vector log_frequency_masses(const std::vector<long>& counts);

/// Rows drawn by first picking a category of `focus` with log-frequency
/// mass (MCS-LF); uniform weights.
std::unique_ptr<QuerySource> log_frequency_queries(const DataSchema& schema, const Matrix& encoded,
                                                   const std::string& focus, MaskPolicy policy);

/// Umbrella-weighted draws (MCS-US): each drawn focus point is hardened and
/// matched to a real row with the same categorical focus values, nearest in
/// the continuous focus coordinates among up to 256 random candidates.
std::unique_ptr<QuerySource> umbrella_queries(const DataSchema& schema, const Matrix& encoded,
                                              std::shared_ptr<const UmbrellaPlan> plan, MaskPolicy policy);

}  // namespace mcs
