#include "mcs/queries.hpp"

#include <cmath>
#include <map>

namespace mcs {

namespace {

void fill(QueryBatch& out, const DataSchema& schema, const Matrix& encoded, const MaskPolicy& policy, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(out.rows.size());
    out.queries.resize(n, schema.width());
    out.masks.resize(n, schema.width());
    std::bernoulli_distribution keep(policy.keep);
    std::vector<bool> kept(schema.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int a = 0; a < schema.size(); ++a) kept[a] = keep(rng);
        for (int a : policy.always) kept[a] = true;
        out.masks.row(i) = attribute_dim_mask(kept, schema);
        out.queries.row(i) = encoded.row(out.rows[i]).cwiseProduct(out.masks.row(i));
    }
}

int category_of(const Matrix& encoded, const DataSchema& schema, Eigen::Index row, int attribute) {
    const Block b = schema.block(attribute);
    Eigen::Index k;
    encoded.row(row).segment(b.offset, b.width).maxCoeff(&k);
    return static_cast<int>(k);
}

class PlainSource final : public QuerySource {
public:
    PlainSource(const DataSchema& schema, const Matrix& encoded, MaskPolicy policy)
        : schema_(schema), encoded_(encoded), policy_(std::move(policy)) {}
    std::string name() const override { return "plain"; }
    QueryBatch draw(int batch, Rng& rng) const override {
        QueryBatch out;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(encoded_.rows()) - 1);
        for (int i = 0; i < batch; ++i) out.rows.push_back(pick(rng));
        fill(out, schema_, encoded_, policy_, rng);
        out.weights = Vector::Constant(batch, 1.0 / batch);
        return out;
    }

private:
    const DataSchema& schema_;
    const Matrix& encoded_;
    MaskPolicy policy_;
};

class ZeroSource final : public QuerySource {
public:
    ZeroSource(const DataSchema& schema, const Matrix& encoded) : schema_(schema), encoded_(encoded) {}
    std::string name() const override { return "zero"; }
    QueryBatch draw(int batch, Rng& rng) const override {
        QueryBatch out;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(encoded_.rows()) - 1);
        for (int i = 0; i < batch; ++i) out.rows.push_back(pick(rng));
        out.queries = Matrix::Zero(batch, schema_.width());
        out.masks = Matrix::Zero(batch, schema_.width());
        out.weights = Vector::Constant(batch, 1.0 / batch);
        return out;
    }

private:
    const DataSchema& schema_;
    const Matrix& encoded_;
};

class LogFrequencySource final : public QuerySource {
public:
    LogFrequencySource(const DataSchema& schema, const Matrix& encoded, int focus, MaskPolicy policy)
        : schema_(schema), encoded_(encoded), policy_(std::move(policy)) {
        policy_.always.push_back(focus);
        const int k = schema.attribute(focus).width();
        by_category_.assign(k, {});
        for (Eigen::Index r = 0; r < encoded.rows(); ++r)
            by_category_[category_of(encoded, schema, r, focus)].push_back(static_cast<int>(r));
        std::vector<long> counts;
        for (const auto& rows : by_category_) counts.push_back(static_cast<long>(rows.size()));
        masses_ = log_frequency_masses(counts);
    }
    std::string name() const override { return "lf"; }
    QueryBatch draw(int batch, Rng& rng) const override {
        QueryBatch out;
        std::discrete_distribution<int> category(masses_.data(), masses_.data() + masses_.size());
        for (int i = 0; i < batch; ++i) {
            const auto& rows = by_category_[category(rng)];
            std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
            out.rows.push_back(rows[pick(rng)]);
        }
        fill(out, schema_, encoded_, policy_, rng);
        out.weights = Vector::Constant(batch, 1.0 / batch);
        return out;
    }

private:
    const DataSchema& schema_;
    const Matrix& encoded_;
    MaskPolicy policy_;
    std::vector<std::vector<int>> by_category_;
    Vector masses_;
};

class UmbrellaSource final : public QuerySource {
public:
    UmbrellaSource(const DataSchema& schema, const Matrix& encoded, std::shared_ptr<const UmbrellaPlan> plan,
                   MaskPolicy policy)
        : schema_(schema), encoded_(encoded), plan_(std::move(plan)), policy_(std::move(policy)) {
        const auto& fs = plan_->focus;
        policy_.always.insert(policy_.always.end(), fs.attributes.begin(), fs.attributes.end());
        hard_.resize(encoded.rows(), fs.dim);
        for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
            hard_.row(r) = fs.project(encoded.row(r), schema);
            groups_[key_of(hard_.row(r))].push_back(static_cast<int>(r));
        }
    }
    std::string name() const override { return "us"; }
    QueryBatch draw(int batch, Rng& rng) const override {
        QueryBatch out;
        const auto draws = draw_weighted(plan_->u, plan_->solution.w, batch, rng);
        out.weights.resize(batch);
        for (int i = 0; i < batch; ++i) {
            const auto& d = draws[i];
            const RowVector point = plan_->samples[d.window].row(d.sample);
            out.rows.push_back(match(point, rng));
            out.weights(i) = d.weight;
        }
        fill(out, schema_, encoded_, policy_, rng);
        return out;
    }

private:
    std::vector<int> key_of(const RowVector& point) const {
        const auto& fs = plan_->focus;
        std::vector<int> key;
        for (std::size_t f = 0; f < fs.attributes.size(); ++f) {
            if (!fs.categorical(schema_, static_cast<int>(f))) continue;
            Eigen::Index k;
            point.segment(fs.offsets[f], fs.width(schema_, static_cast<int>(f))).maxCoeff(&k);
            key.push_back(static_cast<int>(k));
        }
        return key;
    }

    int match(const RowVector& point, Rng& rng) const {
        const auto& fs = plan_->focus;
        auto it = groups_.find(key_of(point));
        const std::vector<int>* pool = it != groups_.end() ? &it->second : nullptr;
        const int pool_size = pool ? static_cast<int>(pool->size()) : static_cast<int>(encoded_.rows());
        auto row_at = [&](int i) { return pool ? (*pool)[i] : i; };
        std::uniform_int_distribution<int> pick(0, pool_size - 1);
        bool has_continuous = false;
        for (std::size_t f = 0; f < fs.attributes.size(); ++f)
            has_continuous = has_continuous || !fs.categorical(schema_, static_cast<int>(f));
        if (pool && !has_continuous) return row_at(pick(rng));

        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        const int tries = std::min(256, pool_size);
        for (int t = 0; t < tries; ++t) {
            const int r = row_at(tries == pool_size ? t : pick(rng));
            const double d = (hard_.row(r) - point).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = r;
            }
        }
        return best;
    }

    const DataSchema& schema_;
    const Matrix& encoded_;
    std::shared_ptr<const UmbrellaPlan> plan_;
    MaskPolicy policy_;
    Matrix hard_;
    std::map<std::vector<int>, std::vector<int>> groups_;
};

}  // namespace

std::unique_ptr<QuerySource> plain_queries(const DataSchema& schema, const Matrix& encoded, MaskPolicy policy) {
    if (encoded.rows() == 0) throw UserError("query source needs data");
    return std::make_unique<PlainSource>(schema, encoded, std::move(policy));
}

std::unique_ptr<QuerySource> zero_queries(const DataSchema& schema, const Matrix& encoded) {
    if (encoded.rows() == 0) throw UserError("query source needs data");
    return std::make_unique<ZeroSource>(schema, encoded);
}

Vector log_frequency_masses(const std::vector<long>& counts) {
    Vector m(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i) m(i) = std::log1p(static_cast<double>(std::max(counts[i], 0L)));
    const double total = m.sum();
    if (!(total > 0)) throw UserError("log-frequency sampling needs at least one nonempty category");
    return m / total;
}

std::unique_ptr<QuerySource> log_frequency_queries(const DataSchema& schema, const Matrix& encoded,
                                                   const std::string& focus, MaskPolicy policy) {
    if (encoded.rows() == 0) throw UserError("query source needs data");
    const int a = schema.index_of(focus);
    if (schema.attribute(a).kind != AttributeKind::Categorical)
        throw UserError("log-frequency sampling needs a categorical focus attribute, got '" + focus + "'");
    return std::make_unique<LogFrequencySource>(schema, encoded, a, std::move(policy));
}

std::unique_ptr<QuerySource> umbrella_queries(const DataSchema& schema, const Matrix& encoded,
                                              std::shared_ptr<const UmbrellaPlan> plan, MaskPolicy policy) {
    if (encoded.rows() == 0) throw UserError("query source needs data");
    if (!plan) throw UserError("umbrella source needs a plan");
    return std::make_unique<UmbrellaSource>(schema, encoded, std::move(plan), std::move(policy));
}

}  // namespace mcs
