#include "mcs/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>

namespace mcs {

double avg_euclid_distance(const RowVector& query, const RowVector& mask, const Matrix& samples) {
    if (samples.rows() == 0) throw UserError("avg_euclid_distance: empty counterfactual set");
    if (query.size() != samples.cols() || mask.size() != samples.cols())
        throw ShapeError("avg_euclid_distance: query, mask and samples differ in width");
    double total = 0.0;
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        total += ((samples.row(i) - query).array() * mask.array()).matrix().norm();
    return total / static_cast<double>(samples.rows());
}

double avg_euclid_distance(const CounterfactualSet& set) {
    return avg_euclid_distance(set.query.vector, set.query.dim_mask, set.encoded);
}

double validity_rate(std::span<const int> predictions, int desired) {
    if (predictions.empty()) throw UserError("validity_rate: empty counterfactual set");
    const auto hits = std::count(predictions.begin(), predictions.end(), desired);
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double validity_rate(const CounterfactualSet& set) {
    if (set.valid.empty()) throw UserError("validity_rate: counterfactual set has no validity flags");
    const auto hits = std::count(set.valid.begin(), set.valid.end(), true);
    return static_cast<double>(hits) / static_cast<double>(set.valid.size());
}

const CompatibilityRow& CompatibilityReport::find(ClassifierKind kind, std::string_view source) const {
    for (const auto& r : rows)
        if (r.kind == kind && r.source == source) return r;
    throw UserError("compatibility report has no row for " + std::string(kind_name(kind)) + "/" +
                    std::string(source));
}

namespace {
std::string fmt(double v, const char* f = "%.4f") {
    char buf[32];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}
}  // namespace

Table CompatibilityReport::to_table() const {
    Table t;
    t.columns = {"kind", "source", "mean"};
    const std::size_t k = rows.empty() ? 0 : rows.front().rounds.size();
    for (std::size_t r = 0; r < k; ++r) t.columns.push_back("round_" + std::to_string(r + 1));
    for (const auto& row : rows) {
        std::vector<std::string> cells{kind_name(row.kind), row.source, fmt(row.mean)};
        for (double v : row.rounds) cells.push_back(fmt(v));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

std::string CompatibilityReport::to_text() const {
    std::string out = "classifier   F_o      F_p\n";
    std::vector<ClassifierKind> kinds;
    for (const auto& r : rows)
        if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
    for (auto k : kinds) {
        char line[96];
        std::snprintf(line, sizeof line, "%-12s %.4f   %.4f\n", kind_name(k), find(k, "original").mean,
                      find(k, "synthesized").mean);
        out += line;
    }
    return out;
}

CompatibilityReport model_compatibility(const DataSchema& schema, const Matrix& original, const Matrix& synthesized,
                                        std::span<const ClassifierKind> kinds, std::uint64_t seed,
                                        const CompatibilityOptions& options) {
    if (schema.label().empty() || !schema.contains(schema.label()))
        throw UserError("model_compatibility: schema has no label attribute");
    if (original.cols() != schema.width() || synthesized.cols() != schema.width())
        throw ShapeError("model_compatibility: data width differs from the schema");
    if (options.rounds < 1) throw UserError("model_compatibility: rounds must be positive");

    const LabeledData orig = split_label(schema, original);
    const LabeledData synth = split_label(schema, synthesized);
    const auto& label_spec = schema.attribute(schema.index_of(schema.label()));
    const int positive = options.positive.empty() ? static_cast<int>(label_spec.categories.size()) - 1
                                                  : label_spec.category_index(options.positive);

    CompatibilityReport report;
    for (auto kind : kinds) {
        if (kind == ClassifierKind::Surrogate) throw UserError("model_compatibility: surrogate is not a trainable kind");
        for (const char* source : {"original", "synthesized"}) {
            CompatibilityRow row;
            row.kind = kind;
            row.source = source;
            report.rows.push_back(row);
        }
    }
    for (int r = 0; r < options.rounds; ++r) {
        const auto round_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
        const auto [orig_train, test] = split_indices(static_cast<int>(orig.x.rows()), options.train_fraction, round_seed);
        const auto synth_train = split_indices(static_cast<int>(synth.x.rows()), options.train_fraction, round_seed).first;
        const LabeledData test_data = subset(orig, test);
        for (auto& row : report.rows) {
            const LabeledData train = subset(row.source == "original" ? orig : synth,
                                             row.source == "original" ? orig_train : synth_train);
            std::vector<int> pred;
            if (std::adjacent_find(train.y.begin(), train.y.end(), std::not_equal_to<>()) == train.y.end()) {
                // A degenerate source carries one class; the only consistent model predicts it.
                pred.assign(test_data.y.size(), train.y.empty() ? 0 : train.y.front());
            } else {
                const auto model_seed = derive_seed(round_seed, "classifier");
                const Classifier f = row.kind == ClassifierKind::Forest
                                         ? train_random_forest(train, options.forest, model_seed)
                                         : train_mlp(train, options.mlp, model_seed);
                pred = f.predict(test_data.x, test_data.schema);
            }
            row.rounds.push_back(f_score(pred, test_data.y, positive));
        }
    }
    for (auto& row : report.rows)
        row.mean = std::accumulate(row.rounds.begin(), row.rounds.end(), 0.0) / static_cast<double>(row.rounds.size());
    return report;
}

Histogram conditional_histogram(std::span<const Record> samples, const DataSchema& schema,
                                std::string_view attribute) {
    const int a = schema.index_of(attribute);
    const auto& spec = schema.attribute(a);
    Histogram h;
    h.attribute = spec.name;
    if (spec.kind == AttributeKind::Categorical) {
        h.labels = spec.categories;
        h.frequencies = Vector::Zero(static_cast<Eigen::Index>(spec.categories.size()));
        for (const auto& r : samples) h.frequencies(spec.category_index(std::get<std::string>(r[a]))) += 1.0;
    } else {
        constexpr int kBins = 20;
        const auto& g = spec.gmm;
        double lo = g.means(0) - 3 * g.stds(0), hi = g.means(0) + 3 * g.stds(0);
        for (int k = 1; k < g.modes(); ++k) {
            lo = std::min(lo, g.means(k) - 3 * g.stds(k));
            hi = std::max(hi, g.means(k) + 3 * g.stds(k));
        }
        for (int b = 0; b <= kBins; ++b) h.edges.push_back(lo + (hi - lo) * b / kBins);
        for (int b = 0; b < kBins; ++b) h.labels.push_back("[" + fmt(h.edges[b], "%.4g") + "," + fmt(h.edges[b + 1], "%.4g") + ")");
        h.frequencies = Vector::Zero(kBins);
        for (const auto& r : samples) {
            const double v = std::get<double>(r[a]);
            const int b = std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * kBins)), 0, kBins - 1);
            h.frequencies(b) += 1.0;
        }
    }
    if (!samples.empty()) h.frequencies /= static_cast<double>(samples.size());
    return h;
}

double match_rate(std::span<const Record> samples, const DataSchema& schema, std::string_view attribute,
                  const Value& value) {
    if (samples.empty()) throw UserError("match_rate: empty sample set");
    const int a = schema.index_of(attribute);
    const auto hits = std::count_if(samples.begin(), samples.end(), [&](const Record& r) { return r[a] == value; });
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::vector<LatencyPoint> latency_profile(const TrainedSynthesizer& synth, std::span<const Query> pool,
                                          std::uint64_t seed, const LatencyOptions& options) {
    if (pool.empty()) throw UserError("latency_profile: empty query pool");
    using Clock = std::chrono::steady_clock;
    // One untimed call so first-touch allocation does not land in the first count.
    generate(synth, pool.front(), options.samples, seed);
    std::vector<LatencyPoint> out;
    for (int count : options.counts) {
        std::vector<double> per_query;
        for (int rep = 0; rep < options.repeats; ++rep) {
            const auto start = Clock::now();
            for (int q = 0; q < count; ++q)
                generate(synth, pool[static_cast<std::size_t>(q) % pool.size()], options.samples,
                         derive_seed(seed, static_cast<std::uint64_t>(rep * 1000 + q)));
            const std::chrono::duration<double> dt = Clock::now() - start;
            per_query.push_back(dt.count() / count);
        }
        LatencyPoint p;
        p.queries = count;
        p.mean_seconds = std::accumulate(per_query.begin(), per_query.end(), 0.0) / per_query.size();
        double s = 0;
        for (double v : per_query) s += (v - p.mean_seconds) * (v - p.mean_seconds);
        p.std_seconds = per_query.size() > 1 ? std::sqrt(s / (per_query.size() - 1)) : 0.0;
        out.push_back(p);
    }
    return out;
}

Table latency_table(std::span<const LatencyPoint> points) {
    Table t;
    t.columns = {"queries", "mean_seconds_per_query", "std_seconds_per_query"};
    for (const auto& p : points)
        t.rows.push_back({std::to_string(p.queries), fmt(p.mean_seconds, "%.6g"), fmt(p.std_seconds, "%.6g")});
    return t;
}

Table make_moons(int n, double noise, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, noise);
    Table t;
    t.columns = {"x1", "x2", "label"};
    const int outer = n / 2, inner = n - outer;
    auto cell = [](double v) { return fmt(v, "%.6f"); };
    for (int i = 0; i < outer; ++i) {
        const double a = outer > 1 ? std::numbers::pi * i / (outer - 1) : 0.0;
        t.rows.push_back({cell(std::cos(a) + gauss(rng)), cell(std::sin(a) + gauss(rng)), "neg"});
    }
    for (int i = 0; i < inner; ++i) {
        const double a = inner > 1 ? std::numbers::pi * i / (inner - 1) : 0.0;
        t.rows.push_back({cell(1.0 - std::cos(a) + gauss(rng)), cell(0.5 - std::sin(a) + gauss(rng)), "pos"});
    }
    std::shuffle(t.rows.begin(), t.rows.end(), rng);
    return t;
}

Table make_minority(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Table t;
    t.columns = {"status", "age", "hours", "label"};
    for (int i = 0; i < n; ++i) {
        const double u = unit(rng);
        const char* status = u < 0.60 ? "married" : u < 0.97 ? "single" : "widowed";
        const double age_mean = u < 0.60 ? 45.0 : u < 0.97 ? 30.0 : 66.0;
        const double age = std::clamp(age_mean + 8.0 * gauss(rng), 18.0, 90.0);
        const double hours = std::clamp(40.0 + 10.0 * gauss(rng), 5.0, 90.0);
        const double status_term = u < 0.60 ? 1.0 : u < 0.97 ? -0.5 : -1.5;
        const double score = status_term + 0.15 * (hours - 45.0) + 0.02 * (age - 40.0);
        const bool positive = unit(rng) < 1.0 / (1.0 + std::exp(-score));
        t.rows.push_back({status, fmt(age, "%.2f"), fmt(hours, "%.2f"), positive ? "pos" : "neg"});
    }
    return t;
}

}  // namespace mcs
