#include "mcs/eval_harness.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace mcs;

namespace {

const mcs::testing::Dataset& moons() {
    static const auto d = mcs::testing::dataset_from(read_csv("data/moons.csv"), mcs::testing::moons_schema_text());
    return d;
}

}  // namespace

TEST_SUITE("eval_harness") {
    TEST_CASE("average distance examples") {
        const RowVector q = RowVector::Zero(2), mask = RowVector::Ones(2);
        Matrix s(2, 2);
        s << 3, 4, 0, 0;
        CHECK(avg_euclid_distance(q, mask, s) == 2.5);
        CHECK(avg_euclid_distance(q, mask, q) == 0.0);
        CHECK_THROWS_AS(avg_euclid_distance(q, mask, Matrix(0, 2)), UserError);

        // Masked dims are ignored.
        const RowVector first = (RowVector(2) << 1, 0).finished();
        CHECK(avg_euclid_distance(q, first, s) == 1.5);

        Rng rng(1);
        const Matrix samples = ad::normal_noise(rng, 20, 6);
        const RowVector query = ad::normal_noise(rng, 1, 6);
        RowVector m = RowVector::Ones(6);
        m(2) = 0;
        double brute = 0;
        for (int i = 0; i < 20; ++i) {
            double sq = 0;
            for (int j = 0; j < 6; ++j) sq += m(j) * (samples(i, j) - query(j)) * (samples(i, j) - query(j));
            brute += std::sqrt(sq) / 20;
        }
        CHECK(std::abs(avg_euclid_distance(query, m, samples) - brute) <= 1e-12);

        const RowVector shift = ad::normal_noise(rng, 1, 6);
        const Matrix moved = samples.rowwise() + shift;
        CHECK(std::abs(avg_euclid_distance(query + shift, m, moved) - avg_euclid_distance(query, m, samples)) <= 1e-12);
    }

    TEST_CASE("validity examples") {
        const std::vector<int> all{1, 1, 1}, none{0, 0, 0}, half{1, 0, 1, 0};
        CHECK(validity_rate(all, 1) == 1.0);
        CHECK(validity_rate(none, 1) == 0.0);
        CHECK(validity_rate(half, 1) == 0.5);
        CHECK_THROWS_AS(validity_rate(std::vector<int>{}, 1), UserError);
        CounterfactualSet empty;
        CHECK_THROWS_AS(validity_rate(empty), UserError);
        CHECK_THROWS_AS(avg_euclid_distance(empty), UserError);
    }

    TEST_CASE("compatibility: identical sources agree per round") {
        const auto& d = moons();
        const std::vector<ClassifierKind> kinds{ClassifierKind::Forest, ClassifierKind::Mlp};
        CompatibilityOptions opt;
        opt.mlp.max_iterations = 50;
        const auto report = model_compatibility(d.schema, d.encoded, d.encoded, kinds, 4, opt);
        CHECK(report.rows.size() == 4);
        for (auto kind : kinds) {
            const auto& o = report.find(kind, "original");
            const auto& p = report.find(kind, "synthesized");
            CHECK(o.rounds.size() == 5);
            CHECK(o.rounds == p.rounds);
            CHECK(o.mean == p.mean);
            for (double f : o.rounds) CHECK((f >= 0.0 && f <= 1.0));
            CHECK(o.mean >= 0.8);
        }
        const Table t = report.to_table();
        CHECK(t.columns.size() == 3 + 5);
        CHECK(t.columns[3] == "round_1");
        CHECK(report.to_text().find("forest") != std::string::npos);
        CHECK_THROWS(report.find(ClassifierKind::Surrogate, "original"));
    }

    TEST_CASE("compatibility: single-class synthesized data") {
        const auto& d = moons();
        Matrix one_class = d.encoded;
        const Block lb = d.schema.block(d.schema.index_of("label"));
        one_class.middleCols(lb.offset, lb.width).setZero();
        one_class.col(lb.offset).setOnes();  // every row "neg"
        const std::vector<ClassifierKind> kinds{ClassifierKind::Forest};
        const auto report = model_compatibility(d.schema, d.encoded, one_class, kinds, 1);
        CHECK(report.find(ClassifierKind::Forest, "synthesized").mean <= 0.1);

        const std::vector<ClassifierKind> bad{ClassifierKind::Surrogate};
        CHECK_THROWS_AS(model_compatibility(d.schema, d.encoded, d.encoded, bad, 1), UserError);
        const DataSchema features = d.labeled.schema;
        CHECK_THROWS(model_compatibility(features, d.labeled.x, d.labeled.x, kinds, 1));
    }

    TEST_CASE("histograms") {
        const auto& d = moons();
        std::vector<Record> negs;
        for (const auto& r : d.records)
            if (std::get<std::string>(r[2]) == "neg") negs.push_back(r);
        const Histogram h = conditional_histogram(negs, d.schema, "label");
        CHECK(h.labels == std::vector<std::string>{"neg", "pos"});
        CHECK(h.frequencies(0) == 1.0);
        CHECK(h.frequencies(1) == 0.0);

        const Histogram c = conditional_histogram(d.records, d.schema, "x1");
        CHECK(c.labels.size() == 20);
        CHECK(c.edges.size() == 21);
        CHECK(std::abs(c.frequencies.sum() - 1.0) <= 1e-9);
        CHECK(conditional_histogram(negs, d.schema, "x1").edges == c.edges);
        CHECK_THROWS(conditional_histogram(d.records, d.schema, "nope"));

        CHECK(match_rate(negs, d.schema, "label", Value(std::string("neg"))) == 1.0);
        const double pos = match_rate(d.records, d.schema, "label", Value(std::string("pos")));
        CHECK((pos > 0.4 && pos < 0.6));
    }

    TEST_CASE("latency profile contract") {
        const auto& d = moons();
        const Classifier f = train_mlp(d.labeled, {}, 1);
        TrainConfig c;
        c.latent = 8;
        c.hidden = 16;
        c.epochs = 1;
        c.desired = "pos";
        const auto src = plain_queries(d.schema, d.encoded, MaskPolicy{});
        TrainInputs in;
        in.classifier = &f;
        const auto s = train(d.schema, d.encoded, *src, c, in, 1);
        std::vector<Query> pool;
        for (int i = 0; i < 7; ++i) pool.push_back(Query{{d.records[static_cast<std::size_t>(i)][0], std::nullopt, std::nullopt}});
        LatencyOptions opt;
        opt.repeats = 2;
        const auto points = latency_profile(s, pool, 3, opt);
        REQUIRE(points.size() == 3);
        CHECK(points[0].queries == 10);
        CHECK(points[2].queries == 30);
        for (const auto& p : points) {
            CHECK(p.mean_seconds > 0.0);
            CHECK(p.std_seconds >= 0.0);
        }
        CHECK(latency_table(points).rows.size() == 3);
    }

    TEST_CASE("synthetic tables") {
        const Table m = make_moons(400, 0.1, 2);
        CHECK(m.columns == std::vector<std::string>{"x1", "x2", "label"});
        CHECK(m.rows.size() == 400);
        CHECK(make_moons(400, 0.1, 2).rows == m.rows);

        const Table t = make_minority(5000, 3);
        CHECK(t.rows.size() == 5000);
        int widowed = 0;
        for (const auto& r : t.rows) widowed += r[0] == "widowed";
        CHECK(std::abs(widowed / 5000.0 - 0.03) <= 0.01);
    }
}
