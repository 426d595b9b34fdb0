#include "mcs/causal_eval.hpp"

#include "../support/anm_pairs.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace mcs;

namespace {

std::vector<double> normal(int n, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> g(0.0, sd);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = g(rng);
    return v;
}

double percentile_of_null(const std::vector<double>& x, const std::vector<double>& y, double q, Rng& rng) {
    std::vector<double> null, shuffled = y;
    for (int i = 0; i < 200; ++i) {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        null.push_back(hsic(x, shuffled));
    }
    std::sort(null.begin(), null.end());
    return null[static_cast<std::size_t>(q * (null.size() - 1))];
}

}  // namespace

TEST_SUITE("causal_eval") {
    TEST_CASE("hsic examples") {
        Rng rng(1);
        const auto x = normal(200, rng), y = normal(200, rng);
        CHECK(hsic(std::vector<double>(200, 3.0), y) == 0.0);
        CHECK(hsic(x, y) >= 0.0);
        CHECK(hsic(x, y) <= percentile_of_null(x, y, 0.95, rng));
        CHECK(hsic(x, x) > percentile_of_null(x, x, 0.99, rng));
        CHECK_THROWS(hsic(std::vector<double>(5, 1.0), std::vector<double>(5, 1.0)));
        CHECK_THROWS(hsic(x, std::vector<double>(100, 1.0)));
    }

    TEST_CASE("hsic is invariant under a shared permutation") {
        Rng rng(2);
        auto x = normal(150, rng);
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i] + 0.1 * normal(1, rng)[0];
        const double before = hsic(x, y);
        std::vector<std::size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> px, py;
        for (auto i : idx) {
            px.push_back(x[i]);
            py.push_back(y[i]);
        }
        CHECK(hsic(px, py) == doctest::Approx(before).epsilon(1e-12));
    }

    TEST_CASE("anm examples") {
        Rng rng(3);
        std::uniform_real_distribution<double> u(-2, 2);
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> a(400), cube(400);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = u(rng);
            cube[i] = a[i] * a[i] * a[i] + g(rng);
        }
        const auto s = causation_score(a, cube, CausalMethod::Anm);
        CHECK(s.forward < s.backward);
        CHECK(s.tau >= 1.0);
        CHECK(s.verdict == Verdict::Forward);

        // Jointly Gaussian pair: no identifiable direction.
        std::vector<double> x = normal(400, rng), y(400);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.6 * x[i] + 0.8 * g(rng);
        const auto gauss = causation_score(x, y, CausalMethod::Anm);
        CHECK(std::abs(gauss.tau) < 1.0);
        CHECK(gauss.verdict == Verdict::None);

        const auto ind = causation_score(normal(400, rng), normal(400, rng), CausalMethod::Anm);
        CHECK(ind.verdict == Verdict::None);

        CHECK_THROWS_AS(anm_fitness(std::vector<double>(400, 1.0), y), UserError);
        CHECK_THROWS(anm_fitness(std::vector<double>(20, 1.0), std::vector<double>(20, 2.0)));
    }

    TEST_CASE("fitness is invariant under affine rescaling") {
        Rng rng(4);
        auto a = normal(200, rng);
        std::vector<double> b(a.size()), a2(a.size()), b2(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            b[i] = std::sin(a[i]) + 0.2 * normal(1, rng)[0];
            a2[i] = 2.0 * a[i] + 3.0;
            b2[i] = -0.5 * b[i] + 1.0;
        }
        CHECK(std::abs(anm_fitness(a2, b) - anm_fitness(a, b)) <= 1e-9);
        CHECK(std::abs(anm_fitness(a, b2) - anm_fitness(a, b)) <= 1e-9);
        CHECK(std::abs(cds_fitness(a2, b) - cds_fitness(a, b)) <= 1e-9);
    }

    TEST_CASE("cds examples") {
        Rng rng(5);
        const auto a = normal(500, rng);
        CHECK(cds_spread(a, std::vector<double>(500, 2.0)) == 0.0);

        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> h(1000), hb(1000);
        for (std::size_t i = 0; i < h.size(); ++i) {
            h[i] = u(rng);
            hb[i] = (0.05 + 2.0 * h[i] * h[i]) * g(rng);
        }
        const auto het = causation_score(h, hb, CausalMethod::Cds);
        INFO("heteroscedastic tau " << het.tau);
        CHECK(std::abs(het.tau) >= 1.0);

        const auto ind = causation_score(normal(500, rng), normal(500, rng), CausalMethod::Cds);
        INFO("independent tau " << ind.tau);
        CHECK(std::abs(ind.tau) < 1.0);

        std::vector<double> two(100);
        for (std::size_t i = 0; i < two.size(); ++i) two[i] = i % 2;
        CHECK_THROWS(cds_fitness(two, normal(100, rng)));
        CHECK_THROWS(cds_fitness(normal(20, rng), normal(20, rng)));
    }

    TEST_CASE("causation score antisymmetry and verdict thresholds") {
        const auto pairs = mcs::testing::synthetic_anm_pairs(4);
        for (const auto method : {CausalMethod::Anm, CausalMethod::Cds}) {
            for (const auto& p : pairs) {
                const auto ab = causation_score(p.a, p.b, method, 1.0, "x", "y");
                const auto ba = causation_score(p.b, p.a, method, 1.0, "y", "x");
                CHECK(ab.tau == -ba.tau);
                CHECK(ab.tau == ab.backward - ab.forward);
                CHECK(ab.n == static_cast<int>(p.a.size()));
                const Verdict mirrored = ab.verdict == Verdict::Forward    ? Verdict::Backward
                                         : ab.verdict == Verdict::Backward ? Verdict::Forward
                                                                           : Verdict::None;
                CHECK(ba.verdict == mirrored);
                const auto strict = causation_score(p.a, p.b, method, std::abs(ab.tau) + 1e-9);
                CHECK(strict.verdict == Verdict::None);
                const auto exact = causation_score(p.a, p.b, method, std::abs(ab.tau));
                CHECK(exact.verdict == (ab.tau >= 0 ? Verdict::Forward : Verdict::Backward));
            }
        }
        CHECK(verdict_text(Verdict::Forward, "a", "b") == "a->b");
        CHECK(verdict_text(Verdict::Backward, "a", "b") == "b->a");
        CHECK(verdict_text(Verdict::None, "a", "b") == "none");
    }

    TEST_CASE("direction recovery on synthetic ANM pairs") {
        int correct = 0;
        for (const auto& p : mcs::testing::synthetic_anm_pairs()) {
            const auto s = causation_score(p.a, p.b, CausalMethod::Anm);
            correct += s.verdict == (p.a_causes_b ? Verdict::Forward : Verdict::Backward);
        }
        INFO("correct " << correct);
        CHECK(correct >= 16);
    }

    TEST_CASE("numeric columns and the score table") {
        const auto cfg = parse_schema_config("[edu]\nkind = categorical\ncategories = low, mid, high\n"
                                             "[age]\nkind = continuous\nmodes = 1\n");
        Table t;
        t.columns = {"edu", "age"};
        for (int i = 0; i < 30; ++i) t.rows.push_back({i % 3 == 0 ? "low" : i % 3 == 1 ? "mid" : "high", std::to_string(20 + i)});
        const DataSchema schema = fit_schema(t, cfg);
        const auto records = to_records(t, schema);
        const auto edu = numeric_column(records, schema, "edu");
        CHECK(edu[0] == 0.0);
        CHECK(edu[1] == 1.0);
        CHECK(edu[2] == 2.0);
        CHECK(numeric_column(records, schema, "age")[5] == 25.0);
        CHECK_THROWS(numeric_column(records, schema, "nope"));

        CausationScore s;
        s.a = "edu";
        s.b = "age";
        s.n = 30;
        s.forward = 0.5;
        s.backward = 2.0;
        s.tau = 1.5;
        s.verdict = Verdict::Forward;
        const Table out = causation_table(std::vector<CausationScore>{s});
        CHECK(out.columns == std::vector<std::string>{"pair", "method", "n", "tau_f_forward", "tau_f_backward", "tau_c", "verdict"});
        CHECK(out.rows[0][6] == "edu->age");
        CHECK(out.rows[0][1] == "ANM");
    }
}
