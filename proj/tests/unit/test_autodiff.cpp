#include "mcs/autodiff.hpp"
#include "mcs/nets.hpp"

#include "../support/gradcheck.hpp"

#include <doctest.h>

using namespace mcs;
using mcs::testing::op_cases;

namespace {
Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}
}  // namespace

TEST_SUITE("autodiff") {
    TEST_CASE("forward values of elementary ops") {
        ad::Graph g;
        auto a = g.input("a", row({-1, 2}));
        CHECK(g.value(g.relu(a)) == row({0, 2}));
        CHECK(g.value(g.softmax(g.input("z", row({0, 0})))).isApprox(row({0.5, 0.5}), 1e-15));
        const ad::NodeId parts[] = {g.input("p", row({1})), g.input("q", row({2, 3}))};
        CHECK(g.value(g.concat(parts)) == row({1, 2, 3}));
        CHECK(g.value(g.sigmoid(g.input("s", row({0}))))(0, 0) == doctest::Approx(0.5));
        CHECK(g.value(g.log_sigmoid(g.input("l", row({-800}))))(0, 0) == doctest::Approx(-800.0));
        CHECK(g.value(g.leaky_relu(a, 0.2)) == row({-0.2, 2}));
    }

    TEST_CASE("shape mismatch names the op") {
        ad::Graph g;
        auto a = g.input("a", Matrix::Zero(2, 3));
        auto b = g.input("b", Matrix::Zero(2, 3));
        CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
        try {
            g.matmul(a, b);
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        }
        CHECK_THROWS_AS(g.add(a, g.input("c", Matrix::Zero(3, 3))), ShapeError);
        CHECK_THROWS_AS(g.slice_cols(a, 2, 2), ShapeError);
    }

    TEST_CASE("backward requires a scalar loss") {
        ad::Graph g;
        auto a = g.input("a", Matrix::Ones(2, 2));
        CHECK_THROWS_AS(g.backward(a), ShapeError);
    }

    TEST_CASE("sum of squares gradient and constant loss") {
        ad::ParameterStore store;
        auto p = store.add("p", row({1, 2}));
        {
            ad::Graph g;
            auto x = g.parameter(store, p);
            g.backward(g.sum(g.mul(x, x)));
        }
        CHECK(store.grad(p) == row({2, 4}));
        store.zero_grad();
        {
            ad::Graph g;
            g.parameter(store, p);
            g.backward(g.sum(g.constant(row({3.0}))));
        }
        CHECK(store.grad(p).isZero(0.0));
    }

    TEST_CASE("gumbel softmax examples and errors") {
        ad::Graph g;
        auto z = g.input("z", row({0, 0, 0}));
        CHECK(g.value(g.gumbel_softmax(z, 0.5, row({0.5, 0.5, 0.5}))).isApprox(row({1.0 / 3, 1.0 / 3, 1.0 / 3}), 1e-15));
        auto peaked = g.gumbel_softmax(g.input("y", row({10, 0, 0})), 0.01, row({0.5, 0.5, 0.5}));
        CHECK(g.value(peaked)(0, 0) > 0.99);
        CHECK_THROWS_AS(g.gumbel_softmax(z, 0.0, row({0.5, 0.5, 0.5})), Error);
        CHECK_THROWS_AS(g.gumbel_softmax(z, 0.5, row({0.0, 0.5, 0.5})), Error);
        CHECK_THROWS_AS(g.gumbel_softmax(z, 0.5, row({0.5, 1.0, 0.5})), Error);
    }

    TEST_CASE("softmax rows are distributions") {
        Rng rng(3);
        for (int t = 0; t < 20; ++t) {
            ad::Graph g;
            const Matrix logits = mcs::testing::away_from_zero(rng, 5, 4, -30, 30);
            const Matrix noise = (Matrix::Ones(5, 4) * 0.5 + 0.49 * mcs::testing::away_from_zero(rng, 5, 4, -1, 1, 0));
            for (auto node : {g.softmax(g.input("l", logits)), g.gumbel_softmax(g.input("m", logits), 0.5, noise)}) {
                const Matrix& v = g.value(node);
                CHECK((v.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
                CHECK(v.minCoeff() >= 0.0);
                CHECK(v.maxCoeff() <= 1.0);
            }
        }
    }

    TEST_CASE("every op matches central differences") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            for (const auto& c : op_cases(seed)) {
                CAPTURE(c.name);
                CAPTURE(seed);
                CHECK(mcs::testing::max_relative_error(c.build, c.inputs) <= 1e-4);
            }
        }
    }

    TEST_CASE("two-layer nets match central differences") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            std::string wiring;
            const double err = mcs::testing::two_layer_net_error(seed, &wiring);
            CAPTURE(wiring);
            CHECK(err <= 1e-4);
        }
    }

    TEST_CASE("forward and backward are bit-identical on repeat") {
        auto run = [] {
            Rng rng(11);
            ad::ParameterStore store;
            const Dense l = add_dense(store, "l", 3, 2, rng);
            ad::Graph g;
            auto y = g.tanh(apply(g, store, l, g.input("x", Matrix::Constant(4, 3, 0.3))));
            g.backward(g.mean(g.mul(y, y)));
            return std::pair{g.value(y), store.grad(l.weight)};
        };
        const auto a = run(), b = run();
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }

    TEST_CASE("adam: zero gradient keeps parameters, descent on quadratic") {
        ad::ParameterStore store;
        auto p = store.add("p", row({1.0}));
        ad::Adam opt(store, {1e-2, 0.9, 0.999, 1e-8});
        opt.step();
        CHECK(store.value(p)(0, 0) == 1.0);

        store.grad(p)(0, 0) = 2.0;  // d/dp p^2 at 1
        opt.step();
        CHECK(std::abs(store.value(p)(0, 0)) < 1.0);
        CHECK(store.grad(p)(0, 0) == 0.0);
        CHECK(opt.steps() == 2);

        ad::ParameterStore quad;
        auto v = quad.add("v", row({2.0, -3.0}));
        ad::Adam o2(quad, {0.1, 0.9, 0.999, 1e-8});
        double loss = 0;
        for (int i = 0; i < 100; ++i) {
            ad::Graph g;
            auto x = g.parameter(quad, v);
            auto l = g.sum(g.mul(x, x));
            loss = g.value(l)(0, 0);
            g.backward(l);
            o2.step();
        }
        ad::Graph g;
        auto x = g.parameter(quad, v);
        loss = g.value(g.sum(g.mul(x, x)))(0, 0);
        CHECK(loss < 1e-3);
    }

    TEST_CASE("adam rejects a NaN gradient naming the parameter") {
        ad::ParameterStore store;
        auto p = store.add("layer.w", row({1.0}));
        ad::Adam opt(store);
        store.grad(p)(0, 0) = std::nan("");
        try {
            opt.step();
            FAIL("expected NumericalError");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
        }
    }
}
