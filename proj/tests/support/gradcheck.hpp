#pragma once

#include "mcs/autodiff.hpp"
#include "mcs/nets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace mcs::testing {

using Builder = std::function<ad::NodeId(ad::Graph&, const std::vector<ad::NodeId>&)>;

/// |a - n| / max(|a|, |n|, floor) maximized over every input entry, where a
/// is the reverse-mode gradient and n the central difference.
inline double max_relative_error(const Builder& build, std::vector<Matrix> inputs, double h = 1e-5,
                                 double floor = 1e-3) {
    auto evaluate = [&](const std::vector<Matrix>& values, std::vector<Matrix>* grads) {
        ad::Graph g;
        std::vector<ad::NodeId> ids;
        for (std::size_t i = 0; i < values.size(); ++i) ids.push_back(g.input("x" + std::to_string(i), values[i]));
        const ad::NodeId loss = build(g, ids);
        if (grads) {
            g.backward(loss);
            for (auto id : ids) grads->push_back(g.grad(id));
        }
        return g.value(loss)(0, 0);
    };
    std::vector<Matrix> analytic;
    evaluate(inputs, &analytic);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k].data()[i];
            inputs[k].data()[i] = keep + h;
            const double up = evaluate(inputs, nullptr);
            inputs[k].data()[i] = keep - h;
            const double down = evaluate(inputs, nullptr);
            inputs[k].data()[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[k].data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
        }
    }
    return worst;
}

/// Same check for parameters of a store: `build` reads them through g.parameter.
inline double max_relative_error_params(const std::function<ad::NodeId(ad::Graph&)>& build, ad::ParameterStore& store,
                                        double h = 1e-5, double floor = 1e-3) {
    store.zero_grad();
    {
        ad::Graph g;
        g.backward(build(g));
    }
    std::vector<Matrix> analytic;
    for (int p = 0; p < store.size(); ++p) analytic.push_back(store.grad(ad::ParamId{p}));
    auto value = [&] {
        ad::Graph g;
        return g.value(build(g))(0, 0);
    };
    double worst = 0.0;
    for (int p = 0; p < store.size(); ++p) {
        Matrix& v = store.value(ad::ParamId{p});
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double keep = v.data()[i];
            v.data()[i] = keep + h;
            const double up = value();
            v.data()[i] = keep - h;
            const double down = value();
            v.data()[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[static_cast<std::size_t>(p)].data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
        }
    }
    store.zero_grad();
    return worst;
}

/// Uniform entries in [lo, hi] kept at least `gap` away from zero.
inline Matrix away_from_zero(Rng& rng, int rows, int cols, double lo = -2.0, double hi = 2.0, double gap = 0.05) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double v = d(rng);
        if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
        m.data()[i] = v;
    }
    return m;
}

/// Random projection to a scalar so every output entry reaches the loss.
inline ad::NodeId project(ad::Graph& g, ad::NodeId x, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const Matrix& v = g.value(x);
    Matrix r(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = d(rng);
    return g.sum(g.mul(x, g.constant(r)));
}

struct OpCase {
    std::string name;
    std::vector<Matrix> inputs;
    Builder build;
};

/// One randomized case per differentiable op (and broadcast variant).
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> dim(2, 4);
    const int r = dim(rng), c = dim(rng), k = dim(rng);
    auto m = [&](int rows, int cols) { return away_from_zero(rng, rows, cols); };
    auto positive = [&](int rows, int cols) { return away_from_zero(rng, rows, cols, 0.1, 2.0); };
    std::uniform_real_distribution<double> unit(0.01, 0.99);
    Matrix noise(r, c);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = unit(rng);
    Matrix targets = Matrix::Zero(r, c);
    for (int i = 0; i < r; ++i) targets(i, i % c) = 1.0;
    Matrix mask_row = Matrix::Zero(1, c);
    for (int j = 0; j < c; j += 2) mask_row(0, j) = 1.0;
    Matrix mask_full = (away_from_zero(rng, r, c).array() > 0).cast<double>();
    Vector weights = away_from_zero(rng, r, 1);
    const std::uint64_t p = seed * 31 + 1;

    std::vector<OpCase> cases;
    auto add = [&](std::string name, std::vector<Matrix> in, Builder b) {
        cases.push_back({std::move(name), std::move(in), std::move(b)});
    };
    add("matmul", {m(r, k), m(k, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.matmul(x[0], x[1]), p); });
    add("add", {m(r, c), m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.add(x[0], x[1]), p); });
    add("add_row_broadcast", {m(r, c), m(1, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.add(x[0], x[1]), p); });
    add("sub", {m(r, c), m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.sub(x[0], x[1]), p); });
    add("mul", {m(r, c), m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.mul(x[0], x[1]), p); });
    add("mul_row_broadcast", {m(r, c), m(1, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.mul(x[0], x[1]), p); });
    add("mul_col_broadcast", {m(r, c), m(r, 1)}, [p](ad::Graph& g, auto& x) { return project(g, g.mul(x[0], x[1]), p); });
    add("scale", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.scale(x[0], -1.7), p); });
    add("concat", {m(r, c), m(r, k)}, [p](ad::Graph& g, auto& x) {
        const ad::NodeId parts[] = {x[0], x[1]};
        return project(g, g.concat(parts), p);
    });
    add("slice_cols", {m(r, c + 2)}, [p, c](ad::Graph& g, auto& x) { return project(g, g.slice_cols(x[0], 1, c), p); });
    add("relu", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.relu(x[0]), p); });
    add("leaky_relu", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.leaky_relu(x[0], 0.2), p); });
    add("sigmoid", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.sigmoid(x[0]), p); });
    add("tanh", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.tanh(x[0]), p); });
    add("log", {positive(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.log(x[0]), p); });
    add("log_sigmoid", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.log_sigmoid(x[0]), p); });
    add("softmax", {m(r, c)}, [p](ad::Graph& g, auto& x) { return project(g, g.softmax(x[0]), p); });
    add("gumbel_softmax", {m(r, c)},
        [p, noise](ad::Graph& g, auto& x) { return project(g, g.gumbel_softmax(x[0], 0.5, noise), p); });
    add("cross_entropy", {m(r, c)}, [p, targets](ad::Graph& g, auto& x) {
        return project(g, g.cross_entropy(g.softmax(x[0]), targets), p);
    });
    add("squared_distance", {m(r, c), m(r, c)},
        [p](ad::Graph& g, auto& x) { return project(g, g.squared_distance(x[0], x[1]), p); });
    add("squared_distance_row_mask", {m(r, c), m(r, c)}, [p, mask_row](ad::Graph& g, auto& x) {
        return project(g, g.squared_distance(x[0], x[1], &mask_row), p);
    });
    add("squared_distance_full_mask", {m(r, c), m(r, c)}, [p, mask_full](ad::Graph& g, auto& x) {
        return project(g, g.squared_distance(x[0], x[1], &mask_full), p);
    });
    add("mean", {m(r, c)}, [](ad::Graph& g, auto& x) { return g.mean(g.mul(x[0], x[0])); });
    add("sum", {m(r, c)}, [](ad::Graph& g, auto& x) { return g.sum(g.mul(x[0], x[0])); });
    add("weighted_sum", {m(r, 1)}, [weights](ad::Graph& g, auto& x) {
        return g.weighted_sum(g.mul(x[0], x[0]), weights);
    });
    return cases;
}

/// Two dense layers with a randomly chosen hidden width and activations,
/// loss = mean squared output. Returns the parameter-gradient error.
inline double two_layer_net_error(std::uint64_t seed, std::string* wiring = nullptr) {
    Rng rng(seed);
    std::uniform_int_distribution<int> dim(2, 6), act(0, 3);
    const int in = dim(rng), hidden = dim(rng), out = dim(rng), batch = dim(rng);
    const int a1 = act(rng), a2 = act(rng);
    ad::ParameterStore store;
    const Dense l1 = add_dense(store, "l1", in, hidden, rng);
    const Dense l2 = add_dense(store, "l2", hidden, out, rng);
    // Nonzero biases so relu kinks are not hit at initialization symmetry.
    store.value(l1.bias) = away_from_zero(rng, 1, hidden, -0.5, 0.5, 0.05);
    store.value(l2.bias) = away_from_zero(rng, 1, out, -0.5, 0.5, 0.05);
    const Matrix x = away_from_zero(rng, batch, in);
    auto activate = [](ad::Graph& g, ad::NodeId v, int which) {
        switch (which) {
            case 0: return g.relu(v);
            case 1: return g.tanh(v);
            case 2: return g.sigmoid(v);
            default: return g.leaky_relu(v, 0.2);
        }
    };
    if (wiring) {
        static const char* names[] = {"relu", "tanh", "sigmoid", "leaky_relu"};
        *wiring = std::to_string(in) + "-" + names[a1] + "(" + std::to_string(hidden) + ")-" + names[a2] + "(" +
                  std::to_string(out) + ") batch " + std::to_string(batch);
    }
    return max_relative_error_params(
        [&](ad::Graph& g) {
            auto h = activate(g, apply(g, store, l1, g.input("x", x)), a1);
            auto y = activate(g, apply(g, store, l2, h), a2);
            return g.mean(g.mul(y, y));
        },
        store);
}

}  // namespace mcs::testing
