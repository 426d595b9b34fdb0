#include "mcs/nets.hpp"

#include <cmath>

namespace mcs {

Dense add_dense(ad::ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    Dense d;
    d.weight = store.add(name + ".w", std::move(w));
    d.bias = store.add(name + ".b", Matrix::Zero(1, out));
    d.in = in;
    d.out = out;
    return d;
}

ad::NodeId apply(ad::Graph& g, ad::ParameterStore& store, const Dense& layer, ad::NodeId x) {
    auto w = g.parameter(store, layer.weight);
    auto b = g.parameter(store, layer.bias);
    return g.add(g.matmul(x, w), b);
}

ad::NodeId apply_frozen(ad::Graph& g, const ad::ParameterStore& store, const Dense& layer, ad::NodeId x) {
    auto w = g.constant(store.value(layer.weight));
    auto b = g.constant(store.value(layer.bias));
    return g.add(g.matmul(x, w), b);
}

Matrix apply_plain(const ad::ParameterStore& store, const Dense& layer, const Matrix& x) {
    Matrix y = x * store.value(layer.weight);
    y.rowwise() += store.value(layer.bias).row(0);
    return y;
}

Dense find_dense(const ad::ParameterStore& store, const std::string& name) {
    auto w = store.find(name + ".w");
    auto b = store.find(name + ".b");
    if (!w || !b) throw FormatError("missing layer parameters: " + name);
    Dense d;
    d.weight = *w;
    d.bias = *b;
    d.in = static_cast<int>(store.value(*w).rows());
    d.out = static_cast<int>(store.value(*w).cols());
    return d;
}

}  // namespace mcs
