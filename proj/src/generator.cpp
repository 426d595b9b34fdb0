#include "mcs/generator.hpp"

#include <array>

namespace mcs {

ad::NodeId attribute_head(ad::Graph& g, ad::NodeId logits, const AttributeSpec& spec, double tau, const Matrix& noise) {
    if (spec.kind == AttributeKind::Categorical) return g.gumbel_softmax(logits, tau, noise);
    const int k = spec.gmm.modes();
    auto modes = g.gumbel_softmax(g.slice_cols(logits, 0, k), tau, noise.leftCols(k));
    auto scalar = g.tanh(g.slice_cols(logits, k, 1));
    std::array<ad::NodeId, 2> parts{modes, scalar};
    return g.concat(parts);
}

ad::NodeId output_heads(ad::Graph& g, ad::NodeId logits, const DataSchema& schema, double tau, const Matrix& noise) {
    std::vector<ad::NodeId> parts;
    for (int a = 0; a < schema.size(); ++a) {
        const Block b = schema.block(a);
        parts.push_back(attribute_head(g, g.slice_cols(logits, b.offset, b.width), schema.attribute(a), tau,
                                       noise.middleCols(b.offset, b.width)));
    }
    return g.concat(parts);
}

ad::NodeId GeneratorNet::forward(ad::Graph& g, ad::NodeId z, ad::NodeId q, const Matrix& noise) const {
    LayerFn layer = [this](ad::Graph& gr, const Dense& d, ad::NodeId x) { return apply_frozen(gr, params_, d, x); };
    return build(g, layer, z, q, noise);
}

ad::NodeId GeneratorNet::forward_train(ad::Graph& g, ad::NodeId z, ad::NodeId q, const Matrix& noise) {
    LayerFn layer = [this](ad::Graph& gr, const Dense& d, ad::NodeId x) { return apply(gr, params_, d, x); };
    return build(g, layer, z, q, noise);
}

Matrix GeneratorNet::sample(const Matrix& z, const Matrix& q, const Matrix& noise) const {
    ad::Graph g;
    auto zn = g.input("z", z);
    auto qn = g.input("q", q);
    return g.value(forward(g, zn, qn, noise));
}

FlatGenerator::FlatGenerator(DataSchema schema, int latent, int hidden, double tau, Rng& rng) : latent_(latent) {
    if (latent < 1 || hidden < 1 || !(tau > 0)) throw UserError("generator sizes and temperature must be positive");
    schema_ = std::move(schema);
    tau_ = tau;
    const int w = schema_.width();
    l1_ = add_dense(params_, "g.l1", latent + w, hidden, rng);
    l2_ = add_dense(params_, "g.l2", hidden, hidden, rng);
    l3_ = add_dense(params_, "g.l3", hidden, w, rng);
}

ad::NodeId FlatGenerator::build(ad::Graph& g, const LayerFn& layer, ad::NodeId z, ad::NodeId q,
                                const Matrix& noise) const {
    if (g.value(z).cols() != latent_) throw ShapeError("generator: latent width mismatch");
    if (g.value(q).cols() != schema_.width()) throw ShapeError("generator: query width mismatch");
    std::array<ad::NodeId, 2> in{z, q};
    auto h = g.relu(layer(g, l1_, g.concat(in)));
    h = g.relu(layer(g, l2_, h));
    return output_heads(g, layer(g, l3_, h), schema_, tau_, noise);
}

void FlatGenerator::save(Container& out, const std::string& prefix) const {
    Matrix meta(1, 2);
    meta << latent_, tau_;
    out.put(prefix + "/meta", meta);
    put_parameters(out, params_, prefix + "/params");
}

std::unique_ptr<FlatGenerator> FlatGenerator::load(const Container& in, const std::string& prefix, DataSchema schema) {
    std::unique_ptr<FlatGenerator> g(new FlatGenerator());
    const Matrix& meta = in.matrix(prefix + "/meta");
    g->latent_ = static_cast<int>(meta(0, 0));
    g->tau_ = meta(0, 1);
    g->schema_ = std::move(schema);
    load_parameters_into(in, g->params_, prefix + "/params");
    g->l1_ = find_dense(g->params_, "g.l1");
    g->l2_ = find_dense(g->params_, "g.l2");
    g->l3_ = find_dense(g->params_, "g.l3");
    if (g->l3_.out != g->schema_.width()) throw FormatError("generator output width does not match schema");
    return g;
}

Discriminator::Discriminator(int width, int hidden, Rng& rng) {
    l1_ = add_dense(params_, "d.l1", 2 * width, hidden, rng);
    l2_ = add_dense(params_, "d.l2", hidden, hidden, rng);
    l3_ = add_dense(params_, "d.l3", hidden, 1, rng);
}

ad::NodeId Discriminator::build(ad::Graph& g, const LayerFn& layer, ad::NodeId x, ad::NodeId q) const {
    std::array<ad::NodeId, 2> in{x, q};
    auto h = g.leaky_relu(layer(g, l1_, g.concat(in)), 0.2);
    h = g.leaky_relu(layer(g, l2_, h), 0.2);
    return layer(g, l3_, h);
}

ad::NodeId Discriminator::logit(ad::Graph& g, ad::NodeId x, ad::NodeId q) const {
    LayerFn layer = [this](ad::Graph& gr, const Dense& d, ad::NodeId v) { return apply_frozen(gr, params_, d, v); };
    return build(g, layer, x, q);
}

ad::NodeId Discriminator::logit_train(ad::Graph& g, ad::NodeId x, ad::NodeId q) {
    LayerFn layer = [this](ad::Graph& gr, const Dense& d, ad::NodeId v) { return apply(gr, params_, d, v); };
    return build(g, layer, x, q);
}

void Discriminator::save(Container& out, const std::string& prefix) const { put_parameters(out, params_, prefix); }

Discriminator Discriminator::load(const Container& in, const std::string& prefix) {
    Discriminator d;
    load_parameters_into(in, d.params_, prefix);
    d.l1_ = find_dense(d.params_, "d.l1");
    d.l2_ = find_dense(d.params_, "d.l2");
    d.l3_ = find_dense(d.params_, "d.l3");
    return d;
}

void load_parameters_into(const Container& in, ad::ParameterStore& store, const std::string& prefix) {
    const std::string head = prefix + "/";
    for (const auto& name : in.names())
        if (name.rfind(head, 0) == 0 && name.find('/', head.size()) == std::string::npos)
            store.add(name.substr(head.size()), in.matrix(name));
}

}  // namespace mcs
