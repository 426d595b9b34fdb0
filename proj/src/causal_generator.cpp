#include "mcs/causal_generator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace mcs {

void CausalGraph::add_vertex(const std::string& name) {
    if (std::find(vertices.begin(), vertices.end(), name) == vertices.end()) vertices.push_back(name);
}

void CausalGraph::add_edge(const std::string& cause, const std::string& effect) {
    if (cause == effect) throw UserError("self loop on '" + cause + "'");
    add_vertex(cause);
    add_vertex(effect);
    const auto e = std::make_pair(cause, effect);
    if (std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(e);
}

std::vector<std::string> CausalGraph::parents(std::string_view name) const {
    std::vector<std::string> out;
    for (const auto& [a, b] : edges)
        if (b == name) out.push_back(a);
    return out;
}

std::vector<std::string> CausalGraph::children(std::string_view name) const {
    std::vector<std::string> out;
    for (const auto& [a, b] : edges)
        if (a == name) out.push_back(b);
    return out;
}

std::vector<std::string> CausalGraph::descendants(std::string_view name) const {
    std::set<std::string> seen;
    std::vector<std::string> stack{std::string(name)};
    while (!stack.empty()) {
        auto v = stack.back();
        stack.pop_back();
        for (const auto& c : children(v))
            if (seen.insert(c).second) stack.push_back(c);
    }
    return {seen.begin(), seen.end()};
}

std::string CausalGraph::to_text() const {
    std::string out;
    for (const auto& [a, b] : edges) out += a + " -> " + b + "\n";
    return out;
}

CausalGraph CausalGraph::parse(std::string_view text) {
    CausalGraph g;
    std::istringstream in{std::string(text)};
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto t = trim(line);
        if (t.empty()) continue;
        const auto arrow = t.find("->");
        if (arrow == std::string::npos)
            throw UserError("graph line " + std::to_string(no) + ": expected 'cause -> effect'");
        const auto a = trim(std::string_view(t).substr(0, arrow));
        const auto b = trim(std::string_view(t).substr(arrow + 2));
        if (a.empty() || b.empty()) throw UserError("graph line " + std::to_string(no) + ": empty attribute name");
        g.add_edge(a, b);
    }
    return g;
}

CausalGraph CausalGraph::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw UserError("graph file not found: " + path.string());
    return parse(read_file(path));
}

std::vector<std::string> validate_dag(const CausalGraph& graph) {
    if (graph.vertices.empty()) throw UserError("causal graph has no vertices");
    std::map<std::string, int> indegree;
    for (const auto& v : graph.vertices) indegree[v] = 0;
    for (const auto& [a, b] : graph.edges) ++indegree[b];
    std::set<std::string> ready;
    for (const auto& [v, d] : indegree)
        if (d == 0) ready.insert(v);
    std::vector<std::string> order;
    while (!ready.empty()) {
        const auto v = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(v);
        for (const auto& c : graph.children(v))
            if (--indegree[c] == 0) ready.insert(c);
    }
    if (order.size() == graph.vertices.size()) return order;

    // Walk parents inside the unresolved set until a vertex repeats.
    std::string v;
    for (const auto& [name, d] : indegree)
        if (d > 0) {
            v = name;
            break;
        }
    std::vector<std::string> path;
    std::map<std::string, std::size_t> at;
    while (!at.count(v)) {
        at[v] = path.size();
        path.push_back(v);
        for (const auto& p : graph.parents(v))
            if (indegree[p] > 0) {
                v = p;
                break;
            }
    }
    std::vector<std::string> cycle(path.begin() + static_cast<std::ptrdiff_t>(at[v]), path.end());
    std::reverse(cycle.begin(), cycle.end());
    std::string msg = "causal graph has a cycle: ";
    for (const auto& c : cycle) msg += c + " -> ";
    throw UserError(msg + cycle.front());
}

int ModularGenerator::noise_dim(int latent, int attributes) {
    return std::max(8, static_cast<int>(std::lround(static_cast<double>(latent) / std::max(attributes, 1))));
}

ModularGenerator::ModularGenerator(DataSchema schema, CausalGraph graph, int latent, int hidden, double tau, Rng& rng)
    : graph_(std::move(graph)) {
    if (latent < 1 || hidden < 1 || !(tau > 0)) throw UserError("generator sizes and temperature must be positive");
    schema_ = std::move(schema);
    tau_ = tau;
    wire(latent);
    for (int a = 0; a < schema_.size(); ++a) {
        const auto& name = schema_.attribute(a).name;
        hidden_[a] = add_dense(params_, "m." + name + ".l1", module_input_width(a), hidden, rng);
        out_[a] = add_dense(params_, "m." + name + ".l2", hidden, schema_.attribute(a).width(), rng);
    }
}

void ModularGenerator::wire(int latent_request) {
    for (const auto& v : graph_.vertices)
        if (!schema_.contains(v)) throw UserError("causal graph names unknown attribute '" + v + "'");
    CausalGraph full = graph_;
    for (const auto& a : schema_.attributes()) full.add_vertex(a.name);
    order_.clear();
    for (const auto& name : validate_dag(full)) order_.push_back(schema_.index_of(name));

    const int s = schema_.size();
    parents_.assign(s, {});
    for (int a = 0; a < s; ++a) {
        for (const auto& p : graph_.parents(schema_.attribute(a).name)) parents_[a].push_back(schema_.index_of(p));
        std::sort(parents_[a].begin(), parents_[a].end());
    }
    const int per = noise_dim(latent_request, s);
    noise_.assign(s, {});
    for (int a = 0; a < s; ++a) noise_[a] = Block{a * per, per};
    latent_ = per * s;
    hidden_.assign(s, {});
    out_.assign(s, {});
}

int ModularGenerator::module_input_width(int attribute) const {
    int w = noise_.at(attribute).width + schema_.width();
    for (int p : parents_.at(attribute)) w += schema_.attribute(p).width();
    return w;
}

ad::NodeId ModularGenerator::build(ad::Graph& g, const LayerFn& layer, ad::NodeId z, ad::NodeId q,
                                   const Matrix& noise) const {
    if (g.value(z).cols() != latent_)
        throw ShapeError("modular generator: noise partition expects " + std::to_string(latent_) + " columns, got " +
                         std::to_string(g.value(z).cols()));
    if (g.value(q).cols() != schema_.width()) throw ShapeError("modular generator: query width mismatch");
    std::vector<ad::NodeId> produced(schema_.size());
    for (int a : order_) {
        std::vector<ad::NodeId> in;
        for (int p : parents_[a]) in.push_back(produced[p]);
        in.push_back(g.slice_cols(z, noise_[a].offset, noise_[a].width));
        in.push_back(q);
        auto h = g.relu(layer(g, hidden_[a], g.concat(in)));
        const Block b = schema_.block(a);
        produced[a] = attribute_head(g, layer(g, out_[a], h), schema_.attribute(a), tau_, noise.middleCols(b.offset, b.width));
    }
    return g.concat(produced);
}

void ModularGenerator::save(Container& out, const std::string& prefix) const {
    Matrix meta(1, 2);
    meta << latent_, tau_;
    out.put(prefix + "/meta", meta);
    out.put_text(prefix + "/graph", graph_.to_text());
    put_parameters(out, params_, prefix + "/params");
}

std::unique_ptr<ModularGenerator> ModularGenerator::load(const Container& in, const std::string& prefix,
                                                         DataSchema schema) {
    std::unique_ptr<ModularGenerator> g(new ModularGenerator());
    const Matrix& meta = in.matrix(prefix + "/meta");
    g->schema_ = std::move(schema);
    g->tau_ = meta(0, 1);
    g->graph_ = CausalGraph::parse(in.text(prefix + "/graph"));
    const int s = g->schema_.size();
    g->wire(static_cast<int>(meta(0, 0)));
    if (g->latent_ != static_cast<int>(meta(0, 0))) throw FormatError("modular generator noise partition mismatch");
    load_parameters_into(in, g->params_, prefix + "/params");
    for (int a = 0; a < s; ++a) {
        const auto& name = g->schema_.attribute(a).name;
        g->hidden_[a] = find_dense(g->params_, "m." + name + ".l1");
        g->out_[a] = find_dense(g->params_, "m." + name + ".l2");
        if (g->hidden_[a].in != g->module_input_width(a)) throw FormatError("module input width mismatch for " + name);
    }
    return g;
}

Matrix modular_forward(const ModularGenerator& gen, const Matrix& z, const Matrix& query, const Matrix& gumbel) {
    return gen.sample(z, query, gumbel);
}

Matrix resample_noise(const ModularGenerator& gen, const Matrix& z, std::string_view attribute, std::uint64_t seed) {
    const int a = gen.schema().index_of(attribute);
    if (z.cols() != gen.latent_dim()) throw ShapeError("resample_noise: noise width does not match generator");
    Matrix out = z;
    const Block b = gen.noise_block(a);
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (int c = 0; c < b.width; ++c) out(r, b.offset + c) = n(rng);
    return out;
}

}  // namespace mcs
