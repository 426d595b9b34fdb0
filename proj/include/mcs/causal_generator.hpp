#pragma once

#include "mcs/generator.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mcs {

/// Directed graph over attribute names, edges cause -> effect.
struct CausalGraph {
    std::vector<std::string> vertices;
    std::vector<std::pair<std::string, std::string>> edges;

    void add_edge(const std::string& cause, const std::string& effect);
    void add_vertex(const std::string& name);
    bool empty() const { return edges.empty(); }
    std::vector<std::string> parents(std::string_view name) const;
    std::vector<std::string> children(std::string_view name) const;
    std::vector<std::string> descendants(std::string_view name) const;

    /// One "cause -> effect" per line.
    std::string to_text() const;
    /// Parses the edge-list format; blank lines and '#' comments are skipped.
    static CausalGraph parse(std::string_view text);
    static CausalGraph load(const std::filesystem::path& path);
};

/// Kahn ordering with ties broken alphabetically; a cycle raises UserError
/// naming one cycle.
std::vector<std::string> validate_dag(const CausalGraph& graph);

/// One two-layer module per attribute, F_s(parents, z_s, q) -> block of s,
/// evaluated in topological order. Attributes absent from the graph are
/// isolated vertices.
class ModularGenerator final : public GeneratorNet {
public:
    ModularGenerator(DataSchema schema, CausalGraph graph, int latent, int hidden, double tau, Rng& rng);

    std::string kind() const override { return "modular"; }
    int latent_dim() const override { return latent_; }
    std::unique_ptr<GeneratorNet> clone() const override { return std::make_unique<ModularGenerator>(*this); }
    void save(Container& out, const std::string& prefix) const override;
    static std::unique_ptr<ModularGenerator> load(const Container& in, const std::string& prefix, DataSchema schema);

    const CausalGraph& graph() const { return graph_; }
    /// Schema attribute indices in evaluation order.
    const std::vector<int>& order() const { return order_; }
    const std::vector<int>& parents(int attribute) const { return parents_.at(attribute); }
    /// Columns of z feeding attribute `attribute`.
    Block noise_block(int attribute) const { return noise_.at(attribute); }
    /// Input width of one module: parent widths + noise dim + query width.
    int module_input_width(int attribute) const;

    /// Per-attribute noise dim: max(8, round(latent / S)).
    static int noise_dim(int latent, int attributes);

protected:
    ad::NodeId build(ad::Graph& g, const LayerFn& layer, ad::NodeId z, ad::NodeId q,
                     const Matrix& noise) const override;

private:
    ModularGenerator() = default;
    void wire(int latent_request);

    CausalGraph graph_;
    int latent_ = 0;
    std::vector<int> order_;
    std::vector<std::vector<int>> parents_;
    std::vector<Block> noise_;
    std::vector<Dense> hidden_;
    std::vector<Dense> out_;
};

/// Deterministic forward from explicit latent noise, query and Gumbel noise.
Matrix modular_forward(const ModularGenerator& gen, const Matrix& z, const Matrix& query, const Matrix& gumbel);

/// Copy of `z` with only the partition of `attribute` redrawn from N(0, 1).
Matrix resample_noise(const ModularGenerator& gen, const Matrix& z, std::string_view attribute, std::uint64_t seed);

}  // namespace mcs
