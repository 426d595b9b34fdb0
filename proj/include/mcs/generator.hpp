#pragma once

#include "mcs/autodiff.hpp"
#include "mcs/container.hpp"
#include "mcs/encoding.hpp"
#include "mcs/nets.hpp"

#include <functional>
#include <memory>
#include <string>

namespace mcs {

/// Output head of one attribute: Gumbel-softmax over the mode block and a
/// tanh scalar for continuous attributes, Gumbel-softmax for categoricals.
/// `noise` holds the uniform draws for the attribute's block columns.
ad::NodeId attribute_head(ad::Graph& g, ad::NodeId logits, const AttributeSpec& spec, double tau, const Matrix& noise);

/// Heads for a full-width logit row in schema order.
ad::NodeId output_heads(ad::Graph& g, ad::NodeId logits, const DataSchema& schema, double tau, const Matrix& noise);

using LayerFn = std::function<ad::NodeId(ad::Graph&, const Dense&, ad::NodeId)>;

/// Conditional generator G(z | q) over an encoded layout.
class GeneratorNet {
public:
    virtual ~GeneratorNet() = default;

    virtual std::string kind() const = 0;
    virtual int latent_dim() const = 0;
    virtual std::unique_ptr<GeneratorNet> clone() const = 0;
    virtual void save(Container& out, const std::string& prefix) const = 0;

    const DataSchema& schema() const { return schema_; }
    double tau() const { return tau_; }
    ad::ParameterStore& params() { return params_; }
    const ad::ParameterStore& params() const { return params_; }

    /// Frozen forward; `noise` is uniform, schema width, one row per sample.
    ad::NodeId forward(ad::Graph& g, ad::NodeId z, ad::NodeId q, const Matrix& noise) const;
    /// Trainable forward; gradients accumulate into params().
    ad::NodeId forward_train(ad::Graph& g, ad::NodeId z, ad::NodeId q, const Matrix& noise);
    /// Plain evaluation.
    Matrix sample(const Matrix& z, const Matrix& q, const Matrix& noise) const;

protected:
    virtual ad::NodeId build(ad::Graph& g, const LayerFn& layer, ad::NodeId z, ad::NodeId q,
                             const Matrix& noise) const = 0;

    DataSchema schema_;
    double tau_ = 0.5;
    ad::ParameterStore params_;
};

/// concat(z, q) -> [hidden, relu] x 2 -> schema-width logits -> heads.
class FlatGenerator final : public GeneratorNet {
public:
    FlatGenerator(DataSchema schema, int latent, int hidden, double tau, Rng& rng);

    std::string kind() const override { return "flat"; }
    int latent_dim() const override { return latent_; }
    std::unique_ptr<GeneratorNet> clone() const override { return std::make_unique<FlatGenerator>(*this); }
    void save(Container& out, const std::string& prefix) const override;
    static std::unique_ptr<FlatGenerator> load(const Container& in, const std::string& prefix, DataSchema schema);

protected:
    ad::NodeId build(ad::Graph& g, const LayerFn& layer, ad::NodeId z, ad::NodeId q,
                     const Matrix& noise) const override;

private:
    FlatGenerator() = default;

    int latent_ = 0;
    Dense l1_, l2_, l3_;
};

/// D(x | q): concat(x, q) -> [hidden, leaky relu 0.2] x 2 -> logit.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int width, int hidden, Rng& rng);

    ad::NodeId logit(ad::Graph& g, ad::NodeId x, ad::NodeId q) const;
    ad::NodeId logit_train(ad::Graph& g, ad::NodeId x, ad::NodeId q);

    ad::ParameterStore& params() { return params_; }
    const ad::ParameterStore& params() const { return params_; }

    void save(Container& out, const std::string& prefix) const;
    static Discriminator load(const Container& in, const std::string& prefix);

private:
    ad::NodeId build(ad::Graph& g, const LayerFn& layer, ad::NodeId x, ad::NodeId q) const;

    ad::ParameterStore params_;
    Dense l1_, l2_, l3_;
};

/// Registers a store's parameters under `prefix`, creating zero-filled
/// entries with the stored shapes (used by loaders).
void load_parameters_into(const Container& in, ad::ParameterStore& store, const std::string& prefix);

}  // namespace mcs
