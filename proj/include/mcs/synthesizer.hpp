#pragma once

#include "mcs/causal_generator.hpp"
#include "mcs/classifiers.hpp"
#include "mcs/generator.hpp"
#include "mcs/queries.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mcs {

enum class GeneratorLoss { Saturating, NonSaturating };

struct TrainConfig {
    int latent = 128;
    int hidden = 256;
    int module_hidden = 64;  // per-attribute module width of the modular generator
    int batch = 500;
    int epochs = 300;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lambda_ce = 1.0;
    double lambda_dist = 1.0;
    double tau = 0.5;
    bool counterfactual = true;  // false: observational training, adversarial loss only
    std::string desired;         // preferred class label y'
    GeneratorLoss generator_loss = GeneratorLoss::Saturating;

    std::string to_text() const;
    static TrainConfig parse(std::string_view text);
};

struct EpochLog {
    int epoch = 0;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double cf_loss = 0.0;
};

struct TrainedSynthesizer {
    DataSchema schema;
    TrainConfig config;
    std::shared_ptr<GeneratorNet> generator;
    Discriminator discriminator;
    std::optional<Classifier> classifier;  // the deployed f
    std::optional<Classifier> surrogate;   // differentiable stand-in when f is a forest
    std::string source;
    std::string plan;
    std::vector<EpochLog> log;

    int desired_class() const;
    /// Model used inside the cross-entropy term.
    const Classifier& gradient_model() const;

    std::string serialize() const;
    static TrainedSynthesizer parse(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static TrainedSynthesizer load(const std::filesystem::path& path);
};

struct CounterfactualTerms {
    ad::NodeId total;
    ad::NodeId ce;
    ad::NodeId distance;
};

/// lambda_ce * sum_i w_i CE(f(x_i), y') + lambda_dist * sum_i w_i |m_i . (x_i - q_i)|^2.
CounterfactualTerms counterfactual_loss(ad::Graph& g, ad::NodeId generated, const Matrix& queries, const Matrix& masks,
                                        const Vector& weights, int desired, const Classifier& f,
                                        const DataSchema& schema, double lambda_ce, double lambda_dist);

struct TrainInputs {
    const Classifier* classifier = nullptr;
    const Classifier* surrogate = nullptr;
    const CausalGraph* graph = nullptr;  // non-empty: modular generator
    std::function<void(const EpochLog&)> on_epoch;
};

/// Alternating one D step and one G step per batch with adaptive-moment
/// optimizers; batches per epoch = ceil(rows / batch).
TrainedSynthesizer train(const DataSchema& schema, const Matrix& encoded, const QuerySource& source,
                         const TrainConfig& config, const TrainInputs& inputs, std::uint64_t seed);

struct CounterfactualSet {
    EncodedQuery query;
    Matrix encoded;            // hardened samples, re-encoded from their decoded rows
    std::vector<Record> rows;
    std::vector<bool> valid;   // against the deployed f; empty without one
    std::vector<double> distance;
    Matrix proba;              // f class probabilities; empty without f
};

CounterfactualSet generate(const TrainedSynthesizer& synth, const Query& query, int n, std::uint64_t seed);
CounterfactualSet generate(const TrainedSynthesizer& synth, const EncodedQuery& query, int n, std::uint64_t seed);
/// Zero query, no validity flags.
CounterfactualSet generate_unconditional(const TrainedSynthesizer& synth, int n, std::uint64_t seed);

Table training_log_table(const std::vector<EpochLog>& log);

}  // namespace mcs
