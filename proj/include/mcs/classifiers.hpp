#pragma once

#include "mcs/autodiff.hpp"
#include "mcs/container.hpp"
#include "mcs/encoding.hpp"
#include "mcs/nets.hpp"

#include <span>
#include <string>
#include <vector>

namespace mcs {

/// Encoded features and class indices split off a full encoding.
struct LabeledData {
    DataSchema schema;  // layout of x, label excluded
    Matrix x;
    std::vector<int> y;  // index into `classes`
    std::vector<std::string> classes;
};

/// Separates the categorical label block from a full-schema encoding.
LabeledData split_label(const DataSchema& full, const Matrix& encoded);
LabeledData subset(const LabeledData& data, std::span<const int> rows);

/// Seed-deterministic shuffled split; the first part holds round(n * fraction) rows.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double fraction, std::uint64_t seed);

/// Differentiable map from an encoded layout to classifier inputs: a
/// continuous attribute becomes its raw value mu_k + 4 sigma_k s (k the mode
/// one-hot, so relaxed modes blend), a categorical attribute passes its
/// one-hot through; every column is then standardized.
class FeatureView {
public:
    FeatureView() = default;
    FeatureView(DataSchema features, const Matrix& encoded_train);

    const DataSchema& schema() const { return features_; }
    int width() const { return static_cast<int>(mean_.size()); }
    const RowVector& mean() const { return mean_; }
    const RowVector& scale() const { return scale_; }

    /// `source` may be any layout containing every feature attribute with the same spec.
    Matrix apply(const Matrix& encoded, const DataSchema& source) const;
    ad::NodeId apply(ad::Graph& g, ad::NodeId encoded, const DataSchema& source) const;

    void save(Container& out, const std::string& prefix) const;
    static FeatureView load(const Container& in, const std::string& prefix);

private:
    Matrix raw(const Matrix& encoded, const DataSchema& source) const;

    DataSchema features_;
    RowVector mean_;
    RowVector scale_;
};

enum class ClassifierKind { Mlp, Forest, Surrogate };

const char* kind_name(ClassifierKind kind);
ClassifierKind parse_kind(std::string_view name);

struct MlpConfig {
    int hidden = 100;
    double l2 = 1.0;  // penalty 0.5 * l2 * |W|^2 / batch rows
    int max_iterations = 1000;
    int batch = 200;
    double learning_rate = 1e-3;
    double tolerance = 1e-4;
    int patience = 10;
};

struct ForestConfig {
    int trees = 10;
    int max_depth = 5;
    int min_samples_split = 2;
};

/// Flat node table of one tree. Leaves have feature == -1.
struct Tree {
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<double> positive;  // leaf probability of class 1

    int depth() const;
    double predict(const double* row) const;
};

struct SurrogateReport {
    double agreement = 0.0;  // held-out argmax agreement with the teacher
    double final_loss = 0.0;
};

class Classifier {
public:
    ClassifierKind kind() const { return kind_; }
    const FeatureView& view() const { return view_; }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<Tree>& trees() const { return trees_; }
    double final_loss() const { return final_loss_; }
    int iterations() const { return iterations_; }
    bool differentiable() const { return kind_ != ClassifierKind::Forest; }
    int class_index(std::string_view label) const;  // throws UserError

    /// Rows of class probabilities for an encoded batch in layout `source`.
    Matrix predict_proba(const Matrix& encoded, const DataSchema& source) const;
    std::vector<int> predict(const Matrix& encoded, const DataSchema& source) const;

    /// Differentiable probabilities with frozen weights; forests throw.
    ad::NodeId proba(ad::Graph& g, ad::NodeId encoded, const DataSchema& source) const;

    void save(Container& out, const std::string& prefix) const;
    static Classifier load(const Container& in, const std::string& prefix);

    friend Classifier train_mlp(const LabeledData&, const MlpConfig&, std::uint64_t);
    friend Classifier train_random_forest(const LabeledData&, const ForestConfig&, std::uint64_t);
    friend Classifier distill_surrogate(const Classifier&, const DataSchema&, const Matrix&, const MlpConfig&,
                                        std::uint64_t, SurrogateReport*);
    friend Classifier make_forest(FeatureView, std::vector<std::string>, std::vector<Tree>);

private:
    Matrix mlp_forward(const Matrix& features) const;

    ClassifierKind kind_ = ClassifierKind::Mlp;
    FeatureView view_;
    std::vector<std::string> classes_;
    ad::ParameterStore params_;
    Dense hidden_;
    Dense output_;
    std::vector<Tree> trees_;
    double final_loss_ = 0.0;
    int iterations_ = 0;
};

/// One-hidden-layer relu network with softmax output, adaptive-moment
/// minibatch training and loss-plateau early stopping.
Classifier train_mlp(const LabeledData& data, const MlpConfig& config, std::uint64_t seed);

/// Bootstrap forest of Gini trees with sqrt(d) feature subsampling per split.
Classifier train_random_forest(const LabeledData& data, const ForestConfig& config, std::uint64_t seed);

/// Forest from explicit trees (tests, persistence).
Classifier make_forest(FeatureView view, std::vector<std::string> classes, std::vector<Tree> trees);

/// Fits an MLP to the teacher's probabilities on `reference` (layout
/// `source`) by soft-label cross entropy. 20% of the rows are held out to
/// measure agreement; agreement below 0.85 is reported, not fatal.
Classifier distill_surrogate(const Classifier& teacher, const DataSchema& source, const Matrix& reference,
                             const MlpConfig& config, std::uint64_t seed, SurrogateReport* report = nullptr);

/// F1 of the `positive` class; 0 when there are no true positives.
double f_score(std::span<const int> predicted, std::span<const int> actual, int positive);

}  // namespace mcs
