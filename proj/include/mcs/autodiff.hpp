#pragma once

#include "mcs/core.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mcs::ad {

struct NodeId {
    int index = -1;
    bool valid() const { return index >= 0; }
};

struct ParamId {
    int index = -1;
    bool valid() const { return index >= 0; }
};

/// Named trainable tensors with gradient buffers of identical shape.
class ParameterStore {
public:
    ParamId add(std::string name, Matrix init);

    const Matrix& value(ParamId id) const { return entries_.at(id.index).value; }
    Matrix& value(ParamId id) { return entries_.at(id.index).value; }
    const Matrix& grad(ParamId id) const { return entries_.at(id.index).grad; }
    Matrix& grad(ParamId id) { return entries_.at(id.index).grad; }
    const std::string& name(ParamId id) const { return entries_.at(id.index).name; }

    std::optional<ParamId> find(std::string_view name) const;
    int size() const { return static_cast<int>(entries_.size()); }
    std::int64_t scalar_count() const;
    void zero_grad();

private:
    struct Entry {
        std::string name;
        Matrix value;
        Matrix grad;
    };
    std::vector<Entry> entries_;
};

enum class Op {
    Input,
    Constant,
    Parameter,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Concat,
    SliceCols,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Softmax,
    GumbelSoftmax,
    Log,
    LogSigmoid,
    CrossEntropy,
    SquaredDistance,
    Mean,
    Sum,
    WeightedSum,
};

const char* op_name(Op op);

/// Define-by-run reverse-mode graph over 2-D row-major tensors (rows = batch).
///
/// Every builder evaluates its node eagerly, so the graph is also the forward
/// pass. `backward` accumulates into the parameter stores that own the
/// parameter nodes. A graph is single-threaded mutable state; build one per
/// forward pass.
class Graph {
public:
    NodeId input(std::string name, Matrix value);
    NodeId constant(Matrix value);
    NodeId parameter(ParameterStore& store, ParamId id);

    NodeId matmul(NodeId a, NodeId b);
    /// Elementwise; `b` may also be a 1xC row broadcast over the rows of `a`.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    /// Elementwise; `b` may be a 1xC row or an Rx1 column broadcast over `a`.
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId concat(std::span<const NodeId> parts);
    NodeId slice_cols(NodeId a, int begin, int width);

    NodeId relu(NodeId a);
    NodeId leaky_relu(NodeId a, double slope);
    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    NodeId log(NodeId a);
    NodeId log_sigmoid(NodeId a);

    /// Row-wise softmax over all columns.
    NodeId softmax(NodeId a);
    /// Row-wise softmax((logits + g) / tau), g = -log(-log(noise)).
    NodeId gumbel_softmax(NodeId logits, double tau, const Matrix& noise);

    /// Per-row cross entropy -sum_j t_ij log p_ij, clamped at 1e-12; Rx1.
    NodeId cross_entropy(NodeId probs, const Matrix& targets);
    /// Per-row sum_j m_j (a_ij - b_ij)^2 with an optional constant mask; Rx1.
    NodeId squared_distance(NodeId a, NodeId b, const Matrix* mask = nullptr);
    /// Scalar mean of every entry.
    NodeId mean(NodeId a);
    /// Scalar sum of every entry.
    NodeId sum(NodeId a);
    /// Scalar sum_i w_i a_i for an Rx1 node and constant weights.
    NodeId weighted_sum(NodeId a, const Vector& weights);

    const Matrix& value(NodeId id) const { return nodes_.at(id.index).value; }
    const Matrix& grad(NodeId id) const { return nodes_.at(id.index).grad; }
    Op op(NodeId id) const { return nodes_.at(id.index).op; }
    std::optional<NodeId> find_input(std::string_view name) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Backpropagates from a 1x1 loss; parameter gradients are accumulated.
    void backward(NodeId loss);

private:
    struct Node {
        Op op;
        std::vector<int> inputs;
        Matrix value;
        Matrix grad;
        Matrix aux;
        double scalar = 0.0;
        int begin = 0;
        std::string name;
        ParameterStore* store = nullptr;
        ParamId param;
    };

    static Node make_node(Op op, std::vector<int> inputs, Matrix value);
    NodeId push(Node node);
    const Node& at(NodeId id, Op op, int slot) const;
    [[noreturn]] void shape_fail(Op op, std::string_view detail) const;

    std::vector<Node> nodes_;
};

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment optimizer state bound to one parameter store.
class Adam {
public:
    Adam(ParameterStore& store, AdamConfig config = {});

    /// Applies one update and clears gradients. Throws NumericalError on a
    /// non-finite gradient, naming the parameter.
    void step();

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const Matrix& first_moment(ParamId id) const { return first_.at(id.index); }
    const Matrix& second_moment(ParamId id) const { return second_.at(id.index); }

private:
    ParameterStore* store_;
    AdamConfig config_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    std::int64_t step_ = 0;
};

/// Draws a uniform(0,1) noise matrix strictly inside the open interval.
Matrix uniform_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols);

/// Draws a standard normal matrix.
Matrix normal_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace mcs::ad
