#include "mcs/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace mcs::ad {

ParamId ParameterStore::add(std::string name, Matrix init) {
    if (find(name)) throw UserError("duplicate parameter name: " + name);
    Matrix grad = Matrix::Zero(init.rows(), init.cols());
    entries_.push_back({std::move(name), std::move(init), std::move(grad)});
    return ParamId{static_cast<int>(entries_.size()) - 1};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return ParamId{static_cast<int>(i)};
    return std::nullopt;
}

std::int64_t ParameterStore::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Parameter: return "parameter";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Concat: return "concat";
        case Op::SliceCols: return "slice_cols";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Softmax: return "softmax";
        case Op::GumbelSoftmax: return "gumbel_softmax";
        case Op::Log: return "log";
        case Op::LogSigmoid: return "log_sigmoid";
        case Op::CrossEntropy: return "cross_entropy";
        case Op::SquaredDistance: return "squared_distance";
        case Op::Mean: return "mean";
        case Op::Sum: return "sum";
        case Op::WeightedSum: return "weighted_sum";
    }
    return "unknown";
}

namespace {

std::string dims(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

// Backward of a row softmax: dL/dx = y * (g - <g, y>).
Matrix softmax_backward(const Matrix& y, const Matrix& g) {
    Vector dot = (y.array() * g.array()).rowwise().sum();
    Matrix out = g;
    out.colwise() -= dot;
    return (out.array() * y.array()).matrix();
}

enum class Broadcast { Same, Row, Col };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, bool allow_col) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    if (allow_col && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
    throw ShapeError("");
}

}  // namespace

Graph::Node Graph::make_node(Op op, std::vector<int> inputs, Matrix value) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    return n;
}

NodeId Graph::push(Node node) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    nodes_.push_back(std::move(node));
    return NodeId{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::at(NodeId id, Op op, int slot) const {
    if (id.index < 0 || id.index >= static_cast<int>(nodes_.size())) {
        std::ostringstream os;
        os << op_name(op) << " (node " << nodes_.size() << "): input " << slot << " is not a node of this graph";
        throw ShapeError(os.str());
    }
    return nodes_[id.index];
}

void Graph::shape_fail(Op op, std::string_view detail) const {
    std::ostringstream os;
    os << op_name(op) << " (node " << nodes_.size() << "): " << detail;
    throw ShapeError(os.str());
}

NodeId Graph::input(std::string name, Matrix value) {
    Node n = make_node(Op::Input, {}, std::move(value));
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Graph::constant(Matrix value) { return push(make_node(Op::Constant, {}, std::move(value))); }

NodeId Graph::parameter(ParameterStore& store, ParamId id) {
    Node n = make_node(Op::Parameter, {}, store.value(id));
    n.store = &store;
    n.param = id;
    n.name = store.name(id);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const auto& x = at(a, Op::MatMul, 0).value;
    const auto& y = at(b, Op::MatMul, 1).value;
    if (x.cols() != y.rows()) shape_fail(Op::MatMul, "inner dimensions differ: " + dims(x) + " * " + dims(y));
    Matrix v = x * y;
    return push(make_node(Op::MatMul, {a.index, b.index}, std::move(v)));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const auto& x = at(a, Op::Add, 0).value;
    const auto& y = at(b, Op::Add, 1).value;
    Matrix v = x;
    try {
        if (broadcast_kind(x, y, false) == Broadcast::Same)
            v += y;
        else
            v.rowwise() += y.row(0);
    } catch (const ShapeError&) {
        shape_fail(Op::Add, "cannot broadcast " + dims(y) + " onto " + dims(x));
    }
    return push(make_node(Op::Add, {a.index, b.index}, std::move(v)));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const auto& x = at(a, Op::Sub, 0).value;
    const auto& y = at(b, Op::Sub, 1).value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) shape_fail(Op::Sub, "shapes differ: " + dims(x) + " vs " + dims(y));
    Matrix v = x - y;
    return push(make_node(Op::Sub, {a.index, b.index}, std::move(v)));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const auto& x = at(a, Op::Mul, 0).value;
    const auto& y = at(b, Op::Mul, 1).value;
    Matrix v = x;
    try {
        switch (broadcast_kind(x, y, true)) {
            case Broadcast::Same: v.array() *= y.array(); break;
            case Broadcast::Row: v.array().rowwise() *= y.row(0).array(); break;
            case Broadcast::Col: v.array().colwise() *= y.col(0).array(); break;
        }
    } catch (const ShapeError&) {
        shape_fail(Op::Mul, "cannot broadcast " + dims(y) + " onto " + dims(x));
    }
    return push(make_node(Op::Mul, {a.index, b.index}, std::move(v)));
}

NodeId Graph::scale(NodeId a, double factor) {
    Matrix v = at(a, Op::Scale, 0).value * factor;
    Node n = make_node(Op::Scale, {a.index}, std::move(v));
    n.scalar = factor;
    return push(std::move(n));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
    if (parts.empty()) shape_fail(Op::Concat, "no inputs");
    const auto rows = at(parts[0], Op::Concat, 0).value.rows();
    Eigen::Index cols = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& p = at(parts[i], Op::Concat, static_cast<int>(i)).value;
        if (p.rows() != rows) shape_fail(Op::Concat, "row counts differ: " + dims(p) + " vs " + std::to_string(rows) + " rows");
        cols += p.cols();
    }
    Matrix v(rows, cols);
    std::vector<int> ins;
    Eigen::Index offset = 0;
    for (auto id : parts) {
        const auto& p = nodes_[id.index].value;
        v.middleCols(offset, p.cols()) = p;
        offset += p.cols();
        ins.push_back(id.index);
    }
    return push(make_node(Op::Concat, std::move(ins), std::move(v)));
}

NodeId Graph::slice_cols(NodeId a, int begin, int width) {
    const auto& x = at(a, Op::SliceCols, 0).value;
    if (begin < 0 || width < 0 || begin + width > x.cols())
        shape_fail(Op::SliceCols, "columns [" + std::to_string(begin) + ", " + std::to_string(begin + width) + ") outside " + dims(x));
    Node n = make_node(Op::SliceCols, {a.index}, x.middleCols(begin, width));
    n.begin = begin;
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Matrix v = at(a, Op::Relu, 0).value.cwiseMax(0.0);
    return push(make_node(Op::Relu, {a.index}, std::move(v)));
}

NodeId Graph::leaky_relu(NodeId a, double slope) {
    const auto& x = at(a, Op::LeakyRelu, 0).value;
    Matrix v = x.unaryExpr([slope](double t) { return t > 0 ? t : slope * t; });
    Node n = make_node(Op::LeakyRelu, {a.index}, std::move(v));
    n.scalar = slope;
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
    const auto& x = at(a, Op::Sigmoid, 0).value;
    Matrix v = x.unaryExpr([](double t) {
        return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    });
    return push(make_node(Op::Sigmoid, {a.index}, std::move(v)));
}

NodeId Graph::tanh(NodeId a) {
    Matrix v = at(a, Op::Tanh, 0).value.array().tanh().matrix();
    return push(make_node(Op::Tanh, {a.index}, std::move(v)));
}

NodeId Graph::log(NodeId a) {
    const auto& x = at(a, Op::Log, 0).value;
    if ((x.array() <= 0.0).any()) shape_fail(Op::Log, "non-positive argument");
    Matrix v = x.array().log().matrix();
    return push(make_node(Op::Log, {a.index}, std::move(v)));
}

NodeId Graph::log_sigmoid(NodeId a) {
    const auto& x = at(a, Op::LogSigmoid, 0).value;
    // log sigmoid(t) = min(t, 0) - log1p(exp(-|t|))
    Matrix v = x.unaryExpr([](double t) { return std::min(t, 0.0) - std::log1p(std::exp(-std::abs(t))); });
    return push(make_node(Op::LogSigmoid, {a.index}, std::move(v)));
}

NodeId Graph::softmax(NodeId a) {
    Matrix v = at(a, Op::Softmax, 0).value;
    softmax_rows(v);
    return push(make_node(Op::Softmax, {a.index}, std::move(v)));
}

NodeId Graph::gumbel_softmax(NodeId logits, double tau, const Matrix& noise) {
    const auto& x = at(logits, Op::GumbelSoftmax, 0).value;
    if (!(tau > 0.0)) shape_fail(Op::GumbelSoftmax, "temperature must be positive");
    if (noise.rows() != x.rows() || noise.cols() != x.cols())
        shape_fail(Op::GumbelSoftmax, "noise " + dims(noise) + " does not match logits " + dims(x));
    if ((noise.array() <= 0.0).any() || (noise.array() >= 1.0).any())
        shape_fail(Op::GumbelSoftmax, "noise must lie strictly inside (0, 1)");
    Matrix g = (-(-noise.array().log()).log()).matrix();
    Matrix v = (x + g) / tau;
    softmax_rows(v);
    Node n = make_node(Op::GumbelSoftmax, {logits.index}, std::move(v));
    n.scalar = tau;
    return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId probs, const Matrix& targets) {
    const auto& p = at(probs, Op::CrossEntropy, 0).value;
    if (p.rows() != targets.rows() || p.cols() != targets.cols())
        shape_fail(Op::CrossEntropy, "targets " + dims(targets) + " do not match probabilities " + dims(p));
    Matrix v = -(targets.array() * p.array().max(1e-12).log()).rowwise().sum().matrix();
    Node n = make_node(Op::CrossEntropy, {probs.index}, std::move(v));
    n.aux = targets;
    return push(std::move(n));
}

NodeId Graph::squared_distance(NodeId a, NodeId b, const Matrix* mask) {
    const auto& x = at(a, Op::SquaredDistance, 0).value;
    const auto& y = at(b, Op::SquaredDistance, 1).value;
    if (x.rows() != y.rows() || x.cols() != y.cols())
        shape_fail(Op::SquaredDistance, "shapes differ: " + dims(x) + " vs " + dims(y));
    Matrix m = Matrix::Ones(x.rows(), x.cols());
    if (mask) {
        if (mask->rows() == 1 && mask->cols() == x.cols())
            m.array().rowwise() *= mask->row(0).array();
        else if (mask->rows() == x.rows() && mask->cols() == x.cols())
            m = *mask;
        else
            shape_fail(Op::SquaredDistance, "mask " + dims(*mask) + " does not match " + dims(x));
    }
    Matrix v = ((x - y).array().square() * m.array()).rowwise().sum().matrix();
    Node n = make_node(Op::SquaredDistance, {a.index, b.index}, std::move(v));
    n.aux = std::move(m);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    const auto& x = at(a, Op::Mean, 0).value;
    if (x.size() == 0) shape_fail(Op::Mean, "empty input");
    Matrix v(1, 1);
    v(0, 0) = x.mean();
    return push(make_node(Op::Mean, {a.index}, std::move(v)));
}

NodeId Graph::sum(NodeId a) {
    Matrix v(1, 1);
    v(0, 0) = at(a, Op::Sum, 0).value.sum();
    return push(make_node(Op::Sum, {a.index}, std::move(v)));
}

NodeId Graph::weighted_sum(NodeId a, const Vector& weights) {
    const auto& x = at(a, Op::WeightedSum, 0).value;
    if (x.cols() != 1 || x.rows() != weights.size())
        shape_fail(Op::WeightedSum, "expected " + std::to_string(weights.size()) + "x1 input, got " + dims(x));
    Matrix v(1, 1);
    v(0, 0) = x.col(0).dot(weights);
    Node n = make_node(Op::WeightedSum, {a.index}, std::move(v));
    n.aux = weights;
    return push(std::move(n));
}

std::optional<NodeId> Graph::find_input(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].op == Op::Input && nodes_[i].name == name) return NodeId{static_cast<int>(i)};
    return std::nullopt;
}

void Graph::backward(NodeId loss) {
    if (loss.index < 0 || loss.index >= static_cast<int>(nodes_.size())) throw ShapeError("backward: loss is not a node of this graph");
    auto& root = nodes_[loss.index];
    if (root.value.rows() != 1 || root.value.cols() != 1)
        throw ShapeError(std::string("backward: loss node ") + std::to_string(loss.index) + " (" + op_name(root.op) +
                         ") is " + dims(root.value) + ", expected a scalar");
    for (auto& n : nodes_) n.grad.setZero();
    root.grad(0, 0) = 1.0;

    for (int i = loss.index; i >= 0; --i) {
        Node& n = nodes_[i];
        const Matrix& g = n.grad;
        auto in = [&](int k) -> Node& { return nodes_[n.inputs[k]]; };
        switch (n.op) {
            case Op::Input:
            case Op::Constant:
                break;
            case Op::Parameter:
                n.store->grad(n.param) += g;
                break;
            case Op::MatMul:
                in(0).grad.noalias() += g * in(1).value.transpose();
                in(1).grad.noalias() += in(0).value.transpose() * g;
                break;
            case Op::Add:
                in(0).grad += g;
                if (in(1).value.rows() == g.rows())
                    in(1).grad += g;
                else
                    in(1).grad += g.colwise().sum();
                break;
            case Op::Sub:
                in(0).grad += g;
                in(1).grad -= g;
                break;
            case Op::Mul: {
                const Matrix& x = in(0).value;
                const Matrix& y = in(1).value;
                if (y.rows() == x.rows() && y.cols() == x.cols()) {
                    in(0).grad.array() += g.array() * y.array();
                    in(1).grad.array() += g.array() * x.array();
                } else if (y.rows() == 1) {
                    in(0).grad.array() += g.array().rowwise() * y.row(0).array();
                    in(1).grad += (g.array() * x.array()).colwise().sum().matrix();
                } else {
                    in(0).grad.array() += g.array().colwise() * y.col(0).array();
                    in(1).grad += (g.array() * x.array()).rowwise().sum().matrix();
                }
                break;
            }
            case Op::Scale:
                in(0).grad += g * n.scalar;
                break;
            case Op::Concat: {
                Eigen::Index offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    auto& p = nodes_[n.inputs[k]];
                    p.grad += g.middleCols(offset, p.value.cols());
                    offset += p.value.cols();
                }
                break;
            }
            case Op::SliceCols:
                in(0).grad.middleCols(n.begin, g.cols()) += g;
                break;
            case Op::Relu:
                in(0).grad.array() += g.array() * (in(0).value.array() > 0.0).cast<double>();
                break;
            case Op::LeakyRelu: {
                const double s = n.scalar;
                in(0).grad.array() += g.array() * in(0).value.array().unaryExpr([s](double t) { return t > 0 ? 1.0 : s; });
                break;
            }
            case Op::Sigmoid:
                in(0).grad.array() += g.array() * n.value.array() * (1.0 - n.value.array());
                break;
            case Op::Tanh:
                in(0).grad.array() += g.array() * (1.0 - n.value.array().square());
                break;
            case Op::Log:
                in(0).grad.array() += g.array() / in(0).value.array();
                break;
            case Op::LogSigmoid:
                // d/dt log sigmoid(t) = 1 - sigmoid(t) = sigmoid(-t)
                in(0).grad.array() += g.array() * in(0).value.array().unaryExpr([](double t) {
                    return t >= 0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
                });
                break;
            case Op::Softmax:
                in(0).grad += softmax_backward(n.value, g);
                break;
            case Op::GumbelSoftmax:
                in(0).grad += softmax_backward(n.value, g) / n.scalar;
                break;
            case Op::CrossEntropy: {
                const Matrix& p = in(0).value;
                Matrix d = -(n.aux.array() / p.array().max(1e-12)).matrix();
                d = (d.array() * (p.array() > 1e-12).cast<double>()).matrix();
                in(0).grad.array() += d.array().colwise() * g.col(0).array();
                break;
            }
            case Op::SquaredDistance: {
                Matrix d = 2.0 * ((in(0).value - in(1).value).array() * n.aux.array()).matrix();
                d.array().colwise() *= g.col(0).array();
                in(0).grad += d;
                in(1).grad -= d;
                break;
            }
            case Op::Mean:
                in(0).grad.array() += g(0, 0) / static_cast<double>(in(0).value.size());
                break;
            case Op::Sum:
                in(0).grad.array() += g(0, 0);
                break;
            case Op::WeightedSum:
                in(0).grad.col(0) += g(0, 0) * n.aux.col(0);
                break;
        }
    }
}

Adam::Adam(ParameterStore& store, AdamConfig config) : store_(&store), config_(config) {
    for (int i = 0; i < store.size(); ++i) {
        const auto& v = store.value(ParamId{i});
        first_.push_back(Matrix::Zero(v.rows(), v.cols()));
        second_.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
}

void Adam::step() {
    for (int i = 0; i < store_->size(); ++i) {
        if (!store_->grad(ParamId{i}).allFinite())
            throw NumericalError("non-finite gradient for parameter '" + store_->name(ParamId{i}) + "'");
    }
    ++step_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (int i = 0; i < store_->size(); ++i) {
        ParamId id{i};
        Matrix& g = store_->grad(id);
        first_[i] = b1 * first_[i] + (1.0 - b1) * g;
        second_[i] = b2 * second_[i] + (1.0 - b2) * g.cwiseAbs2();
        store_->value(id).array() -=
            config_.learning_rate * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + config_.epsilon);
        g.setZero();
    }
}

Matrix uniform_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double u = dist(rng);
        while (u <= 0.0 || u >= 1.0) u = dist(rng);
        m.data()[i] = u;
    }
    return m;
}

Matrix normal_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

}  // namespace mcs::ad
