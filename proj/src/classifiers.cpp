#include "mcs/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mcs {

LabeledData split_label(const DataSchema& full, const Matrix& encoded) {
    if (full.label().empty()) throw UserError("schema has no label attribute");
    if (encoded.cols() != full.width()) throw ShapeError("encoded width does not match schema");
    const int li = full.index_of(full.label());
    const auto& spec = full.attribute(li);
    if (spec.kind != AttributeKind::Categorical || spec.categories.size() != 2)
        throw UserError("label '" + full.label() + "' must be categorical with exactly two classes");
    LabeledData out;
    out.schema = full.without(full.label());
    out.classes = spec.categories;
    out.x.resize(encoded.rows(), out.schema.width());
    out.y.resize(encoded.rows());
    const Block lb = full.block(li);
    for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
        Eigen::Index k;
        encoded.row(r).segment(lb.offset, lb.width).maxCoeff(&k);
        out.y[r] = static_cast<int>(k);
    }
    int col = 0;
    for (int i = 0; i < full.size(); ++i) {
        if (i == li) continue;
        const Block b = full.block(i);
        out.x.middleCols(col, b.width) = encoded.middleCols(b.offset, b.width);
        col += b.width;
    }
    return out;
}

LabeledData subset(const LabeledData& data, std::span<const int> rows) {
    LabeledData out;
    out.schema = data.schema;
    out.classes = data.classes;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.cols());
    out.y.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(i) = data.x.row(rows[i]);
        out.y[i] = data.y[rows[i]];
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double fraction, std::uint64_t seed) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto cut = static_cast<std::size_t>(std::lround(n * fraction));
    return {std::vector<int>(idx.begin(), idx.begin() + cut), std::vector<int>(idx.begin() + cut, idx.end())};
}

// ---------------------------------------------------------------- view

namespace {

int feature_width(const AttributeSpec& a) { return a.kind == AttributeKind::Continuous ? 1 : a.width(); }

std::vector<Block> bind(const DataSchema& features, const DataSchema& source) {
    std::vector<Block> out;
    out.reserve(features.size());
    for (const auto& a : features.attributes()) {
        const int i = source.index_of(a.name);
        const auto& s = source.attribute(i);
        if (s.kind != a.kind || s.width() != a.width())
            throw ShapeError("attribute '" + a.name + "' differs between classifier and input layout");
        out.push_back(source.block(i));
    }
    return out;
}

}  // namespace

FeatureView::FeatureView(DataSchema features, const Matrix& encoded_train) : features_(std::move(features)) {
    int w = 0;
    for (const auto& a : features_.attributes()) w += feature_width(a);
    mean_ = RowVector::Zero(w);
    scale_ = RowVector::Ones(w);
    Matrix x = raw(encoded_train, features_);
    if (x.rows() > 0) {
        mean_ = x.colwise().mean();
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double sd = std::sqrt((x.col(c).array() - mean_(c)).square().mean());
            scale_(c) = sd > 1e-12 ? sd : 1.0;
        }
    }
}

Matrix FeatureView::raw(const Matrix& encoded, const DataSchema& source) const {
    if (encoded.cols() != source.width()) throw ShapeError("encoded width does not match input layout");
    const auto blocks = bind(features_, source);
    Matrix x(encoded.rows(), mean_.size());
    int col = 0;
    for (int i = 0; i < features_.size(); ++i) {
        const auto& a = features_.attribute(i);
        const Block b = blocks[i];
        if (a.kind == AttributeKind::Continuous) {
            const int k = a.gmm.modes();
            auto modes = encoded.middleCols(b.offset, k);
            Vector mu = modes * a.gmm.means;
            Vector sd = modes * a.gmm.stds;
            x.col(col) = mu.array() + 4.0 * encoded.col(b.offset + k).array() * sd.array();
            col += 1;
        } else {
            x.middleCols(col, b.width) = encoded.middleCols(b.offset, b.width);
            col += b.width;
        }
    }
    return x;
}

Matrix FeatureView::apply(const Matrix& encoded, const DataSchema& source) const {
    Matrix x = raw(encoded, source);
    x.rowwise() -= mean_;
    x.array().rowwise() /= scale_.array();
    return x;
}

ad::NodeId FeatureView::apply(ad::Graph& g, ad::NodeId encoded, const DataSchema& source) const {
    if (g.value(encoded).cols() != source.width()) throw ShapeError("encoded width does not match input layout");
    const auto blocks = bind(features_, source);
    std::vector<ad::NodeId> parts;
    for (int i = 0; i < features_.size(); ++i) {
        const auto& a = features_.attribute(i);
        const Block b = blocks[i];
        if (a.kind == AttributeKind::Continuous) {
            const int k = a.gmm.modes();
            auto modes = g.slice_cols(encoded, b.offset, k);
            auto mu = g.matmul(modes, g.constant(a.gmm.means));
            auto sd = g.matmul(modes, g.constant(a.gmm.stds));
            auto s = g.slice_cols(encoded, b.offset + k, 1);
            parts.push_back(g.add(mu, g.scale(g.mul(s, sd), 4.0)));
        } else {
            parts.push_back(g.slice_cols(encoded, b.offset, b.width));
        }
    }
    auto x = g.concat(parts);
    x = g.add(x, g.constant(-mean_));
    RowVector inv = scale_.cwiseInverse();
    return g.mul(x, g.constant(inv));
}

void FeatureView::save(Container& out, const std::string& prefix) const {
    out.put_text(prefix + "/schema", features_.to_json());
    out.put(prefix + "/mean", mean_);
    out.put(prefix + "/scale", scale_);
}

FeatureView FeatureView::load(const Container& in, const std::string& prefix) {
    FeatureView v;
    v.features_ = DataSchema::from_json(in.text(prefix + "/schema"));
    v.mean_ = in.matrix(prefix + "/mean");
    v.scale_ = in.matrix(prefix + "/scale");
    return v;
}

// ---------------------------------------------------------------- trees

int Tree::depth() const {
    std::vector<int> d(feature.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < feature.size(); ++i) {
        best = std::max(best, d[i]);
        if (feature[i] >= 0) {
            d[left[i]] = d[i] + 1;
            d[right[i]] = d[i] + 1;
        }
    }
    return best;
}

double Tree::predict(const double* row) const {
    int n = 0;
    while (feature[n] >= 0) n = row[feature[n]] <= threshold[n] ? left[n] : right[n];
    return positive[n];
}

namespace {

struct TreeBuilder {
    const Matrix& x;
    const std::vector<int>& y;
    const ForestConfig& config;
    Rng& rng;
    Tree tree;

    int leaf(double p) {
        tree.feature.push_back(-1);
        tree.threshold.push_back(0.0);
        tree.left.push_back(-1);
        tree.right.push_back(-1);
        tree.positive.push_back(p);
        return static_cast<int>(tree.feature.size()) - 1;
    }

    static double gini(double pos, double n) {
        if (n <= 0) return 0.0;
        const double p = pos / n;
        return 1.0 - p * p - (1.0 - p) * (1.0 - p);
    }

    int grow(std::vector<int> rows, int depth) {
        const double n = static_cast<double>(rows.size());
        double pos = 0;
        for (int r : rows) pos += y[r];
        const double p = pos / n;
        if (depth >= config.max_depth || pos == 0 || pos == n || static_cast<int>(rows.size()) < config.min_samples_split)
            return leaf(p);

        const int d = static_cast<int>(x.cols());
        const int tries = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
        std::vector<int> features(d);
        std::iota(features.begin(), features.end(), 0);
        // Features are drawn without replacement; ones constant within the node
        // do not count toward `tries`, so a valid split is found whenever one exists.
        int informative = 0;

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = std::numeric_limits<double>::infinity();
        std::vector<int> order = rows;
        for (int t = 0; t < d && (informative < tries || best_feature < 0); ++t) {
            std::uniform_int_distribution<int> pick(t, d - 1);
            std::swap(features[t], features[pick(rng)]);
            const int f = features[t];
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                return x(a, f) < x(b, f) || (x(a, f) == x(b, f) && a < b);
            });
            if (!(x(order.back(), f) > x(order.front(), f))) continue;
            ++informative;
            double left_pos = 0;
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                left_pos += y[order[i]];
                const double lo = x(order[i], f), hi = x(order[i + 1], f);
                if (!(hi > lo)) continue;
                const double nl = static_cast<double>(i + 1), nr = n - nl;
                const double impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
                if (impurity < best_impurity) {
                    best_impurity = impurity;
                    best_feature = f;
                    best_threshold = 0.5 * (lo + hi);
                    if (!(best_threshold > lo && best_threshold < hi)) best_threshold = lo;
                }
            }
        }
        if (best_feature < 0) return leaf(p);

        std::vector<int> lrows, rrows;
        for (int r : rows) (x(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
        const int node = leaf(p);
        tree.feature[node] = best_feature;
        tree.threshold[node] = best_threshold;
        const int l = grow(std::move(lrows), depth + 1);
        const int r = grow(std::move(rrows), depth + 1);
        tree.left[node] = l;
        tree.right[node] = r;
        return node;
    }
};

void check_classes(const LabeledData& data) {
    if (data.x.rows() == 0) throw UserError("training set is empty");
    if (data.classes.size() != 2) throw UserError("binary classification requires exactly two classes");
    const bool has0 = std::find(data.y.begin(), data.y.end(), 0) != data.y.end();
    const bool has1 = std::find(data.y.begin(), data.y.end(), 1) != data.y.end();
    if (!has0 || !has1) throw UserError("training data contains a single class");
}

Matrix one_hot(std::span<const int> y, int classes) {
    Matrix t = Matrix::Zero(static_cast<Eigen::Index>(y.size()), classes);
    for (std::size_t i = 0; i < y.size(); ++i) t(i, y[i]) = 1.0;
    return t;
}

}  // namespace

// ---------------------------------------------------------------- classifier

const char* kind_name(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::Mlp: return "mlp";
        case ClassifierKind::Forest: return "forest";
        case ClassifierKind::Surrogate: return "surrogate";
    }
    return "unknown";
}

ClassifierKind parse_kind(std::string_view name) {
    if (name == "mlp") return ClassifierKind::Mlp;
    if (name == "forest") return ClassifierKind::Forest;
    if (name == "surrogate") return ClassifierKind::Surrogate;
    throw UserError("unknown classifier kind: " + std::string(name));
}

int Classifier::class_index(std::string_view label) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
        if (classes_[i] == label) return static_cast<int>(i);
    throw UserError("unknown class label: " + std::string(label));
}

Matrix Classifier::mlp_forward(const Matrix& features) const {
    Matrix h = apply_plain(params_, hidden_, features).cwiseMax(0.0);
    Matrix logits = apply_plain(params_, output_, h);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return logits;
}

Matrix Classifier::predict_proba(const Matrix& encoded, const DataSchema& source) const {
    Matrix x = view_.apply(encoded, source);
    if (kind_ != ClassifierKind::Forest) return mlp_forward(x);
    Matrix p(x.rows(), 2);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double s = 0;
        for (const auto& t : trees_) s += t.predict(x.row(r).data());
        s /= static_cast<double>(trees_.size());
        p(r, 0) = 1.0 - s;
        p(r, 1) = s;
    }
    return p;
}

std::vector<int> Classifier::predict(const Matrix& encoded, const DataSchema& source) const {
    Matrix p = predict_proba(encoded, source);
    std::vector<int> out(p.rows());
    for (Eigen::Index r = 0; r < p.rows(); ++r) out[r] = p(r, 1) > p(r, 0) ? 1 : 0;
    return out;
}

ad::NodeId Classifier::proba(ad::Graph& g, ad::NodeId encoded, const DataSchema& source) const {
    if (!differentiable()) throw UserError("forest classifiers are not differentiable; distill a surrogate");
    auto x = view_.apply(g, encoded, source);
    auto h = g.relu(apply_frozen(g, params_, hidden_, x));
    return g.softmax(apply_frozen(g, params_, output_, h));
}

void Classifier::save(Container& out, const std::string& prefix) const {
    out.put_text(prefix + "/kind", kind_name(kind_));
    out.put_text(prefix + "/classes", classes_[0] + "\n" + classes_[1]);
    Matrix meta(1, 2);
    meta << final_loss_, iterations_;
    out.put(prefix + "/meta", meta);
    view_.save(out, prefix + "/view");
    if (kind_ != ClassifierKind::Forest) {
        put_parameters(out, params_, prefix + "/params");
        return;
    }
    std::size_t nodes = 0;
    for (const auto& t : trees_) nodes += t.feature.size();
    Matrix table(static_cast<Eigen::Index>(nodes), 6);
    Eigen::Index row = 0;
    for (std::size_t ti = 0; ti < trees_.size(); ++ti) {
        const auto& t = trees_[ti];
        for (std::size_t i = 0; i < t.feature.size(); ++i, ++row)
            table.row(row) << static_cast<double>(ti), t.feature[i], t.threshold[i], t.left[i], t.right[i], t.positive[i];
    }
    out.put(prefix + "/trees", table);
}

Classifier Classifier::load(const Container& in, const std::string& prefix) {
    Classifier c;
    c.kind_ = parse_kind(in.text(prefix + "/kind"));
    c.classes_ = split_list(in.text(prefix + "/classes"), '\n');
    if (c.classes_.size() != 2) throw FormatError("classifier must have two classes");
    const Matrix& meta = in.matrix(prefix + "/meta");
    c.final_loss_ = meta(0, 0);
    c.iterations_ = static_cast<int>(meta(0, 1));
    c.view_ = FeatureView::load(in, prefix + "/view");
    if (c.kind_ != ClassifierKind::Forest) {
        const int d = c.view_.width();
        const auto& names = in.names();
        int hidden = 0;
        for (const auto& n : names)
            if (n == prefix + "/params/mlp.hidden.w") hidden = static_cast<int>(in.matrix(n).cols());
        if (hidden == 0) throw FormatError("missing mlp parameters under " + prefix);
        c.hidden_.weight = c.params_.add("mlp.hidden.w", Matrix::Zero(d, hidden));
        c.hidden_.bias = c.params_.add("mlp.hidden.b", Matrix::Zero(1, hidden));
        c.output_.weight = c.params_.add("mlp.out.w", Matrix::Zero(hidden, 2));
        c.output_.bias = c.params_.add("mlp.out.b", Matrix::Zero(1, 2));
        c.hidden_.in = d;
        c.hidden_.out = hidden;
        c.output_.in = hidden;
        c.output_.out = 2;
        get_parameters(in, c.params_, prefix + "/params");
        return c;
    }
    const Matrix& table = in.matrix(prefix + "/trees");
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        const auto ti = static_cast<std::size_t>(table(r, 0));
        if (ti >= c.trees_.size()) c.trees_.resize(ti + 1);
        auto& t = c.trees_[ti];
        t.feature.push_back(static_cast<int>(table(r, 1)));
        t.threshold.push_back(table(r, 2));
        t.left.push_back(static_cast<int>(table(r, 3)));
        t.right.push_back(static_cast<int>(table(r, 4)));
        t.positive.push_back(table(r, 5));
    }
    return c;
}

namespace {

// Minibatch fit of the one-hidden-layer net to (soft) targets.
void fit_mlp(ad::ParameterStore& params, const Dense& hidden, const Dense& output, const Matrix& x,
             const Matrix& targets, const MlpConfig& config, Rng& rng, double* final_loss, int* iterations) {
    ad::Adam adam(params, {config.learning_rate, 0.9, 0.999, 1e-8});
    const auto n = static_cast<int>(x.rows());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    int epoch = 0;
    double epoch_loss = 0;
    for (; epoch < config.max_iterations; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        epoch_loss = 0;
        for (int start = 0; start < n; start += config.batch) {
            const int b = std::min(config.batch, n - start);
            Matrix xb(b, x.cols());
            Matrix tb(b, targets.cols());
            for (int i = 0; i < b; ++i) {
                xb.row(i) = x.row(order[start + i]);
                tb.row(i) = targets.row(order[start + i]);
            }
            ad::Graph g;
            auto in = g.input("x", std::move(xb));
            auto h = g.relu(apply(g, params, hidden, in));
            auto p = g.softmax(apply(g, params, output, h));
            auto loss = g.mean(g.cross_entropy(p, tb));
            if (config.l2 > 0) {
                auto w1 = g.parameter(params, hidden.weight);
                auto w2 = g.parameter(params, output.weight);
                auto penalty = g.add(g.sum(g.mul(w1, w1)), g.sum(g.mul(w2, w2)));
                loss = g.add(loss, g.scale(penalty, 0.5 * config.l2 / b));
            }
            const double value = g.value(loss)(0, 0);
            if (!std::isfinite(value)) throw NumericalError("classifier loss is not finite at epoch " + std::to_string(epoch));
            epoch_loss += value * b;
            g.backward(loss);
            adam.step();
        }
        epoch_loss /= n;
        if (epoch_loss > best - config.tolerance)
            ++stale;
        else
            stale = 0;
        best = std::min(best, epoch_loss);
        if (stale >= config.patience) {
            ++epoch;
            break;
        }
    }
    *final_loss = epoch_loss;
    *iterations = epoch;
}

}  // namespace

Classifier train_mlp(const LabeledData& data, const MlpConfig& config, std::uint64_t seed) {
    check_classes(data);
    Classifier c;
    c.kind_ = ClassifierKind::Mlp;
    c.classes_ = data.classes;
    c.view_ = FeatureView(data.schema, data.x);
    Matrix x = c.view_.apply(data.x, data.schema);
    Rng rng(seed);
    c.hidden_ = add_dense(c.params_, "mlp.hidden", static_cast<int>(x.cols()), config.hidden, rng);
    c.output_ = add_dense(c.params_, "mlp.out", config.hidden, 2, rng);
    fit_mlp(c.params_, c.hidden_, c.output_, x, one_hot(data.y, 2), config, rng, &c.final_loss_, &c.iterations_);
    return c;
}

Classifier train_random_forest(const LabeledData& data, const ForestConfig& config, std::uint64_t seed) {
    check_classes(data);
    if (config.trees < 1 || config.max_depth < 1) throw UserError("forest needs at least one tree and depth 1");
    FeatureView view(data.schema, data.x);
    Matrix x = view.apply(data.x, data.schema);
    const auto n = static_cast<int>(x.rows());
    std::vector<Tree> trees;
    for (int t = 0; t < config.trees; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::vector<int> rows(n);
        for (auto& r : rows) r = pick(rng);
        TreeBuilder builder{x, data.y, config, rng, {}};
        builder.grow(std::move(rows), 0);
        trees.push_back(std::move(builder.tree));
    }
    return make_forest(std::move(view), data.classes, std::move(trees));
}

Classifier make_forest(FeatureView view, std::vector<std::string> classes, std::vector<Tree> trees) {
    if (trees.empty()) throw UserError("forest has no trees");
    Classifier c;
    c.kind_ = ClassifierKind::Forest;
    c.view_ = std::move(view);
    c.classes_ = std::move(classes);
    c.trees_ = std::move(trees);
    return c;
}

Classifier distill_surrogate(const Classifier& teacher, const DataSchema& source, const Matrix& reference,
                             const MlpConfig& config, std::uint64_t seed, SurrogateReport* report) {
    if (reference.rows() == 0) throw UserError("surrogate reference set is empty");
    Classifier c;
    c.kind_ = ClassifierKind::Surrogate;
    c.classes_ = teacher.classes_;
    c.view_ = teacher.view_;
    Matrix x = c.view_.apply(reference, source);
    Matrix soft = teacher.predict_proba(reference, source);
    auto [fit_rows, held_rows] = split_indices(static_cast<int>(x.rows()), 0.8, derive_seed(seed, "split"));
    if (held_rows.empty()) held_rows = fit_rows;
    Matrix xf(fit_rows.size(), x.cols()), tf(fit_rows.size(), 2);
    for (std::size_t i = 0; i < fit_rows.size(); ++i) {
        xf.row(i) = x.row(fit_rows[i]);
        tf.row(i) = soft.row(fit_rows[i]);
    }
    Rng rng(derive_seed(seed, "fit"));
    c.hidden_ = add_dense(c.params_, "mlp.hidden", static_cast<int>(x.cols()), config.hidden, rng);
    c.output_ = add_dense(c.params_, "mlp.out", config.hidden, 2, rng);
    fit_mlp(c.params_, c.hidden_, c.output_, xf, tf, config, rng, &c.final_loss_, &c.iterations_);

    Matrix xh(held_rows.size(), x.cols());
    for (std::size_t i = 0; i < held_rows.size(); ++i) xh.row(i) = x.row(held_rows[i]);
    Matrix ps = c.mlp_forward(xh);
    int agree = 0;
    for (std::size_t i = 0; i < held_rows.size(); ++i) {
        const int a = ps(i, 1) > ps(i, 0) ? 1 : 0;
        const int b = soft(held_rows[i], 1) > soft(held_rows[i], 0) ? 1 : 0;
        agree += a == b;
    }
    if (report) {
        report->agreement = static_cast<double>(agree) / static_cast<double>(held_rows.size());
        report->final_loss = c.final_loss_;
    }
    return c;
}

double f_score(std::span<const int> predicted, std::span<const int> actual, int positive) {
    if (predicted.size() != actual.size()) throw ShapeError("f_score: prediction and label counts differ");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == positive, a = actual[i] == positive;
        tp += p && a;
        fp += p && !a;
        fn += !p && a;
    }
    if (tp == 0) return 0.0;
    return 2 * tp / (2 * tp + fp + fn);
}

}  // namespace mcs
