#include "mcs/encoding.hpp"

#include "mcs/container.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mcs {

// ---------------------------------------------------------------- mixtures

Vector GmmModel::log_joint(double x) const {
    Vector out(modes());
    for (int k = 0; k < modes(); ++k) {
        const double z = (x - means[k]) / stds[k];
        out[k] = std::log(std::max(weights[k], 1e-300)) - 0.5 * z * z - std::log(stds[k]) -
                 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return out;
}

Vector GmmModel::posterior(double x) const {
    Vector lj = log_joint(x);
    lj.array() -= lj.maxCoeff();
    Vector p = lj.array().exp();
    return p / p.sum();
}

int GmmModel::argmax_mode(double x) const {
    Eigen::Index k = 0;
    log_joint(x).maxCoeff(&k);
    return static_cast<int>(k);
}

double GmmModel::mean_log_likelihood(std::span<const double> values) const {
    double total = 0.0;
    for (double x : values) {
        Vector lj = log_joint(x);
        const double m = lj.maxCoeff();
        total += m + std::log((lj.array() - m).exp().sum());
    }
    return total / static_cast<double>(values.size());
}

GmmModel fit_gmm(std::span<const double> values, int modes, const GmmFitOptions& options, std::vector<double>* trace) {
    if (values.empty()) throw UserError("fit_gmm: empty input");
    if (modes < 1) throw UserError("fit_gmm: need at least one mode");
    if (static_cast<int>(values.size()) < modes)
        throw UserError("fit_gmm: " + std::to_string(values.size()) + " values cannot support " + std::to_string(modes) + " modes");
    for (double v : values)
        if (!std::isfinite(v)) throw UserError("fit_gmm: non-finite value");

    std::vector<double> distinct(values.begin(), values.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const int k_eff = std::min<int>(modes, static_cast<int>(distinct.size()));

    const auto n = static_cast<Eigen::Index>(values.size());
    Eigen::Map<const Vector> x(values.data(), n);
    const double mean = x.mean();
    const double sd = std::max(std::sqrt((x.array() - mean).square().mean()), GmmModel::kStdFloor);

    GmmModel g;
    g.weights = Vector::Constant(k_eff, 1.0 / k_eff);
    g.means.resize(k_eff);
    g.stds = Vector::Constant(k_eff, k_eff == 1 ? sd : std::max(sd / k_eff, GmmModel::kStdFloor));
    for (int k = 0; k < k_eff; ++k) {
        const auto idx = static_cast<std::size_t>(((k + 0.5) / k_eff) * static_cast<double>(distinct.size()));
        g.means[k] = distinct[std::min(idx, distinct.size() - 1)];
    }
    if (k_eff == 1) {
        g.means[0] = mean;
        if (trace) trace->push_back(g.mean_log_likelihood(values));
        return g;
    }

    Matrix resp(n, k_eff);
    double previous = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < options.max_iterations; ++it) {
        // E-step, with the log-likelihood of the current parameters.
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector lj = g.log_joint(x[i]);
            const double m = lj.maxCoeff();
            const double lse = m + std::log((lj.array() - m).exp().sum());
            ll += lse;
            resp.row(i) = (lj.array() - lse).exp().transpose();
        }
        ll /= static_cast<double>(n);
        if (trace) trace->push_back(ll);
        if (ll < previous - 1e-9 * std::max(1.0, std::abs(previous)))
            throw NumericalError("fit_gmm: log-likelihood decreased at iteration " + std::to_string(it));
        if (ll - previous < options.tolerance) break;
        previous = ll;

        // M-step; the std floor is the constrained maximizer of a unimodal objective.
        for (int k = 0; k < k_eff; ++k) {
            const double nk = resp.col(k).sum();
            if (nk < 1e-12) {
                g.weights[k] = 0.0;
                continue;
            }
            g.weights[k] = nk / static_cast<double>(n);
            g.means[k] = resp.col(k).dot(x) / nk;
            const double var = resp.col(k).dot((x.array() - g.means[k]).square().matrix()) / nk;
            g.stds[k] = std::max(std::sqrt(var), GmmModel::kStdFloor);
        }
        g.weights /= g.weights.sum();
    }
    return g;
}

// ---------------------------------------------------------------- schema

int AttributeSpec::width() const {
    return kind == AttributeKind::Categorical ? static_cast<int>(categories.size()) : gmm.modes() + 1;
}

int AttributeSpec::category_index(std::string_view value) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == value) return static_cast<int>(i);
    throw UserError("unknown category '" + std::string(value) + "' for attribute '" + name + "'");
}

DataSchema::DataSchema(std::vector<AttributeSpec> attributes, std::string label)
    : attributes_(std::move(attributes)), label_(std::move(label)) {
    std::set<std::string> seen;
    for (const auto& a : attributes_) {
        if (!seen.insert(a.name).second) throw UserError("duplicate attribute name '" + a.name + "'");
        if (a.kind == AttributeKind::Categorical && a.categories.size() < 2)
            throw UserError("categorical attribute '" + a.name + "' needs at least two categories");
        if (a.kind == AttributeKind::Continuous && a.gmm.modes() < 1)
            throw UserError("continuous attribute '" + a.name + "' has no fitted mixture");
        blocks_.push_back({width_, a.width()});
        width_ += a.width();
    }
    if (!label_.empty() && !seen.count(label_)) throw UserError("label '" + label_ + "' is not an attribute");
}

int DataSchema::index_of(std::string_view name) const {
    for (int i = 0; i < size(); ++i)
        if (attributes_[i].name == name) return i;
    throw UserError("unknown attribute '" + std::string(name) + "'");
}

bool DataSchema::contains(std::string_view name) const {
    return std::any_of(attributes_.begin(), attributes_.end(), [&](const auto& a) { return a.name == name; });
}

DataSchema DataSchema::without(std::string_view name) const {
    std::vector<AttributeSpec> kept;
    for (const auto& a : attributes_)
        if (a.name != name) kept.push_back(a);
    return DataSchema(std::move(kept), label_ == name ? std::string{} : label_);
}

namespace {
std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
Vector to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }
}  // namespace

std::string DataSchema::to_json() const {
    nlohmann::json j;
    j["label"] = label_;
    j["attributes"] = nlohmann::json::array();
    for (const auto& a : attributes_) {
        nlohmann::json ja;
        ja["name"] = a.name;
        if (a.kind == AttributeKind::Categorical) {
            ja["kind"] = "categorical";
            ja["categories"] = a.categories;
            ja["frequencies"] = to_std(a.frequencies);
        } else {
            ja["kind"] = "continuous";
            ja["requested_modes"] = a.requested_modes;
            ja["weights"] = to_std(a.gmm.weights);
            ja["means"] = to_std(a.gmm.means);
            ja["stds"] = to_std(a.gmm.stds);
        }
        j["attributes"].push_back(std::move(ja));
    }
    return j.dump();
}

DataSchema DataSchema::from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        std::vector<AttributeSpec> attrs;
        for (const auto& ja : j.at("attributes")) {
            AttributeSpec a;
            a.name = ja.at("name").get<std::string>();
            if (ja.at("kind") == "categorical") {
                a.kind = AttributeKind::Categorical;
                a.categories = ja.at("categories").get<std::vector<std::string>>();
                a.frequencies = to_eigen(ja.at("frequencies").get<std::vector<double>>());
            } else {
                a.kind = AttributeKind::Continuous;
                a.requested_modes = ja.at("requested_modes").get<int>();
                a.gmm.weights = to_eigen(ja.at("weights").get<std::vector<double>>());
                a.gmm.means = to_eigen(ja.at("means").get<std::vector<double>>());
                a.gmm.stds = to_eigen(ja.at("stds").get<std::vector<double>>());
            }
            attrs.push_back(std::move(a));
        }
        return DataSchema(std::move(attrs), j.value("label", std::string{}));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed schema JSON: ") + e.what());
    }
}

std::uint64_t DataSchema::hash() const { return fnv1a64(to_json()); }

// ---------------------------------------------------------------- encode / decode

RowVector encode_instance(const Record& row, const DataSchema& schema) {
    if (static_cast<int>(row.size()) != schema.size())
        throw UserError("row has " + std::to_string(row.size()) + " values, schema has " + std::to_string(schema.size()));
    RowVector out = RowVector::Zero(schema.width());
    for (int i = 0; i < schema.size(); ++i) {
        const auto& a = schema.attribute(i);
        const auto b = schema.block(i);
        if (a.kind == AttributeKind::Categorical) {
            const auto* s = std::get_if<std::string>(&row[i]);
            if (!s) throw UserError("attribute '" + a.name + "' expects a category");
            out[b.offset + a.category_index(*s)] = 1.0;
        } else {
            const auto* x = std::get_if<double>(&row[i]);
            if (!x) throw UserError("attribute '" + a.name + "' expects a number");
            if (!std::isfinite(*x)) throw UserError("attribute '" + a.name + "' has a non-finite value");
            const int k = a.gmm.argmax_mode(*x);
            out[b.offset + k] = 1.0;
            out[b.offset + b.width - 1] = std::clamp((*x - a.gmm.means[k]) / (4.0 * a.gmm.stds[k]), -1.0, 1.0);
        }
    }
    return out;
}

Matrix encode_all(std::span<const Record> rows, const DataSchema& schema) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), schema.width());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = encode_instance(rows[r], schema);
    return out;
}

namespace {
int resolve_onehot(const Eigen::Ref<const RowVector>& block, bool harden, const std::string& name) {
    Eigen::Index k = 0;
    block.maxCoeff(&k);
    if (!harden) {
        for (Eigen::Index j = 0; j < block.size(); ++j) {
            const double expect = j == k ? 1.0 : 0.0;
            if (block[j] != expect) throw UserError("attribute '" + name + "': block is not an exact one-hot (decode with hardening)");
        }
    }
    return static_cast<int>(k);
}
}  // namespace

Record decode_instance(const Eigen::Ref<const RowVector>& encoded, const DataSchema& schema, bool harden) {
    if (encoded.size() != schema.width())
        throw UserError("encoded width " + std::to_string(encoded.size()) + " does not match schema width " + std::to_string(schema.width()));
    Record out;
    out.reserve(schema.size());
    for (int i = 0; i < schema.size(); ++i) {
        const auto& a = schema.attribute(i);
        const auto b = schema.block(i);
        if (a.kind == AttributeKind::Categorical) {
            out.emplace_back(a.categories[resolve_onehot(encoded.segment(b.offset, b.width), harden, a.name)]);
        } else {
            const int k = resolve_onehot(encoded.segment(b.offset, b.width - 1), harden, a.name);
            const double s = encoded[b.offset + b.width - 1];
            out.emplace_back(a.gmm.means[k] + 4.0 * a.gmm.stds[k] * s);
        }
    }
    return out;
}

void harden_blocks(Eigen::Ref<Matrix> encoded, const DataSchema& schema) {
    for (int i = 0; i < schema.size(); ++i) {
        const auto& a = schema.attribute(i);
        const auto b = schema.block(i);
        const int w = a.kind == AttributeKind::Categorical ? b.width : b.width - 1;
        for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
            auto blk = encoded.row(r).segment(b.offset, w);
            Eigen::Index k = 0;
            blk.maxCoeff(&k);
            blk.setZero();
            blk[k] = 1.0;
        }
    }
}

// ---------------------------------------------------------------- queries

RowVector attribute_dim_mask(const std::vector<bool>& kept, const DataSchema& schema) {
    RowVector m = RowVector::Zero(schema.width());
    for (int i = 0; i < schema.size(); ++i)
        if (kept.at(i)) m.segment(schema.block(i).offset, schema.block(i).width).setOnes();
    return m;
}

EncodedQuery make_query(const Query& query, const DataSchema& schema) {
    if (static_cast<int>(query.values.size()) != schema.size())
        throw UserError("query has " + std::to_string(query.values.size()) + " slots, schema has " + std::to_string(schema.size()));
    EncodedQuery q;
    q.vector = RowVector::Zero(schema.width());
    q.kept.assign(schema.size(), false);
    bool any = false;
    Record filled(schema.size());
    for (int i = 0; i < schema.size(); ++i) {
        const auto& a = schema.attribute(i);
        if (query.values[i]) {
            filled[i] = *query.values[i];
            q.kept[i] = true;
            any = true;
        } else if (a.kind == AttributeKind::Categorical) {
            filled[i] = a.categories.front();
        } else {
            filled[i] = a.gmm.means[0];
        }
    }
    if (any) {
        const RowVector full = encode_instance(filled, schema);
        q.dim_mask = attribute_dim_mask(q.kept, schema);
        q.vector = full.cwiseProduct(q.dim_mask);
    } else {
        q.dim_mask = RowVector::Zero(schema.width());
    }
    return q;
}

Value parse_value(std::string_view cell, const AttributeSpec& spec) {
    const auto text = trim(cell);
    if (spec.kind == AttributeKind::Categorical) {
        spec.category_index(text);
        return text;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw UserError("attribute '" + spec.name + "': '" + text + "' is not a number");
    }
    if (used != text.size()) throw UserError("attribute '" + spec.name + "': '" + text + "' is not a number");
    if (!std::isfinite(v)) throw UserError("attribute '" + spec.name + "' has a non-finite value");
    return v;
}

Query parse_query(const std::map<std::string, std::string>& cells, const DataSchema& schema) {
    Query q;
    q.values.resize(schema.size());
    for (const auto& [name, cell] : cells) {
        const int i = schema.index_of(name);
        q.values[i] = parse_value(cell, schema.attribute(i));
    }
    return q;
}

std::string format_value(const Value& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", std::get<double>(v));
    return buf;
}

std::vector<Record> to_records(const Table& table, const DataSchema& schema) {
    std::vector<int> cols;
    for (const auto& a : schema.attributes()) {
        const int c = table.column_index(a.name);
        if (c < 0) throw UserError("dataset has no column '" + a.name + "'");
        cols.push_back(c);
    }
    std::vector<Record> out;
    out.reserve(table.size());
    for (const auto& row : table.rows) {
        Record r;
        r.reserve(cols.size());
        for (int i = 0; i < schema.size(); ++i) r.push_back(parse_value(row[cols[i]], schema.attribute(i)));
        out.push_back(std::move(r));
    }
    return out;
}

Table to_table(std::span<const Record> rows, const DataSchema& schema) {
    Table t;
    for (const auto& a : schema.attributes()) t.columns.push_back(a.name);
    for (const auto& r : rows) {
        std::vector<std::string> cells;
        for (const auto& v : r) cells.push_back(format_value(v));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

// ---------------------------------------------------------------- preprocessing

Table preprocess(const Table& table, const PreprocessRules& rules) {
    for (const auto& c : rules.drop_columns)
        if (table.column_index(c) < 0) throw UserError("drop rule names absent column '" + c + "'");
    for (const auto& [c, _] : rules.merges)
        if (table.column_index(c) < 0) throw UserError("merge rule names absent column '" + c + "'");

    std::vector<int> keep;
    Table out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (std::find(rules.drop_columns.begin(), rules.drop_columns.end(), table.columns[i]) != rules.drop_columns.end()) continue;
        keep.push_back(static_cast<int>(i));
        out.columns.push_back(table.columns[i]);
    }
    std::vector<const std::map<std::string, std::string>*> merge_for(keep.size(), nullptr);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        auto it = rules.merges.find(table.columns[keep[k]]);
        if (it != rules.merges.end()) merge_for[k] = &it->second;
    }
    for (const auto& row : table.rows) {
        std::vector<std::string> cells;
        bool missing = false;
        for (std::size_t k = 0; k < keep.size() && !missing; ++k) {
            std::string cell = row[keep[k]];
            if (rules.missing_tokens.count(cell)) {
                missing = true;
                break;
            }
            if (merge_for[k]) {
                auto m = merge_for[k]->find(cell);
                if (m != merge_for[k]->end()) cell = m->second;
            }
            cells.push_back(std::move(cell));
        }
        if (!missing) out.rows.push_back(std::move(cells));
    }
    return out;
}

SchemaConfig parse_schema_config(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw UserError(std::string("schema config: ") + e.what());
    }
    SchemaConfig cfg;
    for (const auto& [section, body] : tree) {
        if (section == "dataset") {
            cfg.label = body.get<std::string>("label", "");
            cfg.rules.drop_columns = split_list(body.get<std::string>("drop", ""));
            if (auto missing = body.get_optional<std::string>("missing")) {
                cfg.rules.missing_tokens = {""};
                for (auto& m : split_list(*missing)) cfg.rules.missing_tokens.insert(m);
            }
            continue;
        }
        if (body.empty()) throw UserError("schema config: '" + section + "' is not a section");
        AttributeConfig a;
        a.name = section;
        const auto kind = body.get<std::string>("kind", "");
        if (kind == "categorical") {
            a.kind = AttributeKind::Categorical;
            a.categories = split_list(body.get<std::string>("categories", ""));
        } else if (kind == "continuous") {
            a.kind = AttributeKind::Continuous;
            a.modes = body.get<int>("modes", 5);
            if (a.modes < 1) throw UserError("schema config: attribute '" + section + "' needs modes >= 1");
        } else {
            throw UserError("schema config: attribute '" + section + "' has kind '" + kind + "' (expected continuous or categorical)");
        }
        if (auto merge = body.get_optional<std::string>("merge")) {
            for (const auto& item : split_list(*merge)) {
                const auto colon = item.rfind(':');
                if (colon == std::string::npos) throw UserError("schema config: merge entry '" + item + "' must be from:to");
                cfg.rules.merges[section][trim(item.substr(0, colon))] = trim(item.substr(colon + 1));
            }
        }
        cfg.attributes.push_back(std::move(a));
    }
    if (cfg.attributes.empty()) throw UserError("schema config declares no attributes");
    return cfg;
}

SchemaConfig load_schema_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw UserError("schema file not found: " + path.string());
    return parse_schema_config(read_file(path));
}

DataSchema fit_schema(const Table& table, const SchemaConfig& config) {
    if (table.rows.empty()) throw UserError("cannot fit a schema on an empty dataset");
    std::vector<AttributeSpec> specs;
    for (const auto& ac : config.attributes) {
        const int c = table.column_index(ac.name);
        if (c < 0) throw UserError("dataset has no column '" + ac.name + "'");
        AttributeSpec s;
        s.name = ac.name;
        s.kind = ac.kind;
        if (ac.kind == AttributeKind::Categorical) {
            std::map<std::string, double> counts;
            for (const auto& row : table.rows) counts[row[c]] += 1.0;
            if (ac.categories.empty()) {
                for (const auto& [v, _] : counts) s.categories.push_back(v);
            } else {
                s.categories = ac.categories;
                for (const auto& [v, _] : counts)
                    if (std::find(s.categories.begin(), s.categories.end(), v) == s.categories.end())
                        throw UserError("attribute '" + ac.name + "' has undeclared category '" + v + "'");
            }
            s.frequencies.resize(static_cast<Eigen::Index>(s.categories.size()));
            for (std::size_t k = 0; k < s.categories.size(); ++k) s.frequencies[static_cast<Eigen::Index>(k)] = counts[s.categories[k]];
            s.frequencies /= s.frequencies.sum();
        } else {
            std::vector<double> xs;
            xs.reserve(table.size());
            s.requested_modes = ac.modes;
            for (const auto& row : table.rows) xs.push_back(std::get<double>(parse_value(row[c], s)));
            s.gmm = fit_gmm(xs, std::min<int>(ac.modes, static_cast<int>(xs.size())));
        }
        specs.push_back(std::move(s));
    }
    return DataSchema(std::move(specs), config.label);
}

}  // namespace mcs
