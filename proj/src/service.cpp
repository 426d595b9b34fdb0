#include "mcs/service.hpp"

#include "mcs/eval_harness.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <iostream>

namespace mcs {

using json = nlohmann::json;

namespace {

struct HttpError {
    int status;
    json body;
};

HttpResponse reply(int status, const json& body) { return {status, body.dump()}; }

[[noreturn]] void fail(int status, std::string message, std::string attribute = {}) {
    json body{{"error", std::move(message)}};
    if (!attribute.empty()) body["attribute"] = std::move(attribute);
    throw HttpError{status, std::move(body)};
}

json parse_body(std::string_view body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) fail(400, "request body is not valid JSON");
    if (!j.is_object()) fail(400, "request body must be a JSON object");
    return j;
}

Value cell_value(const json& v, const AttributeSpec& spec) {
    if (spec.kind == AttributeKind::Continuous) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            try {
                return parse_value(v.get<std::string>(), spec);
            } catch (const UserError& e) {
                fail(422, e.what(), spec.name);
            }
        }
        fail(422, "attribute '" + spec.name + "' takes a number", spec.name);
    }
    if (!v.is_string()) fail(422, "attribute '" + spec.name + "' takes a category name", spec.name);
    const auto s = v.get<std::string>();
    if (std::find(spec.categories.begin(), spec.categories.end(), s) == spec.categories.end())
        fail(422, "attribute '" + spec.name + "' has no category '" + s + "'", spec.name);
    return s;
}

json value_json(const Value& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return std::get<double>(v);
}

std::atomic<std::uint64_t> error_counter{0};

}  // namespace

Service::Service(TrainedSynthesizer model, std::uint64_t default_seed, int max_n)
    : model_(std::move(model)), default_seed_(default_seed), max_n_(max_n) {}

HttpResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
    try {
        if (method == "GET" && path == "/health") return reply(200, {{"status", "ok"}});
        if (method == "GET" && path == "/schema") return schema();
        if (method == "GET" && path == "/causal-graph") return causal_graph();
        if (method == "POST" && path == "/generate") return generate(body);
        if (method == "POST" && path == "/predict") return predict(body);
        return reply(404, {{"error", "no route " + std::string(method) + " " + std::string(path)}});
    } catch (const HttpError& e) {
        return reply(e.status, e.body);
    } catch (const std::exception& e) {
        char id[24];
        std::snprintf(id, sizeof id, "%016llx",
                      static_cast<unsigned long long>(splitmix64(error_counter.fetch_add(1) ^ default_seed_)));
        std::cerr << "internal error " << id << ": " << e.what() << "\n";
        return reply(500, {{"error", "internal error"}, {"id", id}});
    }
}

HttpResponse Service::schema() const {
    json attrs = json::array();
    for (const auto& a : model_.schema.attributes()) {
        json j{{"name", a.name}, {"kind", a.kind == AttributeKind::Continuous ? "continuous" : "categorical"}};
        if (a.kind == AttributeKind::Categorical) j["categories"] = a.categories;
        attrs.push_back(std::move(j));
    }
    json out{{"attributes", attrs}};
    if (model_.classifier) {
        out["classes"] = model_.classifier->classes();
        out["desired"] = model_.classifier->classes().at(static_cast<std::size_t>(model_.desired_class()));
    }
    return reply(200, out);
}

HttpResponse Service::generate(std::string_view body) const {
    const json req = parse_body(body);
    const auto& schema = model_.schema;
    Query query;
    query.values.resize(static_cast<std::size_t>(schema.size()));
    if (req.contains("query")) {
        const auto& q = req["query"];
        if (!q.is_object()) fail(400, "'query' must be an object of attribute values");
        for (const auto& [name, v] : q.items()) {
            if (!schema.contains(name)) fail(422, "unknown attribute '" + name + "'", name);
            const int i = schema.index_of(name);
            if (!v.is_null()) query.values[static_cast<std::size_t>(i)] = cell_value(v, schema.attribute(i));
        }
    }
    int n = 20;
    if (req.contains("n")) {
        if (!req["n"].is_number_integer()) fail(400, "'n' must be an integer");
        const auto requested = req["n"].get<std::int64_t>();
        if (requested < 1 || requested > max_n_) fail(400, "'n' must lie in [1, " + std::to_string(max_n_) + "]");
        n = static_cast<int>(requested);
    }
    std::uint64_t seed = default_seed_;
    if (req.contains("seed") && !req["seed"].is_null()) {
        if (!req["seed"].is_number_unsigned()) fail(400, "'seed' must be a nonnegative integer");
        seed = req["seed"].get<std::uint64_t>();
    }

    const CounterfactualSet set = mcs::generate(model_, query, n, seed);
    json rows = json::array();
    for (int i = 0; i < n; ++i) {
        json values = json::object();
        for (int a = 0; a < schema.size(); ++a)
            values[schema.attribute(a).name] = value_json(set.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)]);
        json row{{"values", values}, {"distance", set.distance[static_cast<std::size_t>(i)]}};
        row["valid"] = set.valid.empty() ? json(nullptr) : json(static_cast<bool>(set.valid[static_cast<std::size_t>(i)]));
        if (set.proba.size() > 0) {
            json p = json::object();
            const auto& classes = model_.classifier->classes();
            for (std::size_t c = 0; c < classes.size(); ++c) p[classes[c]] = set.proba(i, static_cast<Eigen::Index>(c));
            row["proba"] = p;
        }
        rows.push_back(std::move(row));
    }
    json out{{"n", n}, {"seed", seed}, {"rows", rows}, {"avg_distance", avg_euclid_distance(set)}};
    out["validity_rate"] = set.valid.empty() ? json(nullptr) : json(validity_rate(set));
    return reply(200, out);
}

HttpResponse Service::predict(std::string_view body) const {
    if (!model_.classifier) fail(422, "model has no deployed classifier");
    const json req = parse_body(body);
    if (!req.contains("row") || !req["row"].is_object()) fail(400, "'row' must be an object of attribute values");
    const auto& row = req["row"];
    const Classifier& f = *model_.classifier;
    const DataSchema& features = f.view().schema();
    for (const auto& [name, _] : row.items())
        if (!features.contains(name) && !model_.schema.contains(name)) fail(422, "unknown attribute '" + name + "'", name);
    Record record;
    for (const auto& a : features.attributes()) {
        if (!row.contains(a.name) || row[a.name].is_null()) fail(422, "missing value for attribute '" + a.name + "'", a.name);
        record.push_back(cell_value(row[a.name], a));
    }
    const Matrix encoded = encode_instance(record, features);
    const Matrix proba = f.predict_proba(encoded, features);
    json p = json::object();
    Eigen::Index best = 0;
    proba.row(0).maxCoeff(&best);
    for (std::size_t c = 0; c < f.classes().size(); ++c) p[f.classes()[c]] = proba(0, static_cast<Eigen::Index>(c));
    return reply(200, {{"proba", p}, {"label", f.classes()[static_cast<std::size_t>(best)]}});
}

HttpResponse Service::causal_graph() const {
    json edges = json::array();
    json vertices = json::array();
    for (const auto& a : model_.schema.attributes()) vertices.push_back(a.name);
    if (const auto* modular = dynamic_cast<const ModularGenerator*>(model_.generator.get()))
        for (const auto& [cause, effect] : modular->graph().edges) edges.push_back({cause, effect});
    return reply(200, {{"vertices", vertices}, {"edges", edges}});
}

void serve(const Service& service, const std::string& host, int port, std::stop_token stop) {
    httplib::Server server;
    auto bind = [&](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    for (const char* path : {"/health", "/schema", "/causal-graph"}) server.Get(path, bind);
    for (const char* path : {"/generate", "/predict"}) server.Post(path, bind);
    if (!server.bind_to_port(host, port)) throw UserError("cannot listen on " + host + ":" + std::to_string(port));
    std::stop_callback on_stop(stop, [&] { server.stop(); });
    if (stop.stop_requested()) return;
    server.listen_after_bind();
}

}  // namespace mcs
