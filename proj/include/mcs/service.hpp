#pragma once

#include "mcs/synthesizer.hpp"

#include <stop_token>
#include <string>
#include <string_view>

namespace mcs {

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

/// JSON endpoints over one immutable trained synthesizer:
///   GET  /schema        attribute specs, classes, desired class
///   POST /generate      {"query": {name: value|null}, "n": int, "seed": int?}
///   POST /predict       {"row": {name: value}}
///   GET  /causal-graph  {"edges": [[cause, effect], ...]}
///   GET  /health        {"status": "ok"}
/// Errors: 400 malformed body, 422 unknown attribute or category, 500
/// internal with an opaque id.
class Service {
public:
    Service(TrainedSynthesizer model, std::uint64_t default_seed, int max_n = 1000);

    HttpResponse handle(std::string_view method, std::string_view path, std::string_view body) const;
    const TrainedSynthesizer& model() const { return model_; }

private:
    HttpResponse schema() const;
    HttpResponse generate(std::string_view body) const;
    HttpResponse predict(std::string_view body) const;
    HttpResponse causal_graph() const;

    TrainedSynthesizer model_;
    std::uint64_t default_seed_;
    int max_n_;
};

/// Blocks serving `service` until `stop` is requested or the process ends.
void serve(const Service& service, const std::string& host, int port, std::stop_token stop = {});

}  // namespace mcs
