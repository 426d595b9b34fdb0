#include "mcs/interface.hpp"
#include "mcs/service.hpp"

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

using namespace mcs;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Moons model trained for a couple of epochs. The counterfactual variant is
/// modular (x1 -> x2); the observational one also generates the label.
Service make_service(bool counterfactual) {
        const fs::path dir = fs::temp_directory_path() / "mcs_service_model";
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "edges.txt") << "x1 -> x2\n";
        const fs::path root = fs::current_path();
        const auto cfg = RunConfig::parse(
            "[run]\nseed = 3\nworkdir = run\n[data]\ndataset = " + (root / "data/moons.csv").string() +
                "\nschema = " + (root / "configs/moons.schema").string() +
                "\ngraph = edges.txt\n[train]\nsampler = plain\ndesired = pos\nepochs = 2\nlatent = 16\nhidden = 32\n",
            dir);
        auto run = cfg;
        if (!counterfactual) {
            run.train.counterfactual = false;
            run.sampler = "zero";
            run.graph.clear();
        }
        std::ostringstream log;
        cmd_setup(cfg, log);
        cmd_train(run, log);
        auto model = TrainedSynthesizer::load(cfg.model_artifact());
        fs::remove_all(dir);
        return Service(std::move(model), 5, 50);
}

const Service& service() {
    static const Service s = make_service(true);
    return s;
}

const Service& observational_service() {
    static const Service s = make_service(false);
    return s;
}

/// Asks the kernel for an unused loopback port and releases it again.
int free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof addr;
    int port = -1;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0 &&
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0)
        port = ntohs(addr.sin_port);
    ::close(fd);
    return port;
}

json body_of(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_SUITE("service") {
    TEST_CASE("health and schema") {
        const auto h = service().handle("GET", "/health", "");
        CHECK(h.status == 200);
        CHECK(body_of(h)["status"] == "ok");

        const auto s = body_of(service().handle("GET", "/schema", ""));
        REQUIRE(s["attributes"].size() == 2);  // the label is not generated
        CHECK(s["attributes"][0]["name"] == "x1");
        CHECK(s["attributes"][0]["kind"] == "continuous");
        CHECK(s["classes"] == json::array({"neg", "pos"}));
        CHECK(s["desired"] == "pos");
    }

    TEST_CASE("generate") {
        const auto r = service().handle("POST", "/generate", R"({"query": {"x1": null, "x2": null}, "n": 3})");
        REQUIRE(r.status == 200);
        const auto b = body_of(r);
        CHECK(b["rows"].size() == 3);
        CHECK(b["rows"][0]["values"].contains("x2"));
        CHECK(b["rows"][0]["proba"].contains("pos"));

        const std::string req = R"({"query": {"x1": 0.4}, "n": 5, "seed": 99})";
        const auto a1 = service().handle("POST", "/generate", req);
        const auto a2 = service().handle("POST", "/generate", req);
        CHECK(a1.status == 200);
        CHECK(a1.body == a2.body);
        CHECK(body_of(service().handle("POST", "/generate", "{}"))["rows"].size() == 20);

        CHECK(service().handle("POST", "/generate", R"({"n": 0})").status == 400);
        CHECK(service().handle("POST", "/generate", R"({"n": 51})").status == 400);
        CHECK(service().handle("POST", "/generate", R"({"n": "3"})").status == 400);
        CHECK(service().handle("POST", "/generate", R"({"seed": -1})").status == 400);
        CHECK(service().handle("POST", "/generate", R"({"query": [1]})").status == 400);

        const auto bad_attr_label = service().handle("POST", "/generate", R"({"query": {"label": "pos"}})");
        CHECK(bad_attr_label.status == 422);
        CHECK(body_of(bad_attr_label)["attribute"] == "label");
        const auto bad_attr = service().handle("POST", "/generate", R"({"query": {"x9": 1}})");
        CHECK(bad_attr.status == 422);
        CHECK(body_of(bad_attr)["attribute"] == "x9");
        CHECK(service().handle("POST", "/generate", R"({"query": {"x1": "pos"}})").status == 422);

        const auto bad_cat = observational_service().handle("POST", "/generate", R"({"query": {"label": "maybe"}})");
        CHECK(bad_cat.status == 422);
        CHECK(body_of(bad_cat)["attribute"] == "label");
        const auto by_label = observational_service().handle("POST", "/generate", R"({"query": {"label": "pos"}, "n": 4})");
        REQUIRE(by_label.status == 200);
        for (const auto& row : body_of(by_label)["rows"]) CHECK(row["values"]["label"] == "pos");
        CHECK(body_of(by_label)["rows"][0]["valid"].is_null());
    }

    TEST_CASE("predict") {
        const auto r = service().handle("POST", "/predict", R"({"row": {"x1": 1.0, "x2": -0.4}})");
        REQUIRE(r.status == 200);
        const auto b = body_of(r);
        CHECK(b["proba"]["neg"].get<double>() + b["proba"]["pos"].get<double>() == doctest::Approx(1.0));
        CHECK((b["label"] == "neg" || b["label"] == "pos"));

        const auto missing = service().handle("POST", "/predict", R"({"row": {"x1": 1.0}})");
        CHECK(missing.status == 422);
        CHECK(body_of(missing)["attribute"] == "x2");
        const auto unknown = service().handle("POST", "/predict", R"({"row": {"x1": 1.0, "x2": 0, "zz": 1}})");
        CHECK(unknown.status == 422);
        CHECK(body_of(unknown)["attribute"] == "zz");
        CHECK(service().handle("POST", "/predict", R"({"rows": {}})").status == 400);
    }

    TEST_CASE("causal graph, unknown routes, malformed bodies") {
        const auto g = body_of(service().handle("GET", "/causal-graph", ""));
        CHECK(g["edges"] == json::array({json::array({"x1", "x2"})}));
        CHECK(g["vertices"].size() == 2);
        CHECK(service().handle("GET", "/nowhere", "").status == 404);
        CHECK(service().handle("GET", "/generate", "").status == 404);
        CHECK(service().handle("POST", "/generate", "{not json").status == 400);
        CHECK(service().handle("POST", "/predict", "[1, 2]").status == 400);
    }

    TEST_CASE("concurrent requests match serial results") {
        std::vector<std::string> requests;
        for (int i = 0; i < 8; ++i)
            requests.push_back(R"({"query": {"x1": )" + std::to_string(0.1 * i) + R"(}, "n": 4, "seed": )" +
                               std::to_string(i) + "}");
        std::vector<std::string> serial;
        for (const auto& r : requests) serial.push_back(service().handle("POST", "/generate", r).body);
        std::vector<std::future<std::string>> futures;
        for (const auto& r : requests)
            futures.push_back(std::async(std::launch::async, [&r] { return service().handle("POST", "/generate", r).body; }));
        for (std::size_t i = 0; i < requests.size(); ++i) CHECK(futures[i].get() == serial[i]);
    }

    TEST_CASE("http round trip") {
        const int port = free_port();
        REQUIRE(port > 0);

        std::jthread server([port](std::stop_token stop) { serve(service(), "127.0.0.1", port, stop); });
        httplib::Client client("127.0.0.1", port);
        client.set_connection_timeout(1);
        httplib::Result health;
        for (int attempt = 0; attempt < 100 && !health; ++attempt) {
            health = client.Get("/health");
            if (!health) std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        REQUIRE(health);
        CHECK(health->status == 200);
        const auto gen = client.Post("/generate", R"({"n": 2, "seed": 1})", "application/json");
        REQUIRE(gen);
        CHECK(gen->status == 200);
        CHECK(gen->body == service().handle("POST", "/generate", R"({"n": 2, "seed": 1})").body);
        CHECK(gen->get_header_value("Content-Type") == "application/json");
        const auto bad = client.Post("/predict", "{", "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 400);
        server.request_stop();
    }
}
