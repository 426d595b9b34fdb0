#include "mcs/interface.hpp"
#include "mcs/service.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Model-based counterfactual synthesizer"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "run config file")->required();
        cmd->add_option("--seed", seed, "override [run] seed");
    };

    auto* setup = app.add_subcommand("setup", "preprocess, fit the encoder, train the deployed classifier");
    add_common(setup);

    std::string sampler, graph;
    auto* train = app.add_subcommand("train", "build the query source and train the synthesizer");
    add_common(train);
    train->add_option("--sampler", sampler, "us, lf, plain or zero")->check(CLI::IsMember({"us", "lf", "plain", "zero"}));
    train->add_option("--graph", graph, "edge list wiring the modular generator");

    std::string query, out_path;
    int n = 0;
    std::optional<std::uint64_t> sample_seed;
    auto* gen = app.add_subcommand("generate", "write counterfactuals for a query as CSV");
    add_common(gen);
    gen->add_option("-q,--query", query, "name=value,... (empty: unconditional)");
    gen->add_option("-n", n, "samples (default [generate] n)")->check(CLI::PositiveNumber);
    gen->add_option("--sample-seed", sample_seed, "generation seed");
    gen->add_option("-o,--out", out_path, "output file (default stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "validity, distance, latency and model compatibility reports");
    add_common(evaluate);
    auto* causal = app.add_subcommand("causal", "ANM and CDS causation scores on original and generated data");
    add_common(causal);

    std::string host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "HTTP service over the trained model");
    add_common(serve);
    serve->add_option("--host", host);
    serve->add_option("-p,--port", port)->check(CLI::Range(1, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    return mcs::run_guarded(
        [&] {
            mcs::RunConfig config = mcs::RunConfig::load(config_path);
            if (seed) config.seed = *seed;
            if (!sampler.empty()) config.sampler = sampler;
            if (!graph.empty()) config.graph = graph;

            if (setup->parsed()) mcs::cmd_setup(config, std::cout);
            if (train->parsed()) mcs::cmd_train(config, std::cout);
            if (gen->parsed()) {
                const int count = n > 0 ? n : config.generate_n;
                if (out_path.empty()) {
                    mcs::cmd_generate(config, query, count, sample_seed, std::cout);
                } else {
                    std::ostringstream buf;
                    mcs::cmd_generate(config, query, count, sample_seed, buf);
                    mcs::write_file(out_path, buf.str());
                }
            }
            if (evaluate->parsed()) mcs::cmd_evaluate(config, std::cout);
            if (causal->parsed()) mcs::cmd_causal(config, std::cout);
            if (serve->parsed()) {
                mcs::Service service(mcs::TrainedSynthesizer::load(config.model_artifact()), mcs::derive_seed(config.seed, "serve"));
                std::cout << "serving " << config.model_artifact().string() << " on http://" << host << ":" << port << std::endl;
                mcs::serve(service, host, port);
            }
        },
        std::cerr);
}
