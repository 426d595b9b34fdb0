#pragma once

#include "mcs/causal_eval.hpp"
#include "mcs/eval_harness.hpp"
#include "mcs/synthesizer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mcs {

/// Run configuration read from an INI file. Relative paths resolve against
/// the directory of the file. Sections and keys:
///
///   [run]      seed, workdir
///   [data]     dataset, schema, graph (optional edge list), max_rows (0 = all)
///   [setup]    classifier (mlp | forest), train_fraction
///   [umbrella] focus, windows, walkers, steps, max_steps, zeta, tau
///   [train]    sampler (us | lf | plain | zero), counterfactual, desired,
///              epochs, batch, latent, hidden, module_hidden, learning_rate,
///              lambda_ce, lambda_dist, tau, keep
///   [generate] n
///   [evaluate] rounds, kinds, queries, samples
///   [causal]   pairs (a -> b, ...), samples
struct RunConfig {
    std::uint64_t seed = 7;
    std::filesystem::path workdir = "run";
    std::filesystem::path dataset;
    std::filesystem::path schema;
    std::filesystem::path graph;
    int max_rows = 0;

    ClassifierKind classifier = ClassifierKind::Mlp;
    double train_fraction = 0.8;
    MlpConfig mlp;
    ForestConfig forest;

    UmbrellaConfig umbrella;
    std::string sampler = "us";
    double keep = 0.5;
    TrainConfig train;

    int generate_n = 20;

    int rounds = 5;
    std::vector<ClassifierKind> kinds{ClassifierKind::Forest};
    int eval_queries = 100;
    int eval_samples = 20;

    std::vector<std::pair<std::string, std::string>> pairs;
    int causal_samples = 2000;

    std::filesystem::path setup_artifact() const { return workdir / "setup.mcs"; }
    std::filesystem::path model_artifact() const { return workdir / "model.mcs"; }

    static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);
};

/// Everything the setup phase fixes: schema, row selection, split and f.
struct Workspace {
    DataSchema schema;  // full layout, label included
    std::vector<Record> records;
    Matrix encoded;
    std::vector<int> train;
    std::vector<int> test;
    Classifier classifier;
    std::optional<Classifier> surrogate;
    double test_accuracy = 0.0;
};

/// Reads and preprocesses the dataset and keeps a seeded subset of max_rows rows.
Table load_dataset(const RunConfig& config, const SchemaConfig& schema_config);
Workspace load_workspace(const RunConfig& config);

/// Query cells "name=value,name=value"; empty text is the all-masked query.
Query parse_query_spec(std::string_view spec, const DataSchema& schema);

void cmd_setup(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
/// Writes decoded counterfactuals plus valid and distance columns.
void cmd_generate(const RunConfig& config, std::string_view query_spec, int n, std::optional<std::uint64_t> seed,
                  std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& log);
void cmd_causal(const RunConfig& config, std::ostream& log);

/// 0 ok, 2 user error, 3 numerical failure; the message goes to `err`.
template <class Fn>
int run_guarded(Fn&& fn, std::ostream& err);

int exit_code_for(const std::exception& e);

template <class Fn>
int run_guarded(Fn&& fn, std::ostream& err) {
    try {
        fn();
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

}  // namespace mcs
