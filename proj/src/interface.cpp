#include "mcs/interface.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mcs {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* f = "%.4f") {
    char buf[48];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path resolve(const fs::path& base, const std::string& value) {
    if (value.empty()) return {};
    fs::path p(value);
    return (p.is_absolute() ? p : base / p).lexically_normal();
}

void require_file(const fs::path& path, const char* what) {
    if (path.empty()) throw UserError(std::string("run config: no ") + what + " path given");
    if (!fs::is_regular_file(path)) throw UserError(std::string(what) + " file not found: " + path.string());
}

Matrix index_column(const std::vector<int>& idx) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = idx[i];
    return m;
}

std::vector<int> index_vector(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(m(i, 0));
    return out;
}

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : split_list(text)) {
        const auto arrow = item.find("->");
        if (arrow == std::string::npos) throw UserError("run config: causal pair '" + item + "' must be 'a -> b'");
        out.emplace_back(trim(item.substr(0, arrow)), trim(item.substr(arrow + 2)));
    }
    return out;
}

std::string desired_label(const RunConfig& config, const DataSchema& full) {
    if (!config.train.desired.empty()) return config.train.desired;
    return full.attribute(full.index_of(full.label())).categories.back();
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const fs::path& base_dir) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw UserError(std::string("run config: ") + e.what());
    }
    static const std::map<std::string, std::set<std::string>> known = {
        {"run", {"seed", "workdir"}},
        {"data", {"dataset", "schema", "graph", "max_rows"}},
        {"setup", {"classifier", "train_fraction"}},
        {"umbrella", {"focus", "windows", "walkers", "steps", "max_steps", "zeta", "tau"}},
        {"train",
         {"sampler", "counterfactual", "desired", "epochs", "batch", "latent", "hidden", "module_hidden",
          "learning_rate", "lambda_ce", "lambda_dist", "tau", "keep"}},
        {"generate", {"n"}},
        {"evaluate", {"rounds", "kinds", "queries", "samples"}},
        {"causal", {"pairs", "samples"}},
    };
    for (const auto& [section, body] : tree) {
        const auto it = known.find(section);
        if (it == known.end()) throw UserError("run config: unknown section [" + section + "]");
        for (const auto& [key, _] : body)
            if (!it->second.contains(key)) throw UserError("run config: unknown key '" + key + "' in [" + section + "]");
    }

    RunConfig c;
    try {
        c.seed = tree.get<std::uint64_t>("run.seed", c.seed);
        c.workdir = resolve(base_dir, tree.get<std::string>("run.workdir", "run"));
        c.dataset = resolve(base_dir, tree.get<std::string>("data.dataset", ""));
        c.schema = resolve(base_dir, tree.get<std::string>("data.schema", ""));
        c.graph = resolve(base_dir, tree.get<std::string>("data.graph", ""));
        c.max_rows = tree.get<int>("data.max_rows", 0);

        c.classifier = parse_kind(tree.get<std::string>("setup.classifier", "mlp"));
        if (c.classifier == ClassifierKind::Surrogate) throw UserError("run config: classifier must be mlp or forest");
        c.train_fraction = tree.get<double>("setup.train_fraction", c.train_fraction);

        c.umbrella.focus = split_list(tree.get<std::string>("umbrella.focus", ""));
        c.umbrella.windows = tree.get<int>("umbrella.windows", c.umbrella.windows);
        c.umbrella.walkers = tree.get<int>("umbrella.walkers", c.umbrella.walkers);
        c.umbrella.steps = tree.get<int>("umbrella.steps", c.umbrella.steps);
        c.umbrella.max_steps = tree.get<int>("umbrella.max_steps", c.umbrella.max_steps);
        c.umbrella.zeta = tree.get<double>("umbrella.zeta", c.umbrella.zeta);
        c.umbrella.tau = tree.get<double>("umbrella.tau", c.umbrella.tau);

        c.sampler = tree.get<std::string>("train.sampler", c.sampler);
        auto& t = c.train;
        t.counterfactual = tree.get<bool>("train.counterfactual", t.counterfactual);
        t.desired = tree.get<std::string>("train.desired", "");
        t.epochs = tree.get<int>("train.epochs", t.epochs);
        t.batch = tree.get<int>("train.batch", t.batch);
        t.latent = tree.get<int>("train.latent", t.latent);
        t.hidden = tree.get<int>("train.hidden", t.hidden);
        t.module_hidden = tree.get<int>("train.module_hidden", t.module_hidden);
        t.learning_rate = tree.get<double>("train.learning_rate", t.learning_rate);
        t.lambda_ce = tree.get<double>("train.lambda_ce", t.lambda_ce);
        t.lambda_dist = tree.get<double>("train.lambda_dist", t.lambda_dist);
        t.tau = tree.get<double>("train.tau", t.tau);
        c.keep = tree.get<double>("train.keep", c.keep);

        c.generate_n = tree.get<int>("generate.n", c.generate_n);

        c.rounds = tree.get<int>("evaluate.rounds", c.rounds);
        if (auto kinds = tree.get_optional<std::string>("evaluate.kinds")) {
            c.kinds.clear();
            for (const auto& k : split_list(*kinds)) c.kinds.push_back(parse_kind(k));
        }
        c.eval_queries = tree.get<int>("evaluate.queries", c.eval_queries);
        c.eval_samples = tree.get<int>("evaluate.samples", c.eval_samples);

        c.pairs = parse_pairs(tree.get<std::string>("causal.pairs", ""));
        c.causal_samples = tree.get<int>("causal.samples", c.causal_samples);
    } catch (const pt::ptree_bad_data& e) {
        throw UserError(std::string("run config: bad value: ") + e.what());
    }
    static const std::set<std::string> samplers{"us", "lf", "plain", "zero"};
    if (!samplers.contains(c.sampler))
        throw UserError("run config: sampler '" + c.sampler + "' (expected us, lf, plain or zero)");
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
        throw UserError("run config: train_fraction must lie in (0, 1)");
    if (!(c.keep >= 0.0 && c.keep <= 1.0)) throw UserError("run config: keep must lie in [0, 1]");
    if (c.generate_n < 1 || c.rounds < 1 || c.eval_queries < 1 || c.eval_samples < 1 || c.causal_samples < 50)
        throw UserError("run config: counts must be positive (causal samples at least 50)");
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw UserError("run config file not found: " + path.string());
    return parse(read_file(path), path.parent_path());
}

Table load_dataset(const RunConfig& config, const SchemaConfig& schema_config) {
    require_file(config.dataset, "dataset");
    Table table = preprocess(read_csv(config.dataset), schema_config.rules);
    if (config.max_rows > 0 && table.size() > static_cast<std::size_t>(config.max_rows)) {
        std::vector<int> idx(table.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(config.seed, "data.subset"));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(config.max_rows));
        std::sort(idx.begin(), idx.end());
        Table kept;
        kept.columns = table.columns;
        for (int i : idx) kept.rows.push_back(std::move(table.rows[static_cast<std::size_t>(i)]));
        table = std::move(kept);
    }
    return table;
}

void cmd_setup(const RunConfig& config, std::ostream& log) {
    require_file(config.schema, "schema");
    const SchemaConfig schema_config = load_schema_config(config.schema);
    if (schema_config.label.empty()) throw UserError("schema has no label in its [dataset] section");
    const Table table = load_dataset(config, schema_config);
    const DataSchema schema = fit_schema(table, schema_config);
    const auto records = to_records(table, schema);
    const Matrix encoded = encode_all(records, schema);
    const LabeledData data = split_label(schema, encoded);
    const auto [train, test] =
        split_indices(static_cast<int>(records.size()), config.train_fraction, derive_seed(config.seed, "setup.split"));
    const LabeledData train_data = subset(data, train);

    Container out;
    out.put_text("schema", schema.to_json());
    out.put("train", index_column(train));
    out.put("test", index_column(test));
    std::optional<Classifier> f;
    if (config.classifier == ClassifierKind::Forest) {
        f = train_random_forest(train_data, config.forest, derive_seed(config.seed, "setup.classifier"));
        SurrogateReport report;
        const Classifier g = distill_surrogate(*f, train_data.schema, train_data.x, config.mlp,
                                               derive_seed(config.seed, "setup.surrogate"), &report);
        g.save(out, "surrogate");
        log << "surrogate agreement " << fmt(report.agreement) << "\n";
    } else {
        f = train_mlp(train_data, config.mlp, derive_seed(config.seed, "setup.classifier"));
    }
    f->save(out, "classifier");

    const LabeledData test_data = subset(data, test);
    const auto pred = f->predict(test_data.x, test_data.schema);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test_data.y[i];
    const double accuracy = pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
    out.put_text("accuracy", fmt(accuracy, "%.6f"));

    fs::create_directories(config.workdir);
    out.save(config.setup_artifact());
    log << "rows " << records.size() << " (train " << train.size() << ", test " << test.size() << ")\n";
    log << kind_name(f->kind()) << " held-out accuracy " << fmt(accuracy) << "\n";
    log << "wrote " << config.setup_artifact().string() << "\n";
}

Workspace load_workspace(const RunConfig& config) {
    if (!fs::is_regular_file(config.setup_artifact()))
        throw UserError("setup artifact not found: " + config.setup_artifact().string() + " (run setup first)");
    const Container in = Container::load(config.setup_artifact());
    Workspace ws;
    ws.schema = DataSchema::from_json(in.text("schema"));
    require_file(config.schema, "schema");
    const Table table = load_dataset(config, load_schema_config(config.schema));
    ws.records = to_records(table, ws.schema);
    ws.encoded = encode_all(ws.records, ws.schema);
    ws.train = index_vector(in.matrix("train"));
    ws.test = index_vector(in.matrix("test"));
    if (ws.train.size() + ws.test.size() != ws.records.size())
        throw UserError("dataset no longer matches the setup artifact (" + std::to_string(ws.records.size()) +
                        " rows, setup saw " + std::to_string(ws.train.size() + ws.test.size()) + ")");
    ws.classifier = Classifier::load(in, "classifier");
    if (in.has("surrogate/kind")) ws.surrogate = Classifier::load(in, "surrogate");
    ws.test_accuracy = std::stod(in.text("accuracy"));
    return ws;
}

void cmd_train(const RunConfig& config, std::ostream& log) {
    const Workspace ws = load_workspace(config);
    TrainConfig tc = config.train;
    tc.desired = desired_label(config, ws.schema);

    DataSchema layout;
    Matrix rows;
    if (tc.counterfactual) {
        const LabeledData train = subset(split_label(ws.schema, ws.encoded), ws.train);
        layout = train.schema;
        rows = train.x;
    } else {
        layout = ws.schema;
        rows = take_rows(ws.encoded, ws.train);
    }

    MaskPolicy policy;
    policy.keep = config.keep;
    for (const auto& name : config.umbrella.focus) policy.always.push_back(layout.index_of(name));

    std::unique_ptr<QuerySource> source;
    std::shared_ptr<UmbrellaPlan> plan;
    if (config.sampler == "us") {
        if (config.umbrella.focus.empty()) throw UserError("sampler us needs [umbrella] focus attributes");
        plan = std::make_shared<UmbrellaPlan>(build_plan(layout, rows, config.umbrella, derive_seed(config.seed, "umbrella")));
        if (!plan->converged(config.umbrella.zeta))
            throw NumericalError("umbrella sampling did not converge within " + std::to_string(config.umbrella.max_steps) +
                                 " steps:\n" + plan->to_text(layout));
        source = umbrella_queries(layout, rows, plan, policy);
    } else if (config.sampler == "lf") {
        if (config.umbrella.focus.size() != 1) throw UserError("sampler lf needs exactly one [umbrella] focus attribute");
        source = log_frequency_queries(layout, rows, config.umbrella.focus.front(), policy);
    } else if (config.sampler == "plain") {
        source = plain_queries(layout, rows, policy);
    } else {
        source = zero_queries(layout, rows);
    }

    std::optional<CausalGraph> graph;
    if (!config.graph.empty()) {
        require_file(config.graph, "graph");
        graph = CausalGraph::load(config.graph);
    }
    TrainInputs inputs;
    inputs.classifier = &ws.classifier;
    if (ws.surrogate) inputs.surrogate = &*ws.surrogate;
    if (graph) inputs.graph = &*graph;
    inputs.on_epoch = [&](const EpochLog& e) {
        if (e.epoch % 50 == 0 || e.epoch == tc.epochs)
            log << "epoch " << e.epoch << " d " << fmt(e.d_loss) << " g " << fmt(e.g_loss) << " cf " << fmt(e.cf_loss)
                << "\n";
    };

    TrainedSynthesizer synth = train(layout, rows, *source, tc, inputs, derive_seed(config.seed, "train"));
    if (plan) synth.plan = plan->to_text(layout);
    fs::create_directories(config.workdir);
    synth.save(config.model_artifact());

    log << "generator " << synth.generator->kind() << ", sampler " << synth.source << "\n";
    if (!synth.log.empty()) {
        const auto& last = synth.log.back();
        log << "final d_loss " << fmt(last.d_loss) << " g_loss " << fmt(last.g_loss) << " cf_loss " << fmt(last.cf_loss)
            << "\n";
    }
    if (plan) log << plan->to_text(layout);
    log << "wrote " << config.model_artifact().string() << "\n";
}

Query parse_query_spec(std::string_view spec, const DataSchema& schema) {
    std::map<std::string, std::string> cells;
    for (const auto& item : split_list(spec)) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UserError("query cell '" + item + "' must be name=value");
        const auto name = trim(item.substr(0, eq));
        if (cells.contains(name)) throw UserError("query names '" + name + "' twice");
        cells[name] = trim(item.substr(eq + 1));
    }
    return parse_query(cells, schema);
}

namespace {

TrainedSynthesizer load_model(const RunConfig& config) {
    if (!fs::is_regular_file(config.model_artifact()))
        throw UserError("model artifact not found: " + config.model_artifact().string() + " (run train first)");
    return TrainedSynthesizer::load(config.model_artifact());
}

Table counterfactual_table(const CounterfactualSet& set, const DataSchema& schema) {
    Table t = to_table(set.rows, schema);
    t.columns.push_back("valid");
    t.columns.push_back("distance");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        t.rows[i].push_back(set.valid.empty() ? "" : set.valid[i] ? "1" : "0");
        t.rows[i].push_back(fmt(set.distance[i], "%.6f"));
    }
    return t;
}

}  // namespace

void cmd_generate(const RunConfig& config, std::string_view query_spec, int n, std::optional<std::uint64_t> seed,
                  std::ostream& out) {
    const TrainedSynthesizer synth = load_model(config);
    const std::uint64_t s = seed.value_or(derive_seed(config.seed, "generate"));
    const Query query = parse_query_spec(query_spec, synth.schema);
    const CounterfactualSet set =
        trim(query_spec).empty() ? generate_unconditional(synth, n, s) : generate(synth, query, n, s);
    out << to_csv(counterfactual_table(set, synth.schema));
}

void cmd_evaluate(const RunConfig& config, std::ostream& log) {
    const Workspace ws = load_workspace(config);
    const TrainedSynthesizer synth = load_model(config);
    fs::create_directories(config.workdir);
    bool wrote = false;

    if (synth.config.counterfactual && synth.classifier) {
        // Held-out rows the deployed model does not already assign to y'.
        const LabeledData test = subset(split_label(ws.schema, ws.encoded), ws.test);
        const auto pred = synth.classifier->predict(test.x, test.schema);
        const int desired = synth.desired_class();
        std::vector<Query> pool;
        for (std::size_t i = 0; i < pred.size() && static_cast<int>(pool.size()) < config.eval_queries; ++i) {
            if (pred[i] == desired) continue;
            const Record& r = ws.records[static_cast<std::size_t>(ws.test[i])];
            Query q;
            for (const auto& a : synth.schema.attributes()) q.values.emplace_back(r[ws.schema.index_of(a.name)]);
            pool.push_back(std::move(q));
        }
        if (pool.empty()) throw UserError("no held-out query lies outside the desired class");
        Table per_query;
        per_query.columns = {"query", "validity", "avg_distance"};
        double valid = 0, dist = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const auto set = generate(synth, pool[i], config.eval_samples, derive_seed(config.seed, i));
            const double v = validity_rate(set), d = avg_euclid_distance(set);
            valid += v;
            dist += d;
            per_query.rows.push_back({std::to_string(i), fmt(v), fmt(d, "%.6f")});
        }
        valid /= static_cast<double>(pool.size());
        dist /= static_cast<double>(pool.size());
        write_csv(config.workdir / "validity.csv", per_query);
        log << "queries " << pool.size() << " x " << config.eval_samples << ": validity " << fmt(valid)
            << ", avg distance " << fmt(dist) << "\n";

        const auto latency = latency_profile(synth, pool, derive_seed(config.seed, "latency"));
        write_csv(config.workdir / "latency.csv", latency_table(latency));
        for (const auto& p : latency)
            log << "latency " << p.queries << " queries: " << fmt(p.mean_seconds * 1e3, "%.3f") << " ms/query (sd "
                << fmt(p.std_seconds * 1e3, "%.3f") << ")\n";
        wrote = true;
    }

    if (synth.schema.contains(ws.schema.label())) {
        const Matrix synthesized =
            generate_unconditional(synth, static_cast<int>(ws.records.size()), derive_seed(config.seed, "evaluate.synth"))
                .encoded;
        CompatibilityOptions options;
        options.rounds = config.rounds;
        options.train_fraction = config.train_fraction;
        options.positive = desired_label(config, ws.schema);
        options.mlp = config.mlp;
        options.forest = config.forest;
        const auto report = model_compatibility(ws.schema, ws.encoded, synthesized, config.kinds,
                                                derive_seed(config.seed, "evaluate.rounds"), options);
        write_csv(config.workdir / "compatibility.csv", report.to_table());
        write_file(config.workdir / "compatibility.txt", report.to_text());
        log << report.to_text();
        wrote = true;
    }
    if (!wrote) throw UserError("model has neither a deployed classifier nor the label attribute; nothing to evaluate");
}

void cmd_causal(const RunConfig& config, std::ostream& log) {
    const Workspace ws = load_workspace(config);
    const TrainedSynthesizer synth = load_model(config);
    auto pairs = config.pairs;
    if (pairs.empty())
        if (const auto* modular = dynamic_cast<const ModularGenerator*>(synth.generator.get()))
            pairs = modular->graph().edges;
    if (pairs.empty()) throw UserError("no causal pairs: set [causal] pairs or train with a graph");

    const auto generated =
        generate_unconditional(synth, config.causal_samples, derive_seed(config.seed, "causal")).rows;
    std::vector<int> pick = ws.train;
    Rng rng(derive_seed(config.seed, "causal.original"));
    std::shuffle(pick.begin(), pick.end(), rng);
    if (pick.size() > static_cast<std::size_t>(config.causal_samples)) pick.resize(static_cast<std::size_t>(config.causal_samples));
    std::vector<Record> original;
    for (int i : pick) original.push_back(ws.records[static_cast<std::size_t>(i)]);

    Table out;
    for (const auto& [a, b] : pairs) {
        for (auto method : {CausalMethod::Anm, CausalMethod::Cds}) {
            for (const char* source : {"original", "synthesized"}) {
                const bool orig = std::string_view(source) == "original";
                const auto& rows = orig ? original : generated;
                const auto& schema = orig ? ws.schema : synth.schema;
                const auto score = causation_score(numeric_column(rows, schema, a), numeric_column(rows, schema, b),
                                                   method, 1.0, a, b);
                Table t = causation_table(std::span(&score, 1));
                if (out.columns.empty()) {
                    out.columns = t.columns;
                    out.columns.insert(out.columns.begin(), "source");
                }
                t.rows.front().insert(t.rows.front().begin(), source);
                out.rows.push_back(t.rows.front());
                log << source << " " << method_name(method) << " " << a << "->" << b << ": tau_c " << fmt(score.tau)
                    << " verdict " << verdict_text(score.verdict, a, b) << "\n";
            }
        }
    }
    fs::create_directories(config.workdir);
    write_csv(config.workdir / "causal.csv", out);
    log << "wrote " << (config.workdir / "causal.csv").string() << "\n";
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e)) return 3;
    return 2;
}

}  // namespace mcs
