#include "mcs/synthesizer.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace mcs {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "latent=" << latent << "\nhidden=" << hidden << "\nmodule_hidden=" << module_hidden << "\nbatch=" << batch
       << "\nepochs=" << epochs << "\nlearning_rate=" << fmt(learning_rate) << "\nbeta1=" << fmt(beta1)
       << "\nbeta2=" << fmt(beta2) << "\nlambda_ce=" << fmt(lambda_ce) << "\nlambda_dist=" << fmt(lambda_dist)
       << "\ntau=" << fmt(tau) << "\ncounterfactual=" << (counterfactual ? 1 : 0) << "\ndesired=" << desired
       << "\ngenerator_loss=" << (generator_loss == GeneratorLoss::Saturating ? "saturating" : "nonsaturating") << '\n';
    return os.str();
}

TrainConfig TrainConfig::parse(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("training config lacks '") + key + "'");
        return it->second;
    };
    TrainConfig c;
    c.latent = std::stoi(get("latent"));
    c.hidden = std::stoi(get("hidden"));
    c.module_hidden = std::stoi(get("module_hidden"));
    c.batch = std::stoi(get("batch"));
    c.epochs = std::stoi(get("epochs"));
    c.learning_rate = std::stod(get("learning_rate"));
    c.beta1 = std::stod(get("beta1"));
    c.beta2 = std::stod(get("beta2"));
    c.lambda_ce = std::stod(get("lambda_ce"));
    c.lambda_dist = std::stod(get("lambda_dist"));
    c.tau = std::stod(get("tau"));
    c.counterfactual = get("counterfactual") == "1";
    c.desired = get("desired");
    c.generator_loss = get("generator_loss") == "saturating" ? GeneratorLoss::Saturating : GeneratorLoss::NonSaturating;
    return c;
}

int TrainedSynthesizer::desired_class() const {
    if (!classifier) throw UserError("synthesizer has no classifier");
    return classifier->class_index(config.desired);
}

const Classifier& TrainedSynthesizer::gradient_model() const {
    if (surrogate) return *surrogate;
    if (!classifier) throw UserError("synthesizer has no classifier");
    return *classifier;
}

CounterfactualTerms counterfactual_loss(ad::Graph& g, ad::NodeId generated, const Matrix& queries, const Matrix& masks,
                                        const Vector& weights, int desired, const Classifier& f,
                                        const DataSchema& schema, double lambda_ce, double lambda_dist) {
    const auto& x = g.value(generated);
    if (x.cols() != schema.width() || queries.cols() != schema.width() || masks.cols() != schema.width())
        throw ShapeError("counterfactual_loss: width does not match schema");
    if (queries.rows() != x.rows() || masks.rows() != x.rows() || weights.size() != x.rows())
        throw ShapeError("counterfactual_loss: batch rows are not aligned");
    Matrix target = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(f.classes().size()));
    target.col(desired).setOnes();
    auto ce = g.weighted_sum(g.cross_entropy(f.proba(g, generated, schema), target), weights);
    auto q = g.constant(queries);
    auto dist = g.weighted_sum(g.squared_distance(generated, q, &masks), weights);
    auto total = g.add(g.scale(ce, lambda_ce), g.scale(dist, lambda_dist));
    return {total, ce, dist};
}

TrainedSynthesizer train(const DataSchema& schema, const Matrix& encoded, const QuerySource& source,
                         const TrainConfig& config, const TrainInputs& inputs, std::uint64_t seed) {
    if (encoded.rows() == 0) throw UserError("training data is empty");
    if (encoded.cols() != schema.width()) throw ShapeError("training data width does not match schema");
    if (config.batch < 1 || config.epochs < 0 || config.latent < 1 || config.hidden < 1 || !(config.learning_rate > 0))
        throw UserError("training config values must be positive");

    TrainedSynthesizer s;
    s.schema = schema;
    s.config = config;
    s.source = source.name();
    if (inputs.classifier) s.classifier = *inputs.classifier;
    if (inputs.surrogate) s.surrogate = *inputs.surrogate;
    if (config.counterfactual) {
        if (!s.classifier) throw UserError("counterfactual training needs a classifier");
        s.desired_class();
        if (!s.gradient_model().differentiable()) throw UserError("forest classifiers need a distilled surrogate");
    }

    Rng init(derive_seed(seed, "init"));
    if (inputs.graph && !inputs.graph->empty())
        s.generator = std::make_shared<ModularGenerator>(schema, *inputs.graph, config.latent, config.module_hidden,
                                                         config.tau, init);
    else
        s.generator = std::make_shared<FlatGenerator>(schema, config.latent, config.hidden, config.tau, init);
    s.discriminator = Discriminator(schema.width(), config.hidden, init);

    const ad::AdamConfig adam_cfg{config.learning_rate, config.beta1, config.beta2, 1e-8};
    ad::Adam adam_g(s.generator->params(), adam_cfg);
    ad::Adam adam_d(s.discriminator.params(), adam_cfg);
    GeneratorNet& gen = *s.generator;
    const int latent = gen.latent_dim();
    const int desired = config.counterfactual ? s.desired_class() : 0;

    Rng rng(derive_seed(seed, "train"));
    const int per_epoch = static_cast<int>((encoded.rows() + config.batch - 1) / config.batch);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLog entry;
        entry.epoch = epoch;
        for (int it = 0; it < per_epoch; ++it) {
            QueryBatch qb = source.draw(config.batch, rng);
            const auto b = static_cast<Eigen::Index>(qb.rows.size());
            Matrix real(b, schema.width());
            for (Eigen::Index i = 0; i < b; ++i) real.row(i) = encoded.row(qb.rows[i]);
            Matrix z = ad::normal_noise(rng, b, latent);
            Matrix noise = ad::uniform_noise(rng, b, schema.width());

            ad::Graph g;
            auto zn = g.input("z", std::move(z));
            auto qn = g.input("q", qb.queries);
            auto fake = gen.forward_train(g, zn, qn, noise);

            {
                ad::Graph gd;
                auto qd = gd.input("q", qb.queries);
                auto lr = s.discriminator.logit_train(gd, gd.input("x", real), qd);
                auto lf = s.discriminator.logit_train(gd, gd.input("fake", g.value(fake)), qd);
                auto loss = gd.scale(gd.add(gd.weighted_sum(gd.log_sigmoid(lr), qb.weights),
                                            gd.weighted_sum(gd.log_sigmoid(gd.scale(lf, -1.0)), qb.weights)),
                                     -1.0);
                const double v = gd.value(loss)(0, 0);
                if (!std::isfinite(v))
                    throw NumericalError("discriminator loss is not finite at epoch " + std::to_string(epoch));
                entry.d_loss += v / per_epoch;
                gd.backward(loss);
                adam_d.step();
            }

            auto lf = s.discriminator.logit(g, fake, qn);
            ad::NodeId adv = config.generator_loss == GeneratorLoss::Saturating
                                 ? g.weighted_sum(g.log_sigmoid(g.scale(lf, -1.0)), qb.weights)
                                 : g.scale(g.weighted_sum(g.log_sigmoid(lf), qb.weights), -1.0);
            ad::NodeId loss = adv;
            if (config.counterfactual) {
                auto cf = counterfactual_loss(g, fake, qb.queries, qb.masks, qb.weights, desired, s.gradient_model(),
                                              schema, config.lambda_ce, config.lambda_dist);
                entry.cf_loss += g.value(cf.total)(0, 0) / per_epoch;
                loss = g.add(adv, cf.total);
            }
            const double gv = g.value(adv)(0, 0);
            if (!std::isfinite(gv) || !std::isfinite(g.value(loss)(0, 0)))
                throw NumericalError("generator loss is not finite at epoch " + std::to_string(epoch));
            entry.g_loss += gv / per_epoch;
            g.backward(loss);
            adam_g.step();
        }
        s.log.push_back(entry);
        if (inputs.on_epoch) inputs.on_epoch(entry);
    }
    return s;
}

// ---------------------------------------------------------------- generation

CounterfactualSet generate(const TrainedSynthesizer& synth, const Query& query, int n, std::uint64_t seed) {
    return generate(synth, make_query(query, synth.schema), n, seed);
}

CounterfactualSet generate(const TrainedSynthesizer& synth, const EncodedQuery& query, int n, std::uint64_t seed) {
    if (n < 1) throw UserError("sample count must be at least 1");
    if (query.vector.size() != synth.schema.width()) throw UserError("query does not match the synthesizer schema");
    const auto& schema = synth.schema;
    Rng rng(seed);
    Matrix z = ad::normal_noise(rng, n, synth.generator->latent_dim());
    Matrix noise = ad::uniform_noise(rng, n, schema.width());
    Matrix q = query.vector.replicate(n, 1);
    Matrix x = synth.generator->sample(z, q, noise);
    harden_blocks(x, schema);

    CounterfactualSet out;
    out.query = query;
    out.encoded.resize(n, schema.width());
    for (int i = 0; i < n; ++i) {
        out.rows.push_back(decode_instance(x.row(i), schema, true));
        out.encoded.row(i) = encode_instance(out.rows.back(), schema);
        const RowVector d = (out.encoded.row(i) - query.vector).cwiseProduct(query.dim_mask);
        out.distance.push_back(d.norm());
    }
    if (synth.classifier && synth.config.counterfactual) {
        out.proba = synth.classifier->predict_proba(out.encoded, schema);
        const int desired = synth.desired_class();
        for (int i = 0; i < n; ++i) {
            Eigen::Index k;
            out.proba.row(i).maxCoeff(&k);
            out.valid.push_back(k == desired);
        }
    }
    return out;
}

CounterfactualSet generate_unconditional(const TrainedSynthesizer& synth, int n, std::uint64_t seed) {
    EncodedQuery q = make_query(Query{std::vector<std::optional<Value>>(synth.schema.size())}, synth.schema);
    CounterfactualSet out = generate(synth, q, n, seed);
    out.valid.clear();
    out.proba.resize(0, 0);
    return out;
}

Table training_log_table(const std::vector<EpochLog>& log) {
    Table t;
    t.columns = {"epoch", "d_loss", "g_loss", "cf_loss"};
    for (const auto& e : log) t.rows.push_back({std::to_string(e.epoch), fmt(e.d_loss), fmt(e.g_loss), fmt(e.cf_loss)});
    return t;
}

// ---------------------------------------------------------------- persistence

std::string TrainedSynthesizer::serialize() const {
    Container c;
    c.put_text("schema", schema.to_json());
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(schema.hash()));
    c.put_text("schema_hash", hash);
    c.put_text("config", config.to_text());
    c.put_text("source", source);
    c.put_text("plan", plan);
    Matrix lg(static_cast<Eigen::Index>(log.size()), 4);
    for (std::size_t i = 0; i < log.size(); ++i) lg.row(i) << log[i].epoch, log[i].d_loss, log[i].g_loss, log[i].cf_loss;
    c.put("log", lg);
    c.put_text("generator/kind", generator->kind());
    generator->save(c, "generator");
    discriminator.save(c, "discriminator");
    if (classifier) classifier->save(c, "classifier");
    if (surrogate) surrogate->save(c, "surrogate");
    return c.serialize();
}

TrainedSynthesizer TrainedSynthesizer::parse(std::string_view bytes) {
    Container c = Container::parse(bytes);
    TrainedSynthesizer s;
    s.schema = DataSchema::from_json(c.text("schema"));
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(s.schema.hash()));
    if (c.text("schema_hash") != hash) throw FormatError("embedded schema hash does not match the schema");
    s.config = TrainConfig::parse(c.text("config"));
    s.source = c.text("source");
    s.plan = c.text("plan");
    const Matrix& lg = c.matrix("log");
    for (Eigen::Index i = 0; i < lg.rows(); ++i)
        s.log.push_back({static_cast<int>(lg(i, 0)), lg(i, 1), lg(i, 2), lg(i, 3)});
    const auto& kind = c.text("generator/kind");
    if (kind == "flat")
        s.generator = FlatGenerator::load(c, "generator", s.schema);
    else if (kind == "modular")
        s.generator = ModularGenerator::load(c, "generator", s.schema);
    else
        throw FormatError("unknown generator kind: " + kind);
    s.discriminator = Discriminator::load(c, "discriminator");
    if (c.has("classifier/kind")) s.classifier = Classifier::load(c, "classifier");
    if (c.has("surrogate/kind")) s.surrogate = Classifier::load(c, "surrogate");
    return s;
}

void TrainedSynthesizer::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TrainedSynthesizer TrainedSynthesizer::load(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace mcs
