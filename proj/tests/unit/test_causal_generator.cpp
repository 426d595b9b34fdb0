#include "mcs/causal_generator.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mcs;

namespace {

struct Inputs {
    Matrix z, q, gumbel;
};

Inputs inputs(const ModularGenerator& gen, int rows, std::uint64_t seed) {
    Rng rng(seed);
    Inputs in;
    in.z = ad::normal_noise(rng, rows, gen.latent_dim());
    // Random queries: one-hot categorical blocks, small continuous entries.
    in.q = 0.3 * ad::normal_noise(rng, rows, gen.schema().width());
    in.gumbel = ad::uniform_noise(rng, rows, gen.schema().width());
    return in;
}

CausalGraph graph_of(std::initializer_list<std::pair<const char*, const char*>> edges) {
    CausalGraph g;
    for (const auto& [a, b] : edges) g.add_edge(a, b);
    return g;
}

bool same_block(const Matrix& x, const Matrix& y, const Block& b) {
    return x.middleCols(b.offset, b.width) == y.middleCols(b.offset, b.width);
}

}  // namespace

TEST_SUITE("causal_generator") {
    TEST_CASE("validate_dag examples") {
        CHECK(validate_dag(graph_of({{"A", "B"}})) == std::vector<std::string>{"A", "B"});
        CHECK(validate_dag(graph_of({{"B", "A"}})) == std::vector<std::string>{"B", "A"});
        CHECK_THROWS_AS(validate_dag(graph_of({{"A", "B"}, {"B", "A"}})), UserError);
        try {
            validate_dag(graph_of({{"x", "y"}, {"y", "z"}, {"z", "y"}}));
            FAIL("cycle accepted");
        } catch (const UserError& e) {
            const std::string msg = e.what();
            CHECK(msg.find('y') != std::string::npos);
            CHECK(msg.find('z') != std::string::npos);
        }
        CausalGraph none;
        for (const char* v : {"c", "a", "b"}) none.add_vertex(v);
        CHECK(validate_dag(none) == std::vector<std::string>{"a", "b", "c"});
        CHECK_THROWS_AS(validate_dag(CausalGraph{}), UserError);
        CHECK_THROWS_AS(graph_of({{"a", "a"}}), UserError);
    }

    TEST_CASE("graph text format") {
        const auto g = CausalGraph::parse("# domain knowledge\n\neducation -> age\n  age->hours  \n");
        CHECK(g.edges.size() == 2);
        CHECK(g.parents("age") == std::vector<std::string>{"education"});
        CHECK(g.children("age") == std::vector<std::string>{"hours"});
        const auto desc = g.descendants("education");
        CHECK(desc.size() == 2);
        CHECK(CausalGraph::parse(g.to_text()).edges == g.edges);
        CHECK_THROWS_AS(CausalGraph::parse("a => b\n"), UserError);
        CHECK_THROWS_AS(CausalGraph::parse(" -> b\n"), UserError);
        CHECK_THROWS_AS(CausalGraph::load("no/such/graph.txt"), UserError);

        const auto path = std::filesystem::temp_directory_path() / "mcs_graph_test.txt";
        std::ofstream(path) << "a -> b\n";
        CHECK(CausalGraph::load(path).edges.size() == 1);
        std::filesystem::remove(path);
    }

    TEST_CASE("wiring: module widths and noise partition") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        Rng rng(1);
        const ModularGenerator none(schema, CausalGraph{}, 24, 16, 0.5, rng);
        const int per = ModularGenerator::noise_dim(24, 3);
        CHECK(per == 8);
        CHECK(none.latent_dim() == 3 * per);
        int total = 0;
        for (int a = 0; a < 3; ++a) {
            CHECK(none.parents(a).empty());
            CHECK(none.module_input_width(a) == per + schema.width());
            CHECK(none.noise_block(a).offset == total);
            total += none.noise_block(a).width;
        }
        CHECK(total == none.latent_dim());
        CHECK(ModularGenerator::noise_dim(128, 4) == 32);

        const ModularGenerator chain(schema, graph_of({{"color", "a"}}), 24, 16, 0.5, rng);
        const int a = schema.index_of("a"), color = schema.index_of("color");
        CHECK(chain.parents(a) == std::vector<int>{color});
        CHECK(chain.module_input_width(a) == schema.attribute(color).width() + per + schema.width());
        const auto& order = chain.order();
        CHECK(std::find(order.begin(), order.end(), color) < std::find(order.begin(), order.end(), a));

        CHECK_THROWS_AS(ModularGenerator(schema, graph_of({{"color", "nope"}}), 24, 16, 0.5, rng), UserError);
        CHECK_THROWS_AS(ModularGenerator(schema, graph_of({{"a", "b"}, {"b", "a"}}), 24, 16, 0.5, rng), UserError);
    }

    TEST_CASE("forward is deterministic and checks the partition") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        Rng rng(2);
        const ModularGenerator gen(schema, graph_of({{"a", "b"}}), 24, 16, 0.5, rng);
        const Inputs in = inputs(gen, 20, 3);
        const Matrix x = modular_forward(gen, in.z, in.q, in.gumbel);
        CHECK(x == modular_forward(gen, in.z, in.q, in.gumbel));
        CHECK(x.cols() == schema.width());
        for (Eigen::Index r = 0; r < x.rows(); ++r) CHECK(decode_instance(x.row(r), schema, true).size() == 3);
        CHECK_THROWS_AS(modular_forward(gen, in.z.leftCols(10), in.q, in.gumbel), ShapeError);
        CHECK_THROWS_AS(resample_noise(gen, in.z.leftCols(10), "a", 1), ShapeError);
        CHECK_THROWS(resample_noise(gen, in.z, "nope", 1));
    }

    TEST_CASE("resample_noise touches one partition") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        Rng rng(3);
        const ModularGenerator gen(schema, CausalGraph{}, 24, 16, 0.5, rng);
        const Inputs in = inputs(gen, 7, 4);
        const Matrix z2 = resample_noise(gen, in.z, "b", 9);
        CHECK(z2 == resample_noise(gen, in.z, "b", 9));
        const Block nb = gen.noise_block(schema.index_of("b"));
        for (int c = 0; c < gen.latent_dim(); ++c) {
            const bool inside = c >= nb.offset && c < nb.offset + nb.width;
            CHECK((z2.col(c) == in.z.col(c)) == !inside);
        }
    }

    TEST_CASE("structural locality: non-descendants stay bit-identical") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        Rng rng(5);
        for (const auto& graph : {CausalGraph{}, graph_of({{"a", "b"}}), graph_of({{"color", "a"}, {"a", "b"}})}) {
            const ModularGenerator gen(schema, graph, 24, 16, 0.5, rng);
            for (const auto& s : schema.attributes()) {
                const auto desc = graph.descendants(s.name);
                int changed_self = 0;
                for (int t = 0; t < 100; ++t) {
                    const Inputs in = inputs(gen, 1, 100 + static_cast<std::uint64_t>(t));
                    const Matrix before = modular_forward(gen, in.z, in.q, in.gumbel);
                    const Matrix after =
                        modular_forward(gen, resample_noise(gen, in.z, s.name, 7 + static_cast<std::uint64_t>(t)), in.q,
                                        in.gumbel);
                    changed_self += !same_block(before, after, schema.block(schema.index_of(s.name)));
                    for (const auto& other : schema.attributes()) {
                        if (other.name == s.name || std::find(desc.begin(), desc.end(), other.name) != desc.end())
                            continue;
                        CHECK(same_block(before, after, schema.block(schema.index_of(other.name))));
                    }
                }
                CHECK(changed_self > 0);
            }
        }
    }

    TEST_CASE("swapping modules of isolated twins swaps their outputs") {
        Table t;
        t.columns = {"p", "q2"};
        for (int i = 0; i < 30; ++i) t.rows.push_back({i % 3 ? "x" : "y", i % 2 ? "x" : "y"});
        const auto cfg = parse_schema_config(
            "[p]\nkind = categorical\ncategories = x, y\n[q2]\nkind = categorical\ncategories = x, y\n");
        const DataSchema schema = fit_schema(t, cfg);
        Rng rng(6);
        ModularGenerator gen(schema, CausalGraph{}, 16, 8, 0.5, rng);
        ModularGenerator swapped = gen;
        auto& store = swapped.params();
        for (const char* layer : {".l1.w", ".l1.b", ".l2.w", ".l2.b"}) {
            const auto a = *store.find(std::string("m.p") + layer);
            const auto b = *store.find(std::string("m.q2") + layer);
            std::swap(store.value(a), store.value(b));
        }
        Inputs in = inputs(gen, 50, 8);
        in.q.setZero();
        const Matrix x = modular_forward(gen, in.z, in.q, in.gumbel);
        Matrix z = in.z;
        const Block n0 = gen.noise_block(0), n1 = gen.noise_block(1);
        z.middleCols(n0.offset, n0.width) = in.z.middleCols(n1.offset, n1.width);
        z.middleCols(n1.offset, n1.width) = in.z.middleCols(n0.offset, n0.width);
        Matrix gumbel = in.gumbel;
        gumbel.leftCols(2) = in.gumbel.rightCols(2);
        gumbel.rightCols(2) = in.gumbel.leftCols(2);
        const Matrix y = modular_forward(swapped, z, in.q, gumbel);
        CHECK(y.leftCols(2) == x.rightCols(2));
        CHECK(y.rightCols(2) == x.leftCols(2));
    }

    TEST_CASE("no-edge graph equals independent per-attribute modules") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        Rng rng(9);
        const ModularGenerator gen(schema, CausalGraph{}, 24, 16, 0.5, rng);
        const Inputs in = inputs(gen, 40, 10);
        const Matrix joint = modular_forward(gen, in.z, in.q, in.gumbel);
        const auto& store = gen.params();
        for (int a = 0; a < schema.size(); ++a) {
            const auto& name = schema.attribute(a).name;
            const Dense l1 = find_dense(store, "m." + name + ".l1"), l2 = find_dense(store, "m." + name + ".l2");
            const Block nb = gen.noise_block(a), b = schema.block(a);
            Matrix input(in.z.rows(), nb.width + schema.width());
            input << in.z.middleCols(nb.offset, nb.width), in.q;
            const Matrix logits = apply_plain(store, l2, apply_plain(store, l1, input).cwiseMax(0.0));
            ad::Graph g;
            const Matrix alone = g.value(attribute_head(g, g.input("l", logits), schema.attribute(a), gen.tau(),
                                                        in.gumbel.middleCols(b.offset, b.width)));
            CHECK(alone == joint.middleCols(b.offset, b.width));
        }
    }

    TEST_CASE("modular generator persistence") {
        const DataSchema schema = mcs::testing::mixed_schema(1);
        for (int latent : {20, 128}) {  // 128 gives blocks wider than the minimum
            CAPTURE(latent);
            Rng rng(11);
            const ModularGenerator gen(schema, graph_of({{"color", "b"}}), latent, 16, 0.5, rng);
            Container c;
            gen.save(c, "g");
            const auto back = ModularGenerator::load(Container::parse(c.serialize()), "g", schema);
            CHECK(back->graph().edges == gen.graph().edges);
            CHECK(back->latent_dim() == gen.latent_dim());
            const Inputs in = inputs(gen, 5, 12);
            CHECK(modular_forward(*back, in.z, in.q, in.gumbel) == modular_forward(gen, in.z, in.q, in.gumbel));
        }
    }
}
