#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "heman/graph.hpp"

using namespace heman;

namespace {

Node node(OpKind op, std::string name, std::vector<std::string> in,
          std::vector<std::string> out,
          std::map<std::string, AttrValue> attrs = {}) {
    Node n;
    n.op = op;
    n.name = std::move(name);
    n.inputs = std::move(in);
    n.outputs = std::move(out);
    n.attrs = std::move(attrs);
    return n;
}

ModelGraph conv_graph(Shape in_shape, Shape w_shape, std::vector<std::int64_t> strides,
                      std::vector<std::int64_t> pads, std::int64_t group) {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{in_shape};
    g.initializers["w"] = Tensor::zeros(w_shape);
    g.nodes.push_back(node(OpKind::Conv, "c", {"x", "w"}, {"y"},
                           {{"strides", strides},
                            {"pads", pads},
                            {"kernel_shape", std::vector<std::int64_t>{w_shape[2], w_shape[3]}},
                            {"group", group}}));
    return g;
}

}  // namespace

TEST_CASE("op kind names round-trip") {
    for (OpKind op : {OpKind::Add, OpKind::Mul, OpKind::MatMul, OpKind::Gemm, OpKind::Conv,
                      OpKind::AveragePool, OpKind::Relu, OpKind::Pad, OpKind::Flatten,
                      OpKind::Reshape}) {
        auto back = op_kind_from_string(op_kind_name(op));
        REQUIRE(back.has_value());
        CHECK(*back == op);
    }
    CHECK_FALSE(op_kind_from_string("Softmax").has_value());
}

TEST_CASE("attr accessors fall back when absent") {
    Node n = node(OpKind::Conv, "c", {}, {}, {{"group", std::int64_t{4}}});
    CHECK(n.attr_int("group", 1) == 4);
    CHECK(n.attr_int("missing", 7) == 7);
    CHECK(n.attr_float("alpha", 1.5) == doctest::Approx(1.5));
    CHECK(n.attr_ints("strides", {1, 1}) == std::vector<std::int64_t>{1, 1});
}

TEST_CASE("check_structure rejects duplicate producers and dangling inputs") {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"b"};
    g.edges["x"] = TensorSpec{{1, 4}};
    g.nodes.push_back(node(OpKind::Relu, "r1", {"x"}, {"a"}));
    g.nodes.push_back(node(OpKind::Relu, "r2", {"x"}, {"a"}));
    CHECK_THROWS_AS(check_structure(g), GraphError);

    g.nodes.pop_back();
    g.nodes.push_back(node(OpKind::Relu, "r2", {"nowhere"}, {"b"}));
    CHECK_THROWS_AS(check_structure(g), GraphError);
}

TEST_CASE("topo_order rejects cycles and self loops") {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"b"};
    g.nodes.push_back(node(OpKind::Add, "n1", {"x", "b"}, {"a"}));
    g.nodes.push_back(node(OpKind::Relu, "n2", {"a"}, {"b"}));
    CHECK_THROWS_AS(topo_order(g), GraphError);

    ModelGraph s;
    s.graph_inputs = {"x"};
    s.graph_outputs = {"y"};
    s.nodes.push_back(node(OpKind::Add, "loop", {"x", "y"}, {"y"}));
    CHECK_THROWS_AS(topo_order(s), GraphError);
}

TEST_CASE("topo_order puts every producer before its consumers on random DAGs") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        ModelGraph g;
        g.graph_inputs = {"e0"};
        int n_nodes = 2 + static_cast<int>(rng() % 10);
        for (int i = 0; i < n_nodes; ++i) {
            std::string out = "e" + std::to_string(i + 1);
            // pick 1-2 existing edges as inputs
            std::vector<std::string> ins = {"e" + std::to_string(rng() % (i + 1))};
            if (rng() % 2) ins.push_back("e" + std::to_string(rng() % (i + 1)));
            g.nodes.push_back(node(ins.size() == 2 ? OpKind::Add : OpKind::Relu,
                                   "n" + std::to_string(i), ins, {out}));
        }
        g.graph_outputs = {"e" + std::to_string(n_nodes)};
        // shuffle node order
        std::shuffle(g.nodes.begin(), g.nodes.end(), rng);
        auto order = topo_order(g);
        REQUIRE(order.size() == g.nodes.size());
        std::map<std::string, std::size_t> produced_at;
        for (std::size_t pos = 0; pos < order.size(); ++pos)
            for (const auto& out : g.nodes[order[pos]].outputs) produced_at[out] = pos;
        for (std::size_t pos = 0; pos < order.size(); ++pos)
            for (const auto& in : g.nodes[order[pos]].inputs)
                if (produced_at.count(in)) CHECK(produced_at[in] < pos);
    }
}

TEST_CASE("shape inference: Conv") {
    auto g = infer_shapes(conv_graph({1, 1, 32, 32}, {4, 1, 5, 5}, {3, 3}, {0, 0, 0, 0}, 1));
    CHECK(g.edge_spec("y").shape == Shape{1, 4, 10, 10});

    auto gp = infer_shapes(conv_graph({1, 2, 8, 8}, {3, 2, 3, 3}, {1, 1}, {1, 1, 1, 1}, 1));
    CHECK(gp.edge_spec("y").shape == Shape{1, 3, 8, 8});

    auto gg = infer_shapes(conv_graph({1, 320, 7, 7}, {320, 1, 7, 7}, {1, 1}, {0, 0, 0, 0}, 320));
    CHECK(gg.edge_spec("y").shape == Shape{1, 320, 1, 1});
}

TEST_CASE("shape inference: pool, gemm, matmul, broadcast add") {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"out"};
    g.edges["x"] = TensorSpec{{1, 6, 28, 28}};
    g.initializers["w"] = Tensor::zeros({128, 1176});
    g.initializers["bias"] = Tensor::zeros({1, 6, 1, 1});
    g.nodes.push_back(node(OpKind::AveragePool, "p", {"x"}, {"pool"},
                           {{"kernel_shape", std::vector<std::int64_t>{2, 2}},
                            {"strides", std::vector<std::int64_t>{2, 2}}}));
    g.nodes.push_back(node(OpKind::Add, "a", {"pool", "bias"}, {"sum"}));
    g.nodes.push_back(node(OpKind::Flatten, "f", {"sum"}, {"flat"},
                           {{"axis", std::int64_t{1}}}));
    g.nodes.push_back(node(OpKind::Gemm, "g", {"flat", "w"}, {"out"},
                           {{"transB", std::int64_t{1}}}));
    g = infer_shapes(std::move(g));
    CHECK(g.edge_spec("pool").shape == Shape{1, 6, 14, 14});
    CHECK(g.edge_spec("sum").shape == Shape{1, 6, 14, 14});
    CHECK(g.edge_spec("flat").shape == Shape{1, 1176});
    CHECK(g.edge_spec("out").shape == Shape{1, 128});

    ModelGraph m;
    m.graph_inputs = {"x"};
    m.graph_outputs = {"y"};
    m.edges["x"] = TensorSpec{{1, 4}};
    m.initializers["w"] = Tensor::zeros({4, 3});
    m.nodes.push_back(node(OpKind::MatMul, "mm", {"x", "w"}, {"y"}));
    m = infer_shapes(std::move(m));
    CHECK(m.edge_spec("y").shape == Shape{1, 3});
}

TEST_CASE("shape inference: Pad, Reshape") {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 2, 5, 5}};
    g.initializers["pads"] =
        Tensor({8}, {0, 0, 2, 2, 0, 0, 2, 2});
    g.initializers["target"] = Tensor({3}, {1, -1, 0});
    g.nodes.push_back(node(OpKind::Pad, "pad", {"x", "pads"}, {"padded"}));
    g.nodes.push_back(node(OpKind::Reshape, "rs", {"padded", "target"}, {"y"}));
    g = infer_shapes(std::move(g));
    CHECK(g.edge_spec("padded").shape == Shape{1, 2, 9, 9});
    CHECK(g.edge_spec("y").shape == Shape{1, 18, 9});
}

TEST_CASE("validate_supported flags unsupported attribute values") {
    auto g = conv_graph({1, 1, 8, 8}, {2, 1, 3, 3}, {1, 1}, {0, 0, 0, 0}, 1);
    g.nodes[0].attrs["dilations"] = std::vector<std::int64_t>{2, 2};
    auto report = validate_supported(g);
    REQUIRE_FALSE(report.ok());
    CHECK(report.items[0].reason.find("dilation") != std::string::npos);

    auto g2 = conv_graph({1, 1, 8, 8}, {2, 1, 3, 3}, {1, 1}, {0, 0, 0, 0}, 1);
    g2.nodes[0].attrs["auto_pad"] = std::string("SAME_UPPER");
    CHECK_FALSE(validate_supported(g2).ok());

    ModelGraph p;
    p.graph_inputs = {"x"};
    p.graph_outputs = {"y"};
    p.edges["x"] = TensorSpec{{1, 2}};
    p.initializers["pads"] = Tensor({4}, {0, 1, 0, 1});
    p.initializers["cv"] = Tensor({1}, {3.0});
    p.nodes.push_back(node(OpKind::Pad, "pad", {"x", "pads", "cv"}, {"y"}));
    auto pr = validate_supported(p);
    REQUIRE_FALSE(pr.ok());
    CHECK(pr.items[0].reason.find("pad") != std::string::npos);
}
