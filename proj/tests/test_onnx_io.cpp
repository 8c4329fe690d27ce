#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "heman/fixtures.hpp"
#include "heman/onnx_io.hpp"

using namespace heman;

TEST_CASE("fixture graphs survive an ONNX round-trip bit-exactly") {
    for (const auto& name : fixture_names()) {
        CAPTURE(name);
        Fixture f = build_fixture(name, 5, 1);
        std::string bytes = serialize_model(f.graph);
        ModelGraph back = infer_shapes(load_model(bytes));

        REQUIRE(back.nodes.size() == f.graph.nodes.size());
        for (std::size_t i = 0; i < back.nodes.size(); ++i) {
            CHECK(back.nodes[i].op == f.graph.nodes[i].op);
            CHECK(back.nodes[i].inputs == f.graph.nodes[i].inputs);
            CHECK(back.nodes[i].outputs == f.graph.nodes[i].outputs);
        }
        REQUIRE(back.initializers.size() == f.graph.initializers.size());
        for (const auto& [iname, t] : f.graph.initializers) {
            REQUIRE(back.initializers.count(iname));
            const Tensor& bt = back.initializers.at(iname);
            REQUIRE(bt.shape == t.shape);
            // weights are generated through a float cast, so f32 storage is lossless
            for (std::size_t k = 0; k < t.data.size(); ++k)
                REQUIRE(bt.data[k] == t.data[k]);
        }
        for (const auto& [edge, spec] : f.graph.edges)
            CHECK(back.edge_spec(edge).shape == spec.shape);
    }
}

TEST_CASE("serializer keeps Reshape / Pad metadata tensors integral") {
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 2, 3, 3}};
    g.initializers["pads"] = Tensor({8}, {0, 0, 1, 1, 0, 0, 1, 1});
    Node n;
    n.op = OpKind::Pad;
    n.name = "p";
    n.inputs = {"x", "pads"};
    n.outputs = {"y"};
    g.nodes.push_back(n);
    ModelGraph back = infer_shapes(load_model(serialize_model(g)));
    CHECK(back.edge_spec("y").shape == Shape{1, 2, 5, 5});
    CHECK(back.initializers.at("pads").data == g.initializers.at("pads").data);
}

TEST_CASE("loader rejects what the toolset cannot honor") {
    Fixture f = build_fixture("cryptonets", 5, 1);
    std::string bytes = serialize_model(f.graph);

    SUBCASE("garbage bytes") {
        CHECK_THROWS_AS(load_model("not a protobuf"), ParseError);
    }
    SUBCASE("truncated stream") {
        CHECK_THROWS_AS(load_model(bytes.substr(0, bytes.size() / 2)), ParseError);
    }
    SUBCASE("foreign opset") {
        ModelGraph g = f.graph;
        g.opset_version = 9;  // serializer always pins the supported opset
        std::string ok_bytes = serialize_model(g);
        CHECK_NOTHROW(load_model(ok_bytes));
    }
    SUBCASE("batch size above one") {
        ModelGraph g;
        g.graph_inputs = {"x"};
        g.graph_outputs = {"y"};
        g.edges["x"] = TensorSpec{{8, 1, 4, 4}};
        Node n;
        n.op = OpKind::Relu;
        n.name = "r";
        n.inputs = {"x"};
        n.outputs = {"y"};
        g.nodes.push_back(n);
        CHECK_THROWS_AS(load_model(serialize_model(g)), ParseError);
    }
}

TEST_CASE("opset pinning is reported with the offending version") {
    // Craft bytes at a different opset by patching the serialized model through
    // the protobuf wire format is overkill; instead check the loader's message
    // through a minimal hand-rolled model: field 8 (opset_import) of ModelProto
    // with version 11.
    Fixture f = build_fixture("cryptonets", 5, 1);
    std::string bytes = serialize_model(f.graph);
    // The serializer writes opset 13 as bytes {0x42, 0x04, 0x08, 0x00, 0x10, 0x0d}
    // minus the domain; find the version byte 13 following an opset_import tag
    // and rewrite it to 11.
    // opset_import is the highest field number, so it serializes last; patch
    // the final occurrence to avoid touching weight bytes.
    bool patched = false;
    for (std::size_t i = bytes.size() - 2; i + 1 > 0; --i) {
        if (static_cast<unsigned char>(bytes[i]) == 0x10 &&
            static_cast<unsigned char>(bytes[i + 1]) == 13) {
            bytes[i + 1] = 11;
            patched = true;
            break;
        }
    }
    REQUIRE(patched);
    try {
        load_model(bytes);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("11") != std::string::npos);
    }
}
