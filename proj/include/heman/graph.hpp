#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "heman/tensor.hpp"

namespace heman {

enum class OpKind {
    Add,
    Mul,
    MatMul,
    Gemm,
    Conv,
    AveragePool,
    Relu,
    Pad,
    Flatten,
    Reshape,
};

const char* op_kind_name(OpKind op);
std::optional<OpKind> op_kind_from_string(const std::string& name);

// ONNX node attribute value. Ints/floats keep their repeated forms; tensors
// never appear as attributes in the supported subset.
using AttrValue = std::variant<std::int64_t, double, std::string,
                               std::vector<std::int64_t>, std::vector<double>>;

struct Node {
    OpKind op = OpKind::Relu;
    std::string name;
    std::map<std::string, AttrValue> attrs;
    std::vector<std::string> inputs;   // edge ids, ordered per ONNX operator spec
    std::vector<std::string> outputs;

    std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
    double attr_float(const std::string& key, double fallback) const;
    std::vector<std::int64_t> attr_ints(const std::string& key,
                                        std::vector<std::int64_t> fallback) const;
};

struct TensorSpec {
    Shape shape;
    std::int64_t element_count() const { return shape_elements(shape); }
};

struct ModelGraph {
    std::vector<Node> nodes;
    std::map<std::string, TensorSpec> edges;  // populated by infer_shapes
    std::map<std::string, Tensor> initializers;
    std::vector<std::string> graph_inputs;   // excludes initializers
    std::vector<std::string> graph_outputs;
    std::int64_t opset_version = 0;

    bool is_initializer(const std::string& edge) const {
        return initializers.count(edge) != 0;
    }
    // All non-initializer edge ids: graph inputs plus every node output.
    std::vector<std::string> value_edges() const;
    const TensorSpec& edge_spec(const std::string& edge) const;
};

struct UnsupportedReport {
    struct Item {
        std::string node_name;
        std::string op;
        std::string reason;
    };
    std::vector<Item> items;
    bool ok() const { return items.empty(); }
    std::string to_string() const;
};

// Structural validation: DAG-ness, single producer per edge, dangling inputs.
// Throws GraphError on violation. Called by the ONNX loader.
void check_structure(const ModelGraph& g);

UnsupportedReport validate_supported(const ModelGraph& g);

// Fills edges with concrete TensorSpecs via standard ONNX shape rules.
ModelGraph infer_shapes(ModelGraph g);

// Node indices in dependency order, stable tie-break by original index.
std::vector<std::size_t> topo_order(const ModelGraph& g);

}  // namespace heman
