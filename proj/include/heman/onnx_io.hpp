#pragma once

#include <cstddef>
#include <string>

#include "heman/graph.hpp"

namespace heman {

// The single ai.onnx opset version this toolset accepts; models exported at
// other versions are rejected with a ParseError naming the version found.
constexpr std::int64_t kSupportedOpset = 13;

// Parses an ONNX protobuf byte string. Initializers are materialized as dense
// double tensors. Structural validation runs; operator support does not
// (see validate_supported).
ModelGraph load_model(const std::string& bytes);
ModelGraph load_model_file(const std::string& path);

// Serializes a graph back to ONNX bytes (float32 initializers, opset 13).
std::string serialize_model(const ModelGraph& g, const std::string& graph_name = "heman");

}  // namespace heman
