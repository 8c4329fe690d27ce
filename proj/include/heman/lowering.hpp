#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heman/approx.hpp"
#include "heman/backend.hpp"

namespace heman {

// Dense plaintext realization of a linear node: y = matrix * flatten(x) + bias.
struct LinearMapPlan {
    Eigen::MatrixXd matrix;
    Eigen::VectorXd bias;
    std::string node_name;
};

struct ReluPolicy {
    int degree = 3;  // CKKS surrogate degree; TFHE evaluates exact ReLU via LUT
    DomainMethod domain = DomainMethod::mean_std(3.0);
};

struct PlanOptions {
    bool compose_linear = false;        // fold adjacent linear maps into one matrix
    std::int64_t max_matrix_elements = std::int64_t{1} << 26;
    DomainMethod tfhe_interval = DomainMethod::min_max();
};

struct PlanStep {
    enum class Kind { LinearMap, AddPlain, MulPlain, AddCt, MulCt, Activation, ShapeOnly };
    Kind kind = Kind::ShapeOnly;
    std::string node_name;
    std::vector<std::string> input_edges;  // non-initializer inputs, in order
    std::string output_edge;
    Shape out_shape;

    LinearMapPlan linear;                 // LinearMap
    bool depth_free = false;              // zero-fill embeddings (Pad) cost no level
    std::vector<double> plain_operand;    // AddPlain / MulPlain, broadcast to full size
    Polynomial relu_poly;                 // Activation under CKKS
    Interval out_interval;                // TFHE quantization range for the output edge
};

struct ExecutionPlan {
    std::vector<PlanStep> steps;
    BackendKind backend = BackendKind::Ckks;
    TensorSpec input_spec;
    TensorSpec output_spec;
    std::string input_edge;
    std::string output_edge;
};

// Lowers the calibrated graph onto backend primitives. Relu surrogates may be
// supplied precomputed (keyed by node name) to reuse the polynomials stored
// in a calibrated-model sidecar; otherwise they are fitted here.
ExecutionPlan plan(const CalibratedModel& cm, const KeyParams& kp, const ReluPolicy& policy,
                   const PlanOptions& options = {},
                   const std::map<std::string, Polynomial>* precomputed_relu = nullptr);

CtTensor run_inference(const ExecutionPlan& plan, const EvalKey& ek, const CtTensor& ct_in,
                       OpCounters* counters = nullptr);

// Dense matrix equivalent of a 2-D convolution (im2col lowering): for all x,
// matrix * flatten(x) = flatten(conv(x, weights)), bias broadcast per output
// channel.
LinearMapPlan im2col_matrix(const Shape& in_shape, const Shape& weight_shape,
                            const std::vector<std::int64_t>& strides,
                            const std::vector<std::int64_t>& pads, std::int64_t group,
                            const std::vector<double>& weights,
                            const std::vector<double>& bias);

// Power-tree polynomial evaluation on a CKKS ciphertext; consumes exactly
// poly_depth(p.degree()) levels.
CtCkks eval_poly_ckks(const EvalKey& ek, const CtCkks& x, const Polynomial& p,
                      OpCounters* counters = nullptr);

}  // namespace heman
