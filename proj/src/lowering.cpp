#include "heman/lowering.hpp"

#include <algorithm>
#include <cmath>

namespace heman {

namespace {

void check_key(const std::string& ct_key_id, const std::string& op_key_id) {
    if (ct_key_id != op_key_id)
        throw KeyError("ciphertext key id " + ct_key_id.substr(0, 12) +
                       "... does not match key " + op_key_id.substr(0, 12) + "...");
}

std::int64_t broadcast_index(const Shape& out, const Shape& in, std::int64_t flat) {
    std::int64_t idx = 0, stride = 1;
    std::size_t offset = out.size() - in.size();
    std::vector<std::int64_t> coord(out.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        coord[i] = flat % out[i];
        flat /= out[i];
    }
    for (std::size_t i = in.size(); i-- > 0;) {
        std::int64_t c = in[i] == 1 ? 0 : coord[i + offset];
        idx += c * stride;
        stride *= in[i];
    }
    return idx;
}

std::vector<double> broadcast_to(const Tensor& t, const Shape& out_shape) {
    std::int64_t n = shape_elements(out_shape);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = t.data[broadcast_index(out_shape, t.shape, i)];
    return out;
}

void check_matrix_budget(std::int64_t rows, std::int64_t cols, std::int64_t cap,
                         const std::string& node_name) {
    if (rows * cols > cap)
        throw PlanError("node '" + node_name + "': lowered matrix would hold " +
                        std::to_string(rows * cols) + " elements, above the configured cap of " +
                        std::to_string(cap));
}

}  // namespace

LinearMapPlan im2col_matrix(const Shape& in_shape, const Shape& weight_shape,
                            const std::vector<std::int64_t>& strides,
                            const std::vector<std::int64_t>& pads, std::int64_t group,
                            const std::vector<double>& weights,
                            const std::vector<double>& bias) {
    if (in_shape.size() != 4 || weight_shape.size() != 4)
        throw ShapeError("im2col expects 4-D input and weight shapes");
    std::int64_t ci = in_shape[1], ih = in_shape[2], iw = in_shape[3];
    std::int64_t co = weight_shape[0], ci_g = weight_shape[1], kh = weight_shape[2],
                 kw = weight_shape[3];
    if (ci != ci_g * group) throw ShapeError("im2col channel/group mismatch");
    std::int64_t oh = (ih + pads[0] + pads[2] - kh) / strides[0] + 1;
    std::int64_t ow = (iw + pads[1] + pads[3] - kw) / strides[1] + 1;
    std::int64_t co_g = co / group;

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(co * oh * ow, ci * ih * iw);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(co * oh * ow);

    for (std::int64_t g = 0; g < group; ++g)
        for (std::int64_t oc = 0; oc < co_g; ++oc)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    std::int64_t row = ((g * co_g + oc) * oh + y) * ow + x;
                    if (!bias.empty()) b[row] = bias[static_cast<std::size_t>(g * co_g + oc)];
                    for (std::int64_t ic = 0; ic < ci_g; ++ic)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                std::int64_t sy = y * strides[0] + ky - pads[0];
                                std::int64_t sx = x * strides[1] + kx - pads[1];
                                if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
                                std::int64_t col = ((g * ci_g + ic) * ih + sy) * iw + sx;
                                m(row, col) += weights[static_cast<std::size_t>(
                                    (((g * co_g + oc) * ci_g + ic) * kh + ky) * kw + kx)];
                            }
                }
    return LinearMapPlan{std::move(m), std::move(b), ""};
}

namespace {

LinearMapPlan lower_average_pool(const Node& n, const Shape& in_shape) {
    auto k = n.attr_ints("kernel_shape", {});
    auto strides = n.attr_ints("strides", {k[0], k[1]});
    auto pads = n.attr_ints("pads", {0, 0, 0, 0});
    bool include_pad = n.attr_int("count_include_pad", 0) != 0;
    std::int64_t c = in_shape[1], ih = in_shape[2], iw = in_shape[3];
    std::int64_t oh = (ih + pads[0] + pads[2] - k[0]) / strides[0] + 1;
    std::int64_t ow = (iw + pads[1] + pads[3] - k[1]) / strides[1] + 1;

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(c * oh * ow, c * ih * iw);
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t x = 0; x < ow; ++x) {
                std::int64_t row = (ch * oh + y) * ow + x;
                std::vector<std::int64_t> cols;
                for (std::int64_t ky = 0; ky < k[0]; ++ky)
                    for (std::int64_t kx = 0; kx < k[1]; ++kx) {
                        std::int64_t sy = y * strides[0] + ky - pads[0];
                        std::int64_t sx = x * strides[1] + kx - pads[1];
                        if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
                        cols.push_back((ch * ih + sy) * iw + sx);
                    }
                double denom = include_pad ? static_cast<double>(k[0] * k[1])
                                           : static_cast<double>(cols.size());
                for (auto col : cols) m(row, col) = 1.0 / denom;
            }
    return LinearMapPlan{std::move(m), Eigen::VectorXd::Zero(c * oh * ow), n.name};
}

LinearMapPlan lower_pad(const Node& n, const ModelGraph& g, const Shape& in_shape,
                        const Shape& out_shape) {
    const Tensor& pads = g.initializers.at(n.inputs.at(1));
    std::int64_t in_n = shape_elements(in_shape);
    std::int64_t out_n = shape_elements(out_shape);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(out_n, in_n);
    std::size_t rank = in_shape.size();
    std::vector<std::int64_t> coord(rank);
    for (std::int64_t i = 0; i < in_n; ++i) {
        std::int64_t flat = i;
        for (std::size_t d = rank; d-- > 0;) {
            coord[d] = flat % in_shape[d];
            flat /= in_shape[d];
        }
        std::int64_t oi = 0;
        for (std::size_t d = 0; d < rank; ++d)
            oi = oi * out_shape[d] + coord[d] + static_cast<std::int64_t>(pads.data[d]);
        m(oi, i) = 1.0;
    }
    return LinearMapPlan{std::move(m), Eigen::VectorXd::Zero(out_n), n.name};
}

// Gemm / MatMul with a ciphertext row vector and an initializer weight.
LinearMapPlan lower_gemm(const Node& n, const ModelGraph& g, const Shape& out_shape) {
    bool is_gemm = n.op == OpKind::Gemm;
    if (g.is_initializer(n.inputs[0]) || !g.is_initializer(n.inputs[1]))
        throw PlanError("node '" + n.name +
                        "': only (ciphertext x initializer-weight) contractions are lowerable");
    const Tensor& w = g.initializers.at(n.inputs[1]);
    double alpha = is_gemm ? n.attr_float("alpha", 1.0) : 1.0;
    double beta = is_gemm ? n.attr_float("beta", 1.0) : 1.0;
    bool tb = is_gemm && n.attr_int("transB", 0) != 0;
    if (is_gemm && n.attr_int("transA", 0) != 0)
        throw PlanError("node '" + n.name + "': transA on an encrypted operand");

    std::int64_t out_n = out_shape[1];
    std::int64_t in_n = tb ? w.shape[1] : w.shape[0];
    Eigen::MatrixXd m(out_n, in_n);
    for (std::int64_t o = 0; o < out_n; ++o)
        for (std::int64_t i = 0; i < in_n; ++i)
            m(o, i) = alpha * (tb ? w.data[static_cast<std::size_t>(o * in_n + i)]
                                  : w.data[static_cast<std::size_t>(i * out_n + o)]);

    Eigen::VectorXd b = Eigen::VectorXd::Zero(out_n);
    if (is_gemm && n.inputs.size() > 2) {
        const Tensor& c = g.initializers.at(n.inputs[2]);
        for (std::int64_t o = 0; o < out_n; ++o)
            b[o] = beta * c.data[broadcast_index(out_shape, c.shape, o)];
    }
    return LinearMapPlan{std::move(m), std::move(b), n.name};
}

LinearMapPlan lower_conv(const Node& n, const ModelGraph& g, const Shape& in_shape) {
    const Tensor& w = g.initializers.at(n.inputs.at(1));
    std::vector<double> bias;
    if (n.inputs.size() > 2) bias = g.initializers.at(n.inputs[2]).data;
    auto plan = im2col_matrix(in_shape, w.shape, n.attr_ints("strides", {1, 1}),
                              n.attr_ints("pads", {0, 0, 0, 0}), n.attr_int("group", 1),
                              w.data, bias);
    plan.node_name = n.name;
    return plan;
}

}  // namespace

ExecutionPlan plan(const CalibratedModel& cm, const KeyParams& kp, const ReluPolicy& policy,
                   const PlanOptions& options,
                   const std::map<std::string, Polynomial>* precomputed_relu) {
    const ModelGraph& g = cm.graph;
    if (g.graph_inputs.size() != 1)
        throw PlanError("execution plans support exactly one graph input");
    if (policy.degree != 1 && policy.degree != 3 && policy.degree != 7)
        throw PlanError("relu surrogate degree must be 1, 3 or 7");

    ExecutionPlan ep;
    ep.backend = kp.backend;
    ep.input_edge = g.graph_inputs[0];
    ep.output_edge = g.graph_outputs.at(0);
    ep.input_spec = g.edge_spec(ep.input_edge);
    ep.output_spec = g.edge_spec(ep.output_edge);

    for (auto idx : topo_order(g)) {
        const Node& n = g.nodes[idx];
        PlanStep step;
        step.node_name = n.name;
        step.output_edge = n.outputs.at(0);
        step.out_shape = g.edge_spec(step.output_edge).shape;
        for (const auto& in : n.inputs)
            if (!g.is_initializer(in)) step.input_edges.push_back(in);
        if (kp.backend == BackendKind::Tfhe)
            step.out_interval = edge_interval(cm, step.output_edge, options.tfhe_interval);

        const Shape& in_shape = g.edge_spec(step.input_edges.at(0)).shape;
        switch (n.op) {
            case OpKind::Conv:
                step.kind = PlanStep::Kind::LinearMap;
                check_matrix_budget(shape_elements(step.out_shape), shape_elements(in_shape),
                                    options.max_matrix_elements, n.name);
                step.linear = lower_conv(n, g, in_shape);
                break;
            case OpKind::AveragePool:
                step.kind = PlanStep::Kind::LinearMap;
                check_matrix_budget(shape_elements(step.out_shape), shape_elements(in_shape),
                                    options.max_matrix_elements, n.name);
                step.linear = lower_average_pool(n, in_shape);
                break;
            case OpKind::Gemm:
            case OpKind::MatMul:
                step.kind = PlanStep::Kind::LinearMap;
                check_matrix_budget(shape_elements(step.out_shape), shape_elements(in_shape),
                                    options.max_matrix_elements, n.name);
                step.linear = lower_gemm(n, g, step.out_shape);
                break;
            case OpKind::Pad:
                step.kind = PlanStep::Kind::LinearMap;
                check_matrix_budget(shape_elements(step.out_shape), shape_elements(in_shape),
                                    options.max_matrix_elements, n.name);
                step.linear = lower_pad(n, g, in_shape, step.out_shape);
                step.depth_free = true;
                break;
            case OpKind::Add:
            case OpKind::Mul: {
                bool init0 = g.is_initializer(n.inputs[0]);
                bool init1 = g.is_initializer(n.inputs[1]);
                if (init0 || init1) {
                    const Tensor& p = g.initializers.at(init0 ? n.inputs[0] : n.inputs[1]);
                    step.kind = n.op == OpKind::Add ? PlanStep::Kind::AddPlain
                                                    : PlanStep::Kind::MulPlain;
                    step.plain_operand = broadcast_to(p, step.out_shape);
                } else if (n.op == OpKind::Add) {
                    step.kind = PlanStep::Kind::AddCt;
                } else {
                    if (kp.backend == BackendKind::Tfhe)
                        throw PlanError(
                            "node '" + n.name +
                            "': the tfhe backend has no ciphertext-ciphertext multiplication");
                    step.kind = PlanStep::Kind::MulCt;
                }
                break;
            }
            case OpKind::Relu: {
                step.kind = PlanStep::Kind::Activation;
                if (kp.backend == BackendKind::Ckks) {
                    if (precomputed_relu && precomputed_relu->count(n.name)) {
                        step.relu_poly = precomputed_relu->at(n.name);
                    } else {
                        Interval domain =
                            edge_interval(cm, step.input_edges[0], policy.domain);
                        step.relu_poly = fit_relu_polynomial(domain, policy.degree);
                    }
                }
                break;
            }
            case OpKind::Flatten:
            case OpKind::Reshape:
                step.kind = PlanStep::Kind::ShapeOnly;
                break;
        }
        ep.steps.push_back(std::move(step));
    }

    // Contract runs of consecutive ShapeOnly steps into the last one.
    std::vector<PlanStep> contracted;
    for (auto& step : ep.steps) {
        if (step.kind == PlanStep::Kind::ShapeOnly && !contracted.empty() &&
            contracted.back().kind == PlanStep::Kind::ShapeOnly &&
            contracted.back().output_edge == step.input_edges.at(0)) {
            step.input_edges = contracted.back().input_edges;
            contracted.back() = std::move(step);
        } else {
            contracted.push_back(std::move(step));
        }
    }
    ep.steps = std::move(contracted);

    if (options.compose_linear) {
        // Fold chains of LinearMap steps separated only by shape-only hops
        // into a single matrix; saves one CKKS level per folded pair.
        std::vector<PlanStep> out;
        for (auto& step : ep.steps) {
            bool can_fold =
                !out.empty() &&
                (step.kind == PlanStep::Kind::LinearMap ||
                 step.kind == PlanStep::Kind::ShapeOnly) &&
                out.back().kind == PlanStep::Kind::LinearMap &&
                out.back().output_edge == step.input_edges.at(0);
            if (can_fold && step.kind == PlanStep::Kind::ShapeOnly) {
                out.back().output_edge = step.output_edge;
                out.back().out_shape = step.out_shape;
                out.back().out_interval = step.out_interval;
                continue;
            }
            if (can_fold && step.kind == PlanStep::Kind::LinearMap) {
                PlanStep& prev = out.back();
                prev.linear.bias =
                    step.linear.matrix * prev.linear.bias + step.linear.bias;
                prev.linear.matrix = step.linear.matrix * prev.linear.matrix;
                prev.linear.node_name += "+" + step.linear.node_name;
                prev.node_name += "+" + step.node_name;
                prev.depth_free = prev.depth_free && step.depth_free;
                prev.output_edge = step.output_edge;
                prev.out_shape = step.out_shape;
                prev.out_interval = step.out_interval;
                continue;
            }
            out.push_back(std::move(step));
        }
        ep.steps = std::move(out);
    }
    return ep;
}

CtCkks eval_poly_ckks(const EvalKey& ek, const CtCkks& x, const Polynomial& p,
                      OpCounters* counters) {
    int degree = p.degree();
    // Powers x^(2^j) by repeated squaring.
    std::vector<CtCkks> pow2;
    pow2.push_back(x);
    for (int j = 1; (1 << j) <= degree; ++j)
        pow2.push_back(ckks::mul_ct(ek, pow2.back(), pow2.back(), counters));

    // Every monomial k >= 1 is built even when its coefficient is zero, so a
    // Relu step always consumes exactly poly_depth(degree) levels.
    std::optional<CtCkks> acc;
    for (int k = 1; k <= degree; ++k) {
        std::optional<CtCkks> term;
        bool coeff_folded = false;
        for (int j = 0; (1 << j) <= k; ++j) {
            if (!(k & (1 << j))) continue;
            if (!term) {
                // Fold the coefficient into the lowest power via mul_plain.
                term = ckks::mul_plain(ek, pow2[static_cast<std::size_t>(j)],
                                       {p.coeffs[static_cast<std::size_t>(k)]}, counters);
                coeff_folded = true;
            } else {
                term = ckks::mul_ct(ek, *term, pow2[static_cast<std::size_t>(j)], counters);
            }
        }
        (void)coeff_folded;
        acc = acc ? ckks::add_ct(ek, *acc, *term) : *term;
    }
    CtCkks result = acc ? *acc : ckks::mul_plain(ek, x, {0.0}, counters);
    return ckks::add_plain(ek, result, {p.coeffs.empty() ? 0.0 : p.coeffs[0]});
}

namespace {

CtTensor reshape_ct(CtTensor ct, const Shape& out_shape) {
    if (std::holds_alternative<CtCkks>(ct)) {
        auto& c = std::get<CtCkks>(ct);
        if (shape_elements(out_shape) != c.element_count())
            throw ShapeError("shape-only step changes element count");
        c.logical_shape = out_shape;
    } else {
        auto& c = std::get<CtTfhe>(ct);
        if (shape_elements(out_shape) != c.element_count())
            throw ShapeError("shape-only step changes element count");
        c.logical_shape = out_shape;
    }
    return ct;
}

// Pad embedding on CKKS: pure slot rearrangement, no level, no re-rounding.
CtCkks embed_ckks(const EvalKey& ek, const CtCkks& x, const LinearMapPlan& lm,
                  const Shape& out_shape) {
    CtCkks out;
    out.scale_bits = x.scale_bits;
    out.level = x.level;
    out.logical_shape = out_shape;
    out.key_id = x.key_id;
    out.slots.assign(x.slots.size(), 0.0);
    if (lm.matrix.rows() > static_cast<std::int64_t>(x.slots.size()))
        throw CapacityError("embedding output exceeds slot capacity");
    for (Eigen::Index r = 0; r < lm.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < lm.matrix.cols(); ++c)
            if (lm.matrix(r, c) != 0.0)
                out.slots[static_cast<std::size_t>(r)] +=
                    lm.matrix(r, c) * x.slots[static_cast<std::size_t>(c)];
    (void)ek;
    return out;
}

CtTfhe embed_tfhe(const EvalKey& ek, CtTfhe x, const LinearMapPlan& lm, const Shape& out_shape,
                  OpCounters* counters) {
    x = tfhe::flush(ek, std::move(x), counters);
    CtTfhe out;
    out.msg_bits = x.msg_bits;
    out.logical_shape = out_shape;
    out.key_id = x.key_id;
    out.cells.resize(static_cast<std::size_t>(lm.matrix.rows()));
    Interval zero_iv{-1.0 / (1 << 20), 1.0 / (1 << 20)};
    for (auto& cell : out.cells) cell = {tfhe::quantize(0.0, zero_iv, x.msg_bits), zero_iv};
    for (Eigen::Index r = 0; r < lm.matrix.rows(); ++r)
        for (Eigen::Index c = 0; c < lm.matrix.cols(); ++c)
            if (lm.matrix(r, c) == 1.0)
                out.cells[static_cast<std::size_t>(r)] = x.cells[static_cast<std::size_t>(c)];
    return out;
}

}  // namespace

CtTensor run_inference(const ExecutionPlan& plan, const EvalKey& ek, const CtTensor& ct_in,
                       OpCounters* counters) {
    // Key and shape checks on the way in.
    const Shape* in_shape = nullptr;
    int start_level = 0;
    if (std::holds_alternative<CtCkks>(ct_in)) {
        if (plan.backend != BackendKind::Ckks)
            throw KeyError("plan expects a tfhe ciphertext, got ckks");
        const auto& c = std::get<CtCkks>(ct_in);
        check_key(c.key_id, ek.key_id);
        in_shape = &c.logical_shape;
        start_level = c.level;
    } else {
        if (plan.backend != BackendKind::Tfhe)
            throw KeyError("plan expects a ckks ciphertext, got tfhe");
        const auto& c = std::get<CtTfhe>(ct_in);
        check_key(c.key_id, ek.key_id);
        in_shape = &c.logical_shape;
    }
    if (*in_shape != plan.input_spec.shape)
        throw ShapeError("input ciphertext shape " + shape_to_string(*in_shape) +
                         " does not match graph input " +
                         shape_to_string(plan.input_spec.shape));

    std::map<std::string, CtTensor> env;
    env[plan.input_edge] = ct_in;
    auto input_of = [&](const PlanStep& s, std::size_t i) -> const CtTensor& {
        auto it = env.find(s.input_edges.at(i));
        if (it == env.end())
            throw GraphError("step '" + s.node_name + "': input edge not yet computed");
        return it->second;
    };

    for (const auto& step : plan.steps) {
        CtTensor out;
        const CtTensor& a = input_of(step, 0);
        switch (step.kind) {
            case PlanStep::Kind::ShapeOnly:
                out = reshape_ct(a, step.out_shape);
                break;
            case PlanStep::Kind::LinearMap:
                if (plan.backend == BackendKind::Ckks) {
                    const auto& x = std::get<CtCkks>(a);
                    out = step.depth_free
                              ? embed_ckks(ek, x, step.linear, step.out_shape)
                              : ckks::linear_map(ek, x, step.linear.matrix, step.linear.bias,
                                                 step.out_shape, counters);
                } else {
                    const auto& x = std::get<CtTfhe>(a);
                    out = step.depth_free
                              ? embed_tfhe(ek, x, step.linear, step.out_shape, counters)
                              : tfhe::linear_map(ek, x, step.linear.matrix, step.linear.bias,
                                                 step.out_shape, step.out_interval, counters);
                }
                break;
            case PlanStep::Kind::AddPlain:
                if (plan.backend == BackendKind::Ckks)
                    out = ckks::add_plain(ek, std::get<CtCkks>(a), step.plain_operand);
                else
                    out = tfhe::add_plain(ek, std::get<CtTfhe>(a), step.plain_operand, counters);
                break;
            case PlanStep::Kind::MulPlain:
                if (plan.backend == BackendKind::Ckks)
                    out = ckks::mul_plain(ek, std::get<CtCkks>(a), step.plain_operand, counters);
                else
                    out = tfhe::mul_plain(ek, std::get<CtTfhe>(a), step.plain_operand, counters);
                break;
            case PlanStep::Kind::AddCt: {
                const CtTensor& b = input_of(step, 1);
                if (plan.backend == BackendKind::Ckks)
                    out = ckks::add_ct(ek, std::get<CtCkks>(a), std::get<CtCkks>(b));
                else
                    out = tfhe::add_ct(ek, std::get<CtTfhe>(a), std::get<CtTfhe>(b), counters);
                break;
            }
            case PlanStep::Kind::MulCt: {
                const CtTensor& b = input_of(step, 1);
                out = ckks::mul_ct(ek, std::get<CtCkks>(a), std::get<CtCkks>(b), counters);
                break;
            }
            case PlanStep::Kind::Activation:
                if (plan.backend == BackendKind::Ckks)
                    out = eval_poly_ckks(ek, std::get<CtCkks>(a), step.relu_poly, counters);
                else
                    out = tfhe::lut(ek, std::get<CtTfhe>(a), UnivariateFn::relu());
                break;
        }
        env[step.output_edge] = std::move(out);
    }

    auto it = env.find(plan.output_edge);
    if (it == env.end()) throw GraphError("plan never produced the graph output");
    if (plan.backend == BackendKind::Ckks && counters)
        counters->levels_consumed += start_level - std::get<CtCkks>(it->second).level;
    return it->second;
}

}  // namespace heman
