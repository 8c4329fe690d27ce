#include "heman/params.hpp"

#include <algorithm>

#include "heman/approx.hpp"

namespace heman {

const char* backend_name(BackendKind b) {
    return b == BackendKind::Ckks ? "ckks" : "tfhe";
}

BackendKind backend_from_string(const std::string& s) {
    if (s == "ckks") return BackendKind::Ckks;
    if (s == "tfhe") return BackendKind::Tfhe;
    throw ParamsError("unknown backend '" + s + "' (expected ckks or tfhe)");
}

int ckks_max_q_bits(int log2_n) {
    switch (log2_n) {
        case 12: return 109;
        case 13: return 218;
        case 14: return 438;
        case 15: return 881;
        default:
            throw ParamsError("no max-q entry for log2_n = " + std::to_string(log2_n));
    }
}

namespace {

struct TfheRow {
    int lambda, rlwe_n, rlwe_sigma_log2, lwe_k, lwe_sigma_log2;
};

// Fixed published parameter pairs per security level.
constexpr TfheRow kTfheRows[] = {
    {80, 2048, -60, 542, -23},
    {128, 4096, -62, 938, -23},
};

void require_fields(const nlohmann::json& j, std::initializer_list<const char*> fields,
                    const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* f : fields)
            if (key == f) known = true;
        if (!known) throw ParamsError("unknown field '" + key + "' in " + where);
    }
    for (const char* f : fields)
        if (!j.contains(f)) throw ParamsError("missing field '" + std::string(f) + "' in " + where);
}

}  // namespace

nlohmann::json KeyParams::to_json() const {
    nlohmann::json j;
    j["format_version"] = kKeyParamsFormatVersion;
    j["backend"] = backend_name(backend);
    j["lambda_bits"] = lambda_bits;
    j["input_shape"] = input_shape;
    if (backend == BackendKind::Ckks) {
        j["ckks"] = {{"log2_n", ckks.log2_n},
                     {"coeff_bit_chain", ckks.coeff_bit_chain},
                     {"scale_bits", ckks.scale_bits}};
    } else {
        j["tfhe"] = {{"rlwe_n", tfhe.rlwe_n},
                     {"rlwe_sigma_log2", tfhe.rlwe_sigma_log2},
                     {"lwe_k", tfhe.lwe_k},
                     {"lwe_sigma_log2", tfhe.lwe_sigma_log2},
                     {"msg_bits", tfhe.msg_bits},
                     {"input_interval", {{"lo", tfhe.input_interval.lo},
                                         {"hi", tfhe.input_interval.hi}}}};
    }
    return j;
}

KeyParams KeyParams::from_json(const nlohmann::json& j) try {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw ParamsError("keyparams: missing format_version");
    if (j["format_version"].get<int>() != kKeyParamsFormatVersion)
        throw ParamsError("keyparams: unsupported format_version " +
                          j["format_version"].dump());
    KeyParams p;
    p.backend = backend_from_string(j.at("backend").get<std::string>());
    p.lambda_bits = j.at("lambda_bits").get<int>();
    p.input_shape = j.at("input_shape").get<Shape>();
    if (p.backend == BackendKind::Ckks) {
        require_fields(j, {"format_version", "backend", "lambda_bits", "input_shape", "ckks"},
                       "keyparams");
        const auto& c = j.at("ckks");
        require_fields(c, {"log2_n", "coeff_bit_chain", "scale_bits"}, "keyparams.ckks");
        p.ckks.log2_n = c.at("log2_n").get<int>();
        p.ckks.coeff_bit_chain = c.at("coeff_bit_chain").get<std::vector<int>>();
        p.ckks.scale_bits = c.at("scale_bits").get<int>();
        int total = 0;
        for (int b : p.ckks.coeff_bit_chain) total += b;
        if (total > ckks_max_q_bits(p.ckks.log2_n))
            throw ParamsError("keyparams: coefficient chain exceeds max-q cap");
    } else {
        require_fields(j, {"format_version", "backend", "lambda_bits", "input_shape", "tfhe"},
                       "keyparams");
        const auto& t = j.at("tfhe");
        require_fields(t,
                       {"rlwe_n", "rlwe_sigma_log2", "lwe_k", "lwe_sigma_log2", "msg_bits",
                        "input_interval"},
                       "keyparams.tfhe");
        p.tfhe.rlwe_n = t.at("rlwe_n").get<int>();
        p.tfhe.rlwe_sigma_log2 = t.at("rlwe_sigma_log2").get<int>();
        p.tfhe.lwe_k = t.at("lwe_k").get<int>();
        p.tfhe.lwe_sigma_log2 = t.at("lwe_sigma_log2").get<int>();
        p.tfhe.msg_bits = t.at("msg_bits").get<int>();
        p.tfhe.input_interval = {t.at("input_interval").at("lo").get<double>(),
                                 t.at("input_interval").at("hi").get<double>()};
        bool known = false;
        for (const auto& row : kTfheRows)
            if (row.lambda == p.lambda_bits && row.rlwe_n == p.tfhe.rlwe_n &&
                row.lwe_k == p.tfhe.lwe_k)
                known = true;
        if (!known) throw ParamsError("keyparams: tfhe parameters match no published row");
    }
    return p;
} catch (const nlohmann::json::exception& e) {
    throw ParamsError(std::string("keyparams: ") + e.what());
}

int node_mult_cost(OpKind op, int relu_degree) {
    switch (op) {
        case OpKind::Conv:
        case OpKind::Gemm:
        case OpKind::MatMul:
        case OpKind::AveragePool:
        case OpKind::Mul:
            return 1;
        case OpKind::Relu:
            return poly_depth(relu_degree);
        case OpKind::Add:
        case OpKind::Pad:
        case OpKind::Flatten:
        case OpKind::Reshape:
            return 0;
    }
    return 0;
}

DepthReport multiplicative_depth(const CalibratedModel& cm, int relu_degree) {
    const ModelGraph& g = cm.graph;
    DepthReport rep;
    std::map<std::string, int> edge_depth;
    for (const auto& in : g.graph_inputs) edge_depth[in] = 0;

    for (auto idx : topo_order(g)) {
        const Node& n = g.nodes[idx];
        int in_depth = 0;
        for (const auto& e : n.inputs) {
            auto it = edge_depth.find(e);
            if (it != edge_depth.end()) in_depth = std::max(in_depth, it->second);
        }
        int d = in_depth + node_mult_cost(n.op, relu_degree);
        rep.node_depth[n.name] = d;
        for (const auto& e : n.outputs) edge_depth[e] = d;
        // every node is evaluated, so the budget must cover side branches too
        rep.d_m = std::max(rep.d_m, d);
    }

    for (const auto& e : g.value_edges())
        rep.max_tensor_elements =
            std::max(rep.max_tensor_elements, g.edge_spec(e).element_count());
    return rep;
}

KeyParams derive_ckks_params(const CalibratedModel& cm, int lambda_bits, int relu_degree) {
    if (lambda_bits != 128)
        throw ParamsError("ckks parameter table covers lambda = 128 only, got " +
                          std::to_string(lambda_bits));
    DepthReport rep = multiplicative_depth(cm, relu_degree);

    for (int log2_n = 12; log2_n <= 15; ++log2_n) {
        std::int64_t slots = std::int64_t{1} << (log2_n - 1);
        if (slots < rep.max_tensor_elements) continue;
        int cap = ckks_max_q_bits(log2_n);
        int scale_bits = rep.d_m > 0
                             ? std::min(kCkksMaxScaleBits, (cap - 2 * kCkksEdgeBits) / rep.d_m)
                             : kCkksMaxScaleBits;
        if (scale_bits < kCkksMinScaleBits) continue;

        KeyParams p;
        p.backend = BackendKind::Ckks;
        p.lambda_bits = lambda_bits;
        p.input_shape = cm.graph.edge_spec(cm.graph.graph_inputs.at(0)).shape;
        p.ckks.log2_n = log2_n;
        p.ckks.scale_bits = scale_bits;
        p.ckks.coeff_bit_chain.push_back(kCkksEdgeBits);
        for (int i = 0; i < rep.d_m; ++i) p.ckks.coeff_bit_chain.push_back(scale_bits);
        p.ckks.coeff_bit_chain.push_back(kCkksEdgeBits);
        return p;
    }
    std::string reason =
        rep.max_tensor_elements > (std::int64_t{1} << 14)
            ? "largest tensor (" + std::to_string(rep.max_tensor_elements) +
                  " elements) exceeds the 2^14 slots of log2_n = 15"
            : "depth d_m = " + std::to_string(rep.d_m) +
                  " leaves fewer than " + std::to_string(kCkksMinScaleBits) +
                  " scale bits even at log2_n = 15";
    throw ParamsError("no feasible ckks parameters: " + reason);
}

KeyParams derive_tfhe_params(const CalibratedModel& cm, int lambda_bits, int msg_bits,
                             const DomainMethod& input_method) {
    for (const auto& row : kTfheRows) {
        if (row.lambda != lambda_bits) continue;
        KeyParams p;
        p.backend = BackendKind::Tfhe;
        p.lambda_bits = lambda_bits;
        p.input_shape = cm.graph.edge_spec(cm.graph.graph_inputs.at(0)).shape;
        p.tfhe.rlwe_n = row.rlwe_n;
        p.tfhe.rlwe_sigma_log2 = row.rlwe_sigma_log2;
        p.tfhe.lwe_k = row.lwe_k;
        p.tfhe.lwe_sigma_log2 = row.lwe_sigma_log2;
        p.tfhe.msg_bits = msg_bits;
        p.tfhe.input_interval = edge_interval(cm, cm.graph.graph_inputs.at(0), input_method);
        return p;
    }
    throw ParamsError("no tfhe parameter row for lambda = " + std::to_string(lambda_bits) +
                      " (supported: 80, 128)");
}

}  // namespace heman
