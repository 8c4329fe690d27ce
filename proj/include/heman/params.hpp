#pragma once

#include <map>
#include <string>
#include <vector>

#include "heman/calibration.hpp"

#include "json.hpp"

namespace heman {

enum class BackendKind { Ckks, Tfhe };

const char* backend_name(BackendKind b);
BackendKind backend_from_string(const std::string& s);

struct CkksParams {
    int log2_n = 0;
    std::vector<int> coeff_bit_chain;  // first/last are the 30-bit edge primes
    int scale_bits = 0;

    int level_budget() const { return static_cast<int>(coeff_bit_chain.size()) - 2; }
    std::int64_t slots() const { return std::int64_t{1} << (log2_n - 1); }
};

struct TfheParams {
    int rlwe_n = 0;
    int rlwe_sigma_log2 = 0;
    int lwe_k = 0;
    int lwe_sigma_log2 = 0;
    int msg_bits = 6;
    Interval input_interval;
};

// Scheme-tagged encryption-parameter record: the only model-derived artifact
// that crosses to the data owner.
struct KeyParams {
    BackendKind backend = BackendKind::Ckks;
    int lambda_bits = 128;
    CkksParams ckks;
    TfheParams tfhe;
    Shape input_shape;

    nlohmann::json to_json() const;
    static KeyParams from_json(const nlohmann::json& j);
    std::string canonical_string() const { return to_json().dump(); }
};

constexpr int kKeyParamsFormatVersion = 1;

// Table of max total coefficient-modulus bits per log2_n at lambda = 128.
int ckks_max_q_bits(int log2_n);

struct DepthReport {
    int d_m = 0;
    std::map<std::string, int> node_depth;  // depth of the path ending at each node
    std::int64_t max_tensor_elements = 0;
};

// Longest multiplication chain through the graph. Linear/contraction nodes
// cost one level, Relu costs poly_depth(relu_degree), shape-only nodes zero.
DepthReport multiplicative_depth(const CalibratedModel& cm, int relu_degree);
int node_mult_cost(OpKind op, int relu_degree);

constexpr int kCkksEdgeBits = 30;
constexpr int kCkksMaxScaleBits = 40;
constexpr int kCkksMinScaleBits = 16;

KeyParams derive_ckks_params(const CalibratedModel& cm, int lambda_bits, int relu_degree);

KeyParams derive_tfhe_params(const CalibratedModel& cm, int lambda_bits, int msg_bits = 6,
                             const DomainMethod& input_method = DomainMethod::min_max());

}  // namespace heman
