#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <variant>

#include "heman/params.hpp"
#include "heman/tensor.hpp"

namespace heman {

// Both backends are deterministic semantic simulations: they model the
// scheme mechanics that constrain computation (fixed-point scale grids,
// level budgets, message quantization, bootstrap folding, slot capacity)
// behind a contract a real FHE library could satisfy. Ciphertext payloads
// are NOT cryptographically protected.

struct Seed {
    std::array<std::uint8_t, 32> bytes{};

    static Seed from_u64(std::uint64_t v);
    static Seed from_os_entropy();
    static Seed from_hex(const std::string& hex);
    std::string hex() const;
};

struct SecretKey {
    KeyParams params;
    Seed seed;
    std::string key_id;
};

struct EvalKey {
    KeyParams params;
    std::string key_id;
};

std::pair<SecretKey, EvalKey> keygen(const KeyParams& params, const Seed& seed);

// Per-run operation accounting. Thread-safe accumulation is the caller's
// concern; the backends only increment through this struct.
struct OpCounters {
    long flushes = 0;        // composed-table applications (TFHE)
    long quantizations = 0;  // requantization events (TFHE)
    long levels_consumed = 0;  // CKKS levels burned
    long input_clamps = 0;   // TFHE encrypt values clamped into the input interval
};

// ---------------------------------------------------------------------------
// CKKS-sim: batched fixed-point slot vector with a leveled budget.

struct CtCkks {
    std::vector<double> slots;  // full slot vector, values on the 2^-scale_bits grid
    int scale_bits = 0;
    int level = 0;
    Shape logical_shape;
    std::string key_id;

    std::int64_t element_count() const { return shape_elements(logical_shape); }
};

namespace ckks {

CtCkks encrypt(const SecretKey& sk, const Tensor& x);
Tensor decrypt(const SecretKey& sk, const CtCkks& ct);

CtCkks add_ct(const EvalKey& ek, const CtCkks& a, const CtCkks& b);
CtCkks add_plain(const EvalKey& ek, const CtCkks& a, const std::vector<double>& p);
CtCkks mul_plain(const EvalKey& ek, const CtCkks& a, const std::vector<double>& p,
                 OpCounters* counters = nullptr);
CtCkks mul_ct(const EvalKey& ek, const CtCkks& a, const CtCkks& b,
              OpCounters* counters = nullptr);

// y = W x + b as a single backend primitive consuming exactly one level.
CtCkks linear_map(const EvalKey& ek, const CtCkks& x, const Eigen::MatrixXd& w,
                  const Eigen::VectorXd& b, const Shape& out_shape,
                  OpCounters* counters = nullptr);

}  // namespace ckks

// ---------------------------------------------------------------------------
// TFHE-sim: per-cell quantized values with a deferred univariate-function
// stack that folds into a single lookup table.

struct UnivariateFn {
    enum class Tag { Relu, Affine, Poly, Table } tag = Tag::Relu;
    double affine_a = 1.0, affine_b = 0.0;          // Affine
    std::vector<double> poly_coeffs;                // Poly, ascending
    Interval table_domain;                          // Table
    std::vector<double> table_samples;              // Table

    static UnivariateFn relu() { return {}; }
    static UnivariateFn affine(double a, double b);
    static UnivariateFn poly(std::vector<double> coeffs);
    static UnivariateFn table(Interval domain, std::vector<double> samples);

    double eval(double x) const;
};

struct CtTfhe {
    struct Cell {
        std::uint32_t qval = 0;
        Interval interval;
    };
    std::vector<Cell> cells;
    std::vector<UnivariateFn> pending;  // shared per tensor, applied in order
    int msg_bits = 0;
    Shape logical_shape;
    std::string key_id;

    std::int64_t element_count() const { return shape_elements(logical_shape); }
};

namespace tfhe {

std::uint32_t quantize(double v, const Interval& iv, int msg_bits);
double dequantize(std::uint32_t q, const Interval& iv, int msg_bits);

CtTfhe encrypt(const SecretKey& sk, const Tensor& x, OpCounters* counters = nullptr);
Tensor decrypt(const SecretKey& sk, CtTfhe ct, OpCounters* counters = nullptr);

// Appends f to the pending stack; no numeric work happens here.
CtTfhe lut(const EvalKey& ek, CtTfhe ct, UnivariateFn f);

// Composes the pending stack into one sampled table per cell interval and
// applies it with a single requantization. Optionally intersects the table's
// output range with a calibrated interval.
CtTfhe flush(const EvalKey& ek, CtTfhe ct, OpCounters* counters = nullptr,
             const std::optional<Interval>& calibrated_out = std::nullopt);

CtTfhe add_ct(const EvalKey& ek, CtTfhe a, CtTfhe b, OpCounters* counters = nullptr);
CtTfhe add_plain(const EvalKey& ek, CtTfhe a, const std::vector<double>& p,
                 OpCounters* counters = nullptr);
CtTfhe mul_plain(const EvalKey& ek, CtTfhe a, const std::vector<double>& p,
                 OpCounters* counters = nullptr);

// Per-output plaintext dot products. The output interval comes from the
// caller's calibrated statistics, not worst-case interval arithmetic.
CtTfhe linear_map(const EvalKey& ek, CtTfhe x, const Eigen::MatrixXd& w,
                  const Eigen::VectorXd& b, const Shape& out_shape,
                  const Interval& out_interval, OpCounters* counters = nullptr);

}  // namespace tfhe

using CtTensor = std::variant<CtCkks, CtTfhe>;

// ---------------------------------------------------------------------------
// Serialization. Secret keys carry a distinct magic so they are never
// mistaken for shareable material.

std::string serialize_secret_key(const SecretKey& sk);
SecretKey deserialize_secret_key(const std::string& bytes);
std::string serialize_eval_key(const EvalKey& ek);
EvalKey deserialize_eval_key(const std::string& bytes);

// Throws KeyError if the file is a secret key (or vice versa), ParseError on
// unknown magic or version.
std::string serialize_ciphertext(const CtTensor& ct);
CtTensor deserialize_ciphertext(const std::string& bytes);

}  // namespace heman
