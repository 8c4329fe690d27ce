#pragma once

#include <string>
#include <vector>

#include "heman/calibration.hpp"
#include "heman/lowering.hpp"

namespace heman {

// Synthetic versions of the three evaluation architectures, with seeded
// fan-in-scaled normal weights and seeded calibration inputs.
struct Fixture {
    std::string name;
    std::uint64_t seed = 0;
    ModelGraph graph;  // shape-inferred
    std::vector<Tensor> calibration;  // inputs in [0, 1]

    std::int64_t parameter_count() const;
};

// Known names: "cryptonets", "lenet5", "mobilefacenets-classifier".
Fixture build_fixture(const std::string& name, std::uint64_t seed,
                      std::size_t calibration_samples = 32);

std::vector<std::string> fixture_names();

struct AgreementResult {
    int samples = 0;
    int agreeing = 0;
    double agreement_rate = 0.0;
    double mean_abs_logit_error = 0.0;
    double max_rel_error = 0.0;       // vs cleartext, relative to output magnitude
    double mean_latency_ms = 0.0;
    int distinct_argmax_classes = 0;  // cleartext-side; sanity check vs a constant classifier
    long levels_consumed = 0;         // per sample (ckks)
    long flushes = 0;                 // total (tfhe)
};

// Encrypt -> inference -> decrypt per sample via the same code paths the CLI
// uses; agreement compares encrypted-path argmax against cleartext argmax.
AgreementResult agreement_experiment(const Fixture& fixture, BackendKind backend,
                                     int n_samples, const ReluPolicy& policy,
                                     std::uint64_t seed = 1);

struct GoldenRow {
    std::string name;
    std::string expected;
    std::string actual;
    bool match = false;
};

// Computed depth/parameter values side by side with the embedded reference
// values. Returns false if any row mismatches.
bool golden_report(std::vector<GoldenRow>& rows);

}  // namespace heman
