#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "heman/lowering.hpp"

namespace heman {

// Model-owner-side record produced by `keyparams` and consumed by
// `inference`. It pins the exact ONNX bytes it calibrates and carries the
// per-edge statistics and fitted activation surrogates, so inference never
// re-runs calibration. It is never sent to the data owner.
struct CalibratedModelSidecar {
    std::string model_file;    // file name, resolved relative to the sidecar
    std::string model_digest;  // sha256 of the ONNX bytes
    CalibratedModel calibrated;
    DomainMethod relu_domain;
    int relu_degree = 3;
    std::map<std::string, Polynomial> relu_polynomials;  // keyed by node name

    nlohmann::json to_json() const;
    static CalibratedModelSidecar from_json(const nlohmann::json& j);
};

constexpr int kSidecarFormatVersion = 1;

std::string sidecar_path_for(const std::string& model_path);

// Exit-code contract shared by every subcommand.
constexpr int kExitOk = 0;
constexpr int kExitInput = 2;     // missing/malformed files, unsupported models
constexpr int kExitKey = 3;       // key mismatch or wrong key role
constexpr int kExitCapacity = 4;  // level budget / slot capacity exceeded

int exit_code_for_current_exception();

struct KeyparamsArgs {
    std::string model_path;
    std::string calibration_path;
    std::string out_keyparams_path;
    BackendKind backend = BackendKind::Ckks;
    int lambda_bits = 128;
    int relu_degree = 3;
    DomainMethod relu_domain = DomainMethod::mean_std(3.0);
    int msg_bits = 6;
};

// Each command returns a process exit code and reports errors on `err`;
// `inference` additionally writes its latency/level report to `out`.
int cmd_keyparams(const KeyparamsArgs& args, std::ostream& err);
int cmd_keygen(const std::string& keyparams_path, const std::string& out_secret,
               const std::string& out_eval, const std::optional<std::string>& seed_hex,
               std::ostream& err);
int cmd_encrypt(const std::string& secret_path, const std::string& input_path,
                const std::string& out_ct_path, std::ostream& err);
int cmd_inference(const std::string& sidecar_path, const std::string& eval_path,
                  const std::string& ct_in_path, const std::string& out_ct_path,
                  std::ostream& out, std::ostream& err);
int cmd_decrypt(const std::string& secret_path, const std::string& ct_path,
                const std::string& out_tensor_path, std::ostream& err);

}  // namespace heman
