#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "heman/fixtures.hpp"
#include "heman/protocol.hpp"

namespace {

heman::DomainMethod parse_domain(const std::string& s) {
    if (s == "min_max") return heman::DomainMethod::min_max();
    if (s == "mean_std") return heman::DomainMethod::mean_std(3.0);
    if (s.rfind("mean_std:", 0) == 0)
        return heman::DomainMethod::mean_std(std::stod(s.substr(9)));
    throw CLI::ValidationError("--domain-method",
                               "expected min_max, mean_std, or mean_std:<k>, got '" + s + "'");
}

int run_bench(const std::string& fixture_name, const std::string& backend_str, int samples,
              std::uint64_t seed, int relu_degree, const std::string& domain_str) {
    heman::Fixture f = heman::build_fixture(fixture_name, seed,
                                            static_cast<std::size_t>(std::max(32, samples)));
    heman::ReluPolicy policy;
    policy.degree = relu_degree;
    policy.domain = parse_domain(domain_str);
    heman::BackendKind backend = heman::backend_from_string(backend_str);
    heman::AgreementResult r = heman::agreement_experiment(f, backend, samples, policy, seed);

    nlohmann::json j;
    j["fixture"] = fixture_name;
    j["backend"] = backend_str;
    j["samples"] = r.samples;
    j["agreement_rate"] = r.agreement_rate;
    j["mean_abs_logit_error"] = r.mean_abs_logit_error;
    j["max_rel_error"] = r.max_rel_error;
    j["mean_latency_ms"] = r.mean_latency_ms;
    j["levels_consumed"] = r.levels_consumed;
    j["flushes"] = r.flushes;
    j["distinct_argmax_classes"] = r.distinct_argmax_classes;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_golden() {
    std::vector<heman::GoldenRow> rows;
    bool ok = heman::golden_report(rows);
    std::printf("%-38s %-10s %-10s %s\n", "quantity", "expected", "actual", "match");
    for (const auto& r : rows)
        std::printf("%-38s %-10s %-10s %s\n", r.name.c_str(), r.expected.c_str(),
                    r.actual.c_str(), r.match ? "yes" : "NO");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-party privacy-preserving neural-network inference toolset"};
    app.require_subcommand(1);

    heman::KeyparamsArgs kargs;
    std::string backend_str = "ckks";
    std::string domain_str = "mean_std:3";
    auto* keyparams = app.add_subcommand(
        "keyparams", "Derive encryption parameters from a model and calibration data");
    keyparams->add_option("-m,--model", kargs.model_path, "ONNX model file")->required();
    keyparams->add_option("-c,--calibration-data", kargs.calibration_path,
                          "calibration tensor-set zip")->required();
    keyparams->add_option("-o,--output", kargs.out_keyparams_path, "output keyparams.json")
        ->required();
    keyparams->add_option("--backend", backend_str, "ckks or tfhe")
        ->check(CLI::IsMember({"ckks", "tfhe"}));
    keyparams->add_option("--lambda", kargs.lambda_bits, "security level in bits");
    keyparams->add_option("--relu-degree", kargs.relu_degree, "ReLU surrogate degree (ckks)");
    keyparams->add_option("--domain-method", domain_str,
                          "ReLU fit domain: min_max | mean_std | mean_std:<k>");
    keyparams->add_option("--msg-bits", kargs.msg_bits, "message precision in bits (tfhe)");

    std::string keyparams_path, out_secret, out_eval;
    std::string seed_hex;
    auto* keygen = app.add_subcommand("keygen", "Generate a secret/eval key pair");
    keygen->add_option("-p,--keyparams", keyparams_path, "keyparams.json")->required();
    keygen->add_option("--secret-out", out_secret, "secret key output path")->required();
    keygen->add_option("--eval-out", out_eval, "eval key output path")->required();
    keygen->add_option("--seed", seed_hex, "64-hex-digit seed (default: OS entropy)");

    std::string secret_path, input_path, ct_path, out_path, sidecar_path, eval_path;
    auto* encrypt = app.add_subcommand("encrypt", "Encrypt an input tensor");
    encrypt->add_option("-k,--secret-key", secret_path, "secret key file")->required();
    encrypt->add_option("-i,--input", input_path, "input tensor-set zip")->required();
    encrypt->add_option("-o,--output", ct_path, "ciphertext output path")->required();

    auto* inference = app.add_subcommand("inference", "Run the encrypted forward pass");
    inference->add_option("-m,--calibrated-model", sidecar_path,
                          "calibrated-model sidecar (.calib.json)")->required();
    inference->add_option("-k,--eval-key", eval_path, "eval key file")->required();
    inference->add_option("-i,--input", ct_path, "input ciphertext")->required();
    inference->add_option("-o,--output", out_path, "output ciphertext path")->required();

    std::string dec_ct, dec_out;
    auto* decrypt = app.add_subcommand("decrypt", "Decrypt a result ciphertext");
    decrypt->add_option("-k,--secret-key", secret_path, "secret key file")->required();
    decrypt->add_option("-i,--input", dec_ct, "ciphertext file")->required();
    decrypt->add_option("-o,--output", dec_out, "output tensor-set zip path")->required();

    std::string fixture_name = "cryptonets";
    int samples = 50;
    std::uint64_t bench_seed = 1;
    int relu_degree = 3;
    auto* bench = app.add_subcommand("bench", "Run an end-to-end agreement experiment");
    bench->add_option("--fixture", fixture_name, "cryptonets | lenet5 | mobilefacenets-classifier");
    bench->add_option("--backend", backend_str, "ckks or tfhe")
        ->check(CLI::IsMember({"ckks", "tfhe"}));
    bench->add_option("--samples", samples, "number of evaluation samples");
    bench->add_option("--seed", bench_seed, "experiment seed");
    bench->add_option("--relu-degree", relu_degree, "ReLU surrogate degree (ckks)");
    bench->add_option("--domain-method", domain_str,
                      "ReLU fit domain: min_max | mean_std | mean_std:<k>");

    auto* golden = app.add_subcommand(
        "golden", "Compare computed depth/parameter values against reference values");

    CLI11_PARSE(app, argc, argv);

    try {
        if (keyparams->parsed()) {
            kargs.backend = heman::backend_from_string(backend_str);
            kargs.relu_domain = parse_domain(domain_str);
            return heman::cmd_keyparams(kargs, std::cerr);
        }
        if (keygen->parsed())
            return heman::cmd_keygen(keyparams_path, out_secret, out_eval,
                                     seed_hex.empty() ? std::nullopt
                                                      : std::optional<std::string>(seed_hex),
                                     std::cerr);
        if (encrypt->parsed())
            return heman::cmd_encrypt(secret_path, input_path, ct_path, std::cerr);
        if (inference->parsed())
            return heman::cmd_inference(sidecar_path, eval_path, ct_path, out_path, std::cout,
                                        std::cerr);
        if (decrypt->parsed()) return heman::cmd_decrypt(secret_path, dec_ct, dec_out, std::cerr);
        if (bench->parsed())
            return run_bench(fixture_name, backend_str, samples, bench_seed, relu_degree,
                             domain_str);
        if (golden->parsed()) return run_golden();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return heman::kExitInput;
    }
    return 0;
}
