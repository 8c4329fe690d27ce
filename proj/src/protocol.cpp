#include "heman/protocol.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <ostream>

#include "heman/dataio.hpp"
#include "heman/onnx_io.hpp"
#include "heman/util.hpp"

namespace heman {

namespace {

nlohmann::json domain_to_json(const DomainMethod& m) {
    nlohmann::json j;
    j["kind"] = m.kind == DomainMethod::MinMax ? "min_max" : "mean_std";
    if (m.kind == DomainMethod::MeanStd) j["k"] = m.k;
    return j;
}

DomainMethod domain_from_json(const nlohmann::json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "min_max") return DomainMethod::min_max();
    if (kind == "mean_std") return DomainMethod::mean_std(j.at("k").get<double>());
    throw ParseError("unknown domain method '" + kind + "'");
}

int run_guarded(std::ostream& err, const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const KeyError& e) {
        err << "error: " << e.what() << "\n";
        return kExitKey;
    } catch (const CapacityError& e) {
        err << "error: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const DepthError& e) {
        err << "error: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

ModelGraph load_validated_model(const std::string& bytes, std::ostream& err, bool& ok) {
    ModelGraph g = load_model(bytes);
    UnsupportedReport report = validate_supported(g);
    if (!report.ok()) {
        err << report.to_string();
        ok = false;
        return g;
    }
    ok = true;
    return infer_shapes(std::move(g));
}

}  // namespace

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const KeyError&) {
        return kExitKey;
    } catch (const CapacityError&) {
        return kExitCapacity;
    } catch (const DepthError&) {
        return kExitCapacity;
    } catch (...) {
        return kExitInput;
    }
}

std::string sidecar_path_for(const std::string& model_path) {
    return model_path + ".calib.json";
}

nlohmann::json CalibratedModelSidecar::to_json() const {
    nlohmann::json j;
    j["format_version"] = kSidecarFormatVersion;
    j["model_file"] = model_file;
    j["model_digest"] = model_digest;
    j["dataset_digest"] = calibrated.dataset_digest;
    j["sample_count"] = calibrated.sample_count;
    j["relu_domain"] = domain_to_json(relu_domain);
    j["relu_degree"] = relu_degree;
    nlohmann::json stats = nlohmann::json::object();
    for (const auto& [edge, s] : calibrated.stats)
        stats[edge] = {{"min", s.min}, {"max", s.max}, {"mean", s.mean},
                       {"m2", s.m2},   {"count", s.count}};
    j["stats"] = std::move(stats);
    nlohmann::json polys = nlohmann::json::object();
    for (const auto& [node, p] : relu_polynomials)
        polys[node] = {{"domain", {p.domain.lo, p.domain.hi}}, {"coeffs", p.coeffs}};
    j["relu_polynomials"] = std::move(polys);
    return j;
}

CalibratedModelSidecar CalibratedModelSidecar::from_json(const nlohmann::json& j) {
    int version = j.at("format_version").get<int>();
    if (version != kSidecarFormatVersion)
        throw ParseError("calibrated-model sidecar has format_version " +
                         std::to_string(version) + "; expected " +
                         std::to_string(kSidecarFormatVersion));
    CalibratedModelSidecar sc;
    sc.model_file = j.at("model_file").get<std::string>();
    sc.model_digest = j.at("model_digest").get<std::string>();
    sc.calibrated.dataset_digest = j.at("dataset_digest").get<std::string>();
    sc.calibrated.sample_count = j.at("sample_count").get<std::int64_t>();
    sc.relu_domain = domain_from_json(j.at("relu_domain"));
    sc.relu_degree = j.at("relu_degree").get<int>();
    for (const auto& [edge, s] : j.at("stats").items()) {
        EdgeStats es;
        es.min = s.at("min").get<double>();
        es.max = s.at("max").get<double>();
        es.mean = s.at("mean").get<double>();
        es.m2 = s.at("m2").get<double>();
        es.count = s.at("count").get<std::int64_t>();
        sc.calibrated.stats[edge] = es;
    }
    for (const auto& [node, p] : j.at("relu_polynomials").items()) {
        Polynomial poly;
        poly.domain = {p.at("domain").at(0).get<double>(), p.at("domain").at(1).get<double>()};
        poly.coeffs = p.at("coeffs").get<std::vector<double>>();
        sc.relu_polynomials[node] = std::move(poly);
    }
    return sc;
}

int cmd_keyparams(const KeyparamsArgs& args, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        std::string model_bytes = read_file(args.model_path);
        bool ok = false;
        ModelGraph g = load_validated_model(model_bytes, err, ok);
        if (!ok) return kExitInput;

        std::string zip_bytes = read_file(args.calibration_path);
        TensorSet ts = tensor_set_unpack(zip_bytes);
        if (ts.samples.empty()) throw ParseError("calibration set holds no samples");

        CalibratedModel cm = calibrate(g, ts.samples, sha256_hex(zip_bytes));

        KeyParams kp = args.backend == BackendKind::Ckks
                           ? derive_ckks_params(cm, args.lambda_bits, args.relu_degree)
                           : derive_tfhe_params(cm, args.lambda_bits, args.msg_bits);
        write_file_atomic(args.out_keyparams_path, kp.to_json().dump(2) + "\n");

        CalibratedModelSidecar sc;
        sc.model_file = std::filesystem::path(args.model_path).filename().string();
        sc.model_digest = sha256_hex(model_bytes);
        sc.relu_domain = args.relu_domain;
        sc.relu_degree = args.relu_degree;
        for (const auto& n : cm.graph.nodes) {
            if (n.op != OpKind::Relu) continue;
            Interval domain = edge_interval(cm, n.inputs[0], args.relu_domain);
            sc.relu_polynomials[n.name] = fit_relu_polynomial(domain, args.relu_degree);
        }
        sc.calibrated = std::move(cm);
        write_file_atomic(sidecar_path_for(args.model_path), sc.to_json().dump(2) + "\n");
        return kExitOk;
    });
}

int cmd_keygen(const std::string& keyparams_path, const std::string& out_secret,
               const std::string& out_eval, const std::optional<std::string>& seed_hex,
               std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(keyparams_path));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("keyparams file '" + keyparams_path + "': " + e.what());
        }
        KeyParams kp = KeyParams::from_json(j);
        Seed seed = seed_hex ? Seed::from_hex(*seed_hex) : Seed::from_os_entropy();
        auto [sk, ek] = keygen(kp, seed);
        write_file_atomic(out_secret, serialize_secret_key(sk));
        write_file_atomic(out_eval, serialize_eval_key(ek));
        return kExitOk;
    });
}

int cmd_encrypt(const std::string& secret_path, const std::string& input_path,
                const std::string& out_ct_path, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        SecretKey sk = deserialize_secret_key(read_file(secret_path));
        TensorSet ts = tensor_set_load(input_path);
        if (ts.samples.size() != 1)
            throw ParseError("input tensor file must hold exactly one sample, found " +
                             std::to_string(ts.samples.size()));
        const Tensor& x = ts.samples[0];
        if (x.shape != sk.params.input_shape)
            throw ShapeError("input shape " + shape_to_string(x.shape) +
                             " does not match keyparams input shape " +
                             shape_to_string(sk.params.input_shape));
        CtTensor ct = sk.params.backend == BackendKind::Ckks
                          ? CtTensor(ckks::encrypt(sk, x))
                          : CtTensor(tfhe::encrypt(sk, x));
        write_file_atomic(out_ct_path, serialize_ciphertext(ct));
        return kExitOk;
    });
}

int cmd_inference(const std::string& sidecar_path, const std::string& eval_path,
                  const std::string& ct_in_path, const std::string& out_ct_path,
                  std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(sidecar_path));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("sidecar file '" + sidecar_path + "': " + e.what());
        }
        CalibratedModelSidecar sc = CalibratedModelSidecar::from_json(j);

        std::filesystem::path model_path =
            std::filesystem::path(sidecar_path).parent_path() / sc.model_file;
        std::string model_bytes = read_file(model_path.string());
        if (sha256_hex(model_bytes) != sc.model_digest)
            throw ParseError("model file '" + model_path.string() +
                             "' does not match the sidecar digest");
        bool ok = false;
        ModelGraph g = load_validated_model(model_bytes, err, ok);
        if (!ok) return kExitInput;
        sc.calibrated.graph = std::move(g);

        EvalKey ek = deserialize_eval_key(read_file(eval_path));
        CtTensor ct_in = deserialize_ciphertext(read_file(ct_in_path));

        ReluPolicy policy;
        policy.degree = sc.relu_degree;
        policy.domain = sc.relu_domain;
        PlanOptions options;
        options.compose_linear = ek.params.backend == BackendKind::Tfhe;
        ExecutionPlan ep = plan(sc.calibrated, ek.params, policy, options, &sc.relu_polynomials);

        OpCounters counters;
        auto t0 = std::chrono::steady_clock::now();
        CtTensor ct_out = run_inference(ep, ek, ct_in, &counters);
        auto t1 = std::chrono::steady_clock::now();
        write_file_atomic(out_ct_path, serialize_ciphertext(ct_out));

        nlohmann::json report;
        report["backend"] = backend_name(ek.params.backend);
        report["latency_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        report["levels_consumed"] = counters.levels_consumed;
        report["flushes"] = counters.flushes;
        report["quantizations"] = counters.quantizations;
        report["output_shape"] = ep.output_spec.shape;
        out << report.dump() << "\n";
        return kExitOk;
    });
}

int cmd_decrypt(const std::string& secret_path, const std::string& ct_path,
                const std::string& out_tensor_path, std::ostream& err) {
    return run_guarded(err, [&]() -> int {
        std::string key_bytes = read_file(secret_path);
        if (key_bytes.rfind("HMEK", 0) == 0)
            throw KeyError("decrypt requires the secret key; an eval key was supplied");
        SecretKey sk = deserialize_secret_key(key_bytes);
        CtTensor ct = deserialize_ciphertext(read_file(ct_path));

        TensorSet ts;
        ts.tensor_name = "output";
        if (std::holds_alternative<CtCkks>(ct)) {
            Tensor t = ckks::decrypt(sk, std::get<CtCkks>(ct));
            ts.shape = t.shape;
            ts.samples.push_back(std::move(t));
        } else {
            Tensor t = tfhe::decrypt(sk, std::get<CtTfhe>(ct));
            ts.shape = t.shape;
            ts.samples.push_back(std::move(t));
        }
        tensor_set_save(out_tensor_path, ts);
        return kExitOk;
    });
}

}  // namespace heman
