#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "heman/calibration.hpp"
#include "heman/fixtures.hpp"
#include "heman/lowering.hpp"

using namespace heman;

namespace {

Tensor random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0,
                     double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = d(rng);
    return t;
}

CalibratedModel calibrated(const ModelGraph& g, std::mt19937_64& rng, int samples = 8,
                           double lo = -1.0, double hi = 1.0) {
    std::vector<Tensor> data;
    for (int i = 0; i < samples; ++i)
        data.push_back(random_tensor(rng, g.edge_spec(g.graph_inputs[0]).shape, lo, hi));
    return calibrate(g, data);
}

// Plaintext application of a lowered plan: the plan's structure is checked
// against cleartext_forward without any backend quantization in the way.
Tensor run_plan_plaintext(const ExecutionPlan& p, const Tensor& x) {
    std::map<std::string, Tensor> env;
    env[p.input_edge] = x;
    for (const auto& s : p.steps) {
        const Tensor& a = env.at(s.input_edges.at(0));
        Tensor out = Tensor::zeros(s.out_shape);
        switch (s.kind) {
            case PlanStep::Kind::ShapeOnly:
                out.data = a.data;
                break;
            case PlanStep::Kind::LinearMap: {
                Eigen::Map<const Eigen::VectorXd> xv(a.data.data(),
                                                     static_cast<Eigen::Index>(a.data.size()));
                Eigen::VectorXd y = s.linear.matrix * xv + s.linear.bias;
                out.data.assign(y.data(), y.data() + y.size());
                break;
            }
            case PlanStep::Kind::AddPlain:
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    out.data[i] = a.data[i] + s.plain_operand[i];
                break;
            case PlanStep::Kind::MulPlain:
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    out.data[i] = a.data[i] * s.plain_operand[i];
                break;
            case PlanStep::Kind::AddCt: {
                const Tensor& b = env.at(s.input_edges.at(1));
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    out.data[i] = a.data[i] + b.data[i];
                break;
            }
            case PlanStep::Kind::MulCt: {
                const Tensor& b = env.at(s.input_edges.at(1));
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    out.data[i] = a.data[i] * b.data[i];
                break;
            }
            case PlanStep::Kind::Activation:
                for (std::size_t i = 0; i < a.data.size(); ++i)
                    out.data[i] = eval_poly_reference(s.relu_poly, a.data[i]);
                break;
        }
        env[s.output_edge] = std::move(out);
    }
    return env.at(p.output_edge);
}

void check_plan_matches_reference(ModelGraph g, std::mt19937_64& rng, double tol = 1e-9) {
    g = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g, rng);
    KeyParams kp = derive_ckks_params(cm, 128, 3);
    ExecutionPlan ep = plan(cm, kp, ReluPolicy{});
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor(rng, g.edge_spec(g.graph_inputs[0]).shape);
        Tensor want = cleartext_forward(g, x);
        Tensor got = run_plan_plaintext(ep, x);
        REQUIRE(got.shape == want.shape);
        for (std::size_t i = 0; i < want.data.size(); ++i)
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(tol));
    }
}

Node conv_node(std::vector<std::int64_t> strides, std::vector<std::int64_t> pads,
               std::int64_t group, bool with_bias) {
    Node n;
    n.op = OpKind::Conv;
    n.name = "conv";
    n.attrs["strides"] = std::move(strides);
    n.attrs["pads"] = std::move(pads);
    n.attrs["group"] = group;
    n.attrs["kernel_shape"] = std::vector<std::int64_t>{};  // filled by caller if needed
    n.inputs = {"x", "w"};
    if (with_bias) n.inputs.push_back("b");
    n.outputs = {"y"};
    return n;
}

}  // namespace

TEST_CASE("im2col matrix reproduces the reference convolution") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        std::int64_t group = 1 + static_cast<std::int64_t>(rng() % 2);
        std::int64_t ci_g = 1 + static_cast<std::int64_t>(rng() % 2);
        std::int64_t co_g = 1 + static_cast<std::int64_t>(rng() % 2);
        std::int64_t ci = ci_g * group, co = co_g * group;
        std::int64_t kh = 1 + static_cast<std::int64_t>(rng() % 3);
        std::int64_t kw = 1 + static_cast<std::int64_t>(rng() % 3);
        std::int64_t ih = kh + static_cast<std::int64_t>(rng() % 4);
        std::int64_t iw = kw + static_cast<std::int64_t>(rng() % 4);
        std::vector<std::int64_t> strides{1 + static_cast<std::int64_t>(rng() % 2),
                                          1 + static_cast<std::int64_t>(rng() % 2)};
        std::vector<std::int64_t> pads{static_cast<std::int64_t>(rng() % 2),
                                       static_cast<std::int64_t>(rng() % 2),
                                       static_cast<std::int64_t>(rng() % 2),
                                       static_cast<std::int64_t>(rng() % 2)};
        bool with_bias = rng() % 2 == 0;
        CAPTURE(trial);

        ModelGraph g;
        g.graph_inputs = {"x"};
        g.graph_outputs = {"y"};
        g.edges["x"] = TensorSpec{{1, ci, ih, iw}};
        g.initializers["w"] = random_tensor(rng, {co, ci_g, kh, kw});
        if (with_bias) g.initializers["b"] = random_tensor(rng, {co});
        Node n = conv_node(strides, pads, group, with_bias);
        n.attrs["kernel_shape"] = std::vector<std::int64_t>{kh, kw};
        g.nodes = {n};
        g = infer_shapes(std::move(g));

        Tensor x = random_tensor(rng, {1, ci, ih, iw});
        Tensor want = apply_node_reference(g, g.nodes[0], {{"x", x}});

        LinearMapPlan lm = im2col_matrix(
            {1, ci, ih, iw}, {co, ci_g, kh, kw}, strides, pads, group,
            g.initializers.at("w").data,
            with_bias ? g.initializers.at("b").data : std::vector<double>{});
        Eigen::Map<const Eigen::VectorXd> xv(x.data.data(),
                                             static_cast<Eigen::Index>(x.data.size()));
        Eigen::VectorXd y = lm.matrix * xv + lm.bias;
        REQUIRE(y.size() == static_cast<Eigen::Index>(want.data.size()));
        for (Eigen::Index i = 0; i < y.size(); ++i)
            CHECK(y[i] == doctest::Approx(want.data[static_cast<std::size_t>(i)])
                              .epsilon(1e-9));
    }
}

TEST_CASE("lowered conv plan matches the cleartext reference") {
    std::mt19937_64 rng(102);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 4, 6, 6}};
    g.initializers["w"] = random_tensor(rng, {4, 2, 3, 3});
    g.initializers["b"] = random_tensor(rng, {4});
    Node n = conv_node({2, 2}, {1, 1, 1, 1}, 2, true);
    n.attrs["kernel_shape"] = std::vector<std::int64_t>{3, 3};
    g.nodes = {n};
    check_plan_matches_reference(g, rng);
}

TEST_CASE("lowered average-pool plan matches the cleartext reference") {
    std::mt19937_64 rng(103);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 3, 6, 6}};
    Node p;
    p.op = OpKind::AveragePool;
    p.name = "pool";
    p.attrs["kernel_shape"] = std::vector<std::int64_t>{3, 3};
    p.attrs["strides"] = std::vector<std::int64_t>{2, 2};
    p.inputs = {"x"};
    p.outputs = {"y"};
    g.nodes = {p};
    check_plan_matches_reference(g, rng);
}

TEST_CASE("lowered gemm honors alpha, beta and transB") {
    std::mt19937_64 rng(104);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 5}};
    g.initializers["w"] = random_tensor(rng, {4, 5});
    g.initializers["b"] = random_tensor(rng, {4});
    Node fc;
    fc.op = OpKind::Gemm;
    fc.name = "fc";
    fc.attrs["alpha"] = 1.5;
    fc.attrs["beta"] = 0.25;
    fc.attrs["transB"] = std::int64_t{1};
    fc.inputs = {"x", "w", "b"};
    fc.outputs = {"y"};
    g.nodes = {fc};
    check_plan_matches_reference(g, rng);
}

TEST_CASE("lowered matmul matches the cleartext reference") {
    std::mt19937_64 rng(105);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 6}};
    g.initializers["w"] = random_tensor(rng, {6, 3});
    Node mm;
    mm.op = OpKind::MatMul;
    mm.name = "mm";
    mm.inputs = {"x", "w"};
    mm.outputs = {"y"};
    g.nodes = {mm};
    check_plan_matches_reference(g, rng);
}

TEST_CASE("pad lowers to a depth-free embedding") {
    std::mt19937_64 rng(106);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 1, 3, 3}};
    g.initializers["pads"] = Tensor({8}, {0, 0, 1, 1, 0, 0, 1, 1});
    Node pd;
    pd.op = OpKind::Pad;
    pd.name = "pad";
    pd.inputs = {"x", "pads"};
    pd.outputs = {"y"};
    g.nodes = {pd};
    check_plan_matches_reference(g, rng);

    // and the step must not cost a level
    ModelGraph g2 = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g2, rng);
    KeyParams kp = derive_ckks_params(cm, 128, 3);
    ExecutionPlan ep = plan(cm, kp, ReluPolicy{});
    REQUIRE(ep.steps.size() == 1);
    CHECK(ep.steps[0].kind == PlanStep::Kind::LinearMap);
    CHECK(ep.steps[0].depth_free);

    auto [sk, ek] = keygen(kp, Seed::from_u64(1));
    OpCounters c;
    CtTensor out = run_inference(ep, ek, ckks::encrypt(sk, random_tensor(rng, {1, 1, 3, 3})),
                                 &c);
    CHECK(c.levels_consumed == 0);
    CHECK(std::get<CtCkks>(out).logical_shape == Shape{1, 1, 5, 5});
}

TEST_CASE("add and mul against initializers lower to plaintext operands") {
    std::mt19937_64 rng(107);
    for (OpKind op : {OpKind::Add, OpKind::Mul}) {
        ModelGraph g;
        g.graph_inputs = {"x"};
        g.graph_outputs = {"y"};
        g.edges["x"] = TensorSpec{{1, 3, 2, 2}};
        g.initializers["c"] = random_tensor(rng, {1, 3, 1, 1});  // broadcast per channel
        Node n;
        n.op = op;
        n.name = "ew";
        n.inputs = {"x", "c"};
        n.outputs = {"y"};
        g.nodes = {n};
        g = infer_shapes(std::move(g));
        CalibratedModel cm = calibrated(g, rng);
        ExecutionPlan ep = plan(cm, derive_ckks_params(cm, 128, 3), ReluPolicy{});
        REQUIRE(ep.steps.size() == 1);
        CHECK(ep.steps[0].kind == (op == OpKind::Add ? PlanStep::Kind::AddPlain
                                                     : PlanStep::Kind::MulPlain));
        CHECK(ep.steps[0].plain_operand.size() == 12);  // broadcast to the full tensor
        check_plan_matches_reference(g, rng);
    }
}

TEST_CASE("ciphertext-ciphertext add and mul lower to AddCt / MulCt") {
    std::mt19937_64 rng(108);
    for (OpKind op : {OpKind::Add, OpKind::Mul}) {
        ModelGraph g;
        g.graph_inputs = {"x"};
        g.graph_outputs = {"y"};
        g.edges["x"] = TensorSpec{{1, 4}};
        Node n;
        n.op = op;
        n.name = "ew";
        n.inputs = {"x", "x"};
        n.outputs = {"y"};
        g.nodes = {n};
        check_plan_matches_reference(g, rng);
    }
}

TEST_CASE("the tfhe backend rejects ciphertext-ciphertext multiplication at plan time") {
    std::mt19937_64 rng(109);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 4}};
    Node n;
    n.op = OpKind::Mul;
    n.name = "sq";
    n.inputs = {"x", "x"};
    n.outputs = {"y"};
    g.nodes = {n};
    g = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g, rng, 8, 0.0, 1.0);
    KeyParams tp = derive_tfhe_params(cm, 128);
    CHECK_THROWS_AS(plan(cm, tp, ReluPolicy{}), PlanError);
    CHECK_NOTHROW(plan(cm, derive_ckks_params(cm, 128, 3), ReluPolicy{}));
}

TEST_CASE("consecutive shape-only nodes contract to one plan step") {
    std::mt19937_64 rng(110);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 2, 3, 4}};
    g.initializers["shape"] = Tensor({2}, {1, 24});
    Node fl;
    fl.op = OpKind::Flatten;
    fl.name = "fl";
    fl.attrs["axis"] = std::int64_t{1};
    fl.inputs = {"x"};
    fl.outputs = {"t"};
    Node rs;
    rs.op = OpKind::Reshape;
    rs.name = "rs";
    rs.inputs = {"t", "shape"};
    rs.outputs = {"y"};
    g.nodes = {fl, rs};
    g = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g, rng);
    ExecutionPlan ep = plan(cm, derive_ckks_params(cm, 128, 3), ReluPolicy{});
    REQUIRE(ep.steps.size() == 1);
    CHECK(ep.steps[0].kind == PlanStep::Kind::ShapeOnly);
    CHECK(ep.steps[0].input_edges.at(0) == "x");
    check_plan_matches_reference(g, rng);
}

TEST_CASE("activation steps carry the fitted surrogate and honor precomputed ones") {
    std::mt19937_64 rng(111);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 4}};
    Node r;
    r.op = OpKind::Relu;
    r.name = "act";
    r.inputs = {"x"};
    r.outputs = {"y"};
    g.nodes = {r};
    g = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g, rng);

    ReluPolicy policy;
    policy.degree = 3;
    policy.domain = DomainMethod::min_max();
    KeyParams kp = derive_ckks_params(cm, 128, 3);
    ExecutionPlan ep = plan(cm, kp, policy);
    REQUIRE(ep.steps.size() == 1);
    Polynomial want = fit_relu_polynomial(edge_interval(cm, "x", policy.domain), 3);
    REQUIRE(ep.steps[0].relu_poly.coeffs.size() == want.coeffs.size());
    for (std::size_t k = 0; k < want.coeffs.size(); ++k)
        CHECK(ep.steps[0].relu_poly.coeffs[k] == doctest::Approx(want.coeffs[k]));

    std::map<std::string, Polynomial> pre;
    Polynomial fixed;
    fixed.domain = {-1, 1};
    fixed.coeffs = {0.0, 1.0};
    pre["act"] = fixed;
    ExecutionPlan ep2 = plan(cm, kp, policy, {}, &pre);
    CHECK(ep2.steps[0].relu_poly.coeffs == fixed.coeffs);
}

TEST_CASE("eval_poly_ckks matches Horner and consumes exactly poly_depth levels") {
    Fixture f = build_fixture("cryptonets", 1, 4);
    CalibratedModel cm = calibrate(f.graph, f.calibration);
    KeyParams kp = derive_ckks_params(cm, 128, 3);
    auto [sk, ek] = keygen(kp, Seed::from_u64(3));
    std::mt19937_64 rng(112);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);

    for (int degree : {1, 3, 7}) {
        for (int trial = 0; trial < 10; ++trial) {
            Polynomial p;
            p.domain = {-2, 2};
            p.coeffs.resize(static_cast<std::size_t>(degree) + 1);
            for (auto& c : p.coeffs) c = coef(rng);
            Tensor x = random_tensor(rng, {1, 8}, -2.0, 2.0);
            CtCkks ct = ckks::encrypt(sk, x);
            CtCkks y = eval_poly_ckks(ek, ct, p);
            CHECK(ct.level - y.level == poly_depth(degree));
            Tensor dec = ckks::decrypt(sk, y);
            for (std::size_t i = 0; i < x.data.size(); ++i)
                CHECK(dec.data[i] ==
                      doctest::Approx(eval_poly_reference(p, x.data[i])).epsilon(1e-4));
        }
        // zero high-order coefficients must not change the consumed depth
        Polynomial sparse;
        sparse.domain = {-2, 2};
        sparse.coeffs.assign(static_cast<std::size_t>(degree) + 1, 0.0);
        sparse.coeffs[1] = 1.0;
        CtCkks ct = ckks::encrypt(sk, Tensor({1, 1}, {0.5}));
        CHECK(ct.level - eval_poly_ckks(ek, ct, sparse).level == poly_depth(degree));
    }
}

TEST_CASE("full fixture plans consume exactly the derived level budget") {
    for (const char* name : {"cryptonets", "lenet5", "mobilefacenets-classifier"}) {
        CAPTURE(name);
        Fixture f = build_fixture(name, 1, 4);
        CalibratedModel cm = calibrate(f.graph, f.calibration);
        KeyParams kp = derive_ckks_params(cm, 128, 3);
        int d_m = multiplicative_depth(cm, 3).d_m;
        auto [sk, ek] = keygen(kp, Seed::from_u64(4));
        ExecutionPlan ep = plan(cm, kp, ReluPolicy{});
        OpCounters c;
        CtTensor out = run_inference(ep, ek, ckks::encrypt(sk, f.calibration[0]), &c);
        CHECK(c.levels_consumed == d_m);
        CHECK(std::get<CtCkks>(out).level == kp.ckks.level_budget() - d_m);
        CHECK(std::get<CtCkks>(out).logical_shape == ep.output_spec.shape);
    }
}

TEST_CASE("compose_linear folds adjacent linear maps without changing the result") {
    Fixture f = build_fixture("mobilefacenets-classifier", 1, 4);
    CalibratedModel cm = calibrate(f.graph, f.calibration);
    KeyParams kp = derive_ckks_params(cm, 128, 3);
    auto [sk, ek] = keygen(kp, Seed::from_u64(5));

    PlanOptions composed;
    composed.compose_linear = true;
    ExecutionPlan plain_plan = plan(cm, kp, ReluPolicy{});
    ExecutionPlan fused_plan = plan(cm, kp, ReluPolicy{}, composed);
    CHECK(fused_plan.steps.size() < plain_plan.steps.size());

    OpCounters ca, cb;
    Tensor a = ckks::decrypt(
        sk, std::get<CtCkks>(run_inference(plain_plan, ek,
                                           ckks::encrypt(sk, f.calibration[0]), &ca)));
    Tensor b = ckks::decrypt(
        sk, std::get<CtCkks>(run_inference(fused_plan, ek,
                                           ckks::encrypt(sk, f.calibration[0]), &cb)));
    CHECK(cb.levels_consumed < ca.levels_consumed);
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-4));
}

TEST_CASE("a small tfhe plan tracks the cleartext reference within quantization error") {
    std::mt19937_64 rng(113);
    ModelGraph g;
    g.graph_inputs = {"x"};
    g.graph_outputs = {"y"};
    g.edges["x"] = TensorSpec{{1, 4}};
    g.initializers["w"] = random_tensor(rng, {4, 4});
    g.initializers["b"] = random_tensor(rng, {4});
    Node fc;
    fc.op = OpKind::Gemm;
    fc.name = "fc";
    fc.attrs["transB"] = std::int64_t{1};
    fc.inputs = {"x", "w", "b"};
    fc.outputs = {"z"};
    Node r;
    r.op = OpKind::Relu;
    r.name = "act";
    r.inputs = {"z"};
    r.outputs = {"y"};
    g.nodes = {fc, r};
    g = infer_shapes(std::move(g));
    CalibratedModel cm = calibrated(g, rng, 16, 0.0, 1.0);
    KeyParams kp = derive_tfhe_params(cm, 128);
    auto [sk, ek] = keygen(kp, Seed::from_u64(6));
    ExecutionPlan ep = plan(cm, kp, ReluPolicy{});

    OpCounters c;
    Tensor x = cm.graph.edge_spec("x").shape == Shape{1, 4}
                   ? random_tensor(rng, {1, 4}, 0.2, 0.8)
                   : Tensor::zeros({1, 4});
    Tensor want = cleartext_forward(g, x);
    CtTensor out = run_inference(ep, ek, tfhe::encrypt(sk, x), &c);
    Tensor got = tfhe::decrypt(sk, std::get<CtTfhe>(out), &c);
    CHECK(c.flushes >= 1);  // the relu lut must have been applied
    for (std::size_t i = 0; i < want.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 0.2);
}
