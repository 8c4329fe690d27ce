#include "heman/calibration.hpp"

#include <algorithm>
#include <cmath>

namespace heman {

void EdgeStats::observe(double x) {
    if (count == 0) {
        min = max = x;
    } else {
        min = std::min(min, x);
        max = std::max(max, x);
    }
    ++count;
    double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
}

EdgeStats EdgeStats::merge(const EdgeStats& a, const EdgeStats& b) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    EdgeStats r;
    r.count = a.count + b.count;
    r.min = std::min(a.min, b.min);
    r.max = std::max(a.max, b.max);
    double delta = b.mean - a.mean;
    double na = static_cast<double>(a.count), nb = static_cast<double>(b.count);
    r.mean = a.mean + delta * nb / (na + nb);
    r.m2 = a.m2 + b.m2 + delta * delta * na * nb / (na + nb);
    return r;
}

double EdgeStats::stddev() const {
    return std::sqrt(std::max(0.0, variance()));
}

namespace {

std::int64_t broadcast_index(const Shape& out, const Shape& in, std::int64_t flat) {
    // Maps a flat index in the broadcast output shape to the operand's index.
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

Tensor elementwise(const Tensor& a, const Tensor& b, const Shape& out_shape, bool mul) {
    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t i = 0; i < out.element_count(); ++i) {
        double va = a.data[broadcast_index(out_shape, a.shape, i)];
        double vb = b.data[broadcast_index(out_shape, b.shape, i)];
        out.data[i] = mul ? va * vb : va + vb;
    }
    return out;
}

Tensor conv2d(const Node& n, const Tensor& x, const Tensor& w, const Tensor* bias,
              const Shape& out_shape) {
    auto strides = n.attr_ints("strides", {1, 1});
    auto pads = n.attr_ints("pads", {0, 0, 0, 0});
    std::int64_t group = n.attr_int("group", 1);
    std::int64_t co = w.shape[0], ci_g = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    std::int64_t ih = x.shape[2], iw = x.shape[3];
    std::int64_t oh = out_shape[2], ow = out_shape[3];
    std::int64_t co_g = co / group;

    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t g = 0; g < group; ++g)
        for (std::int64_t oc = 0; oc < co_g; ++oc)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t xx = 0; xx < ow; ++xx) {
                    double acc = bias ? bias->data[g * co_g + oc] : 0.0;
                    for (std::int64_t ic = 0; ic < ci_g; ++ic)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                std::int64_t sy = y * strides[0] + ky - pads[0];
                                std::int64_t sx = xx * strides[1] + kx - pads[1];
                                if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
                                double xv = x.data[((g * ci_g + ic) * ih + sy) * iw + sx];
                                double wv =
                                    w.data[(((g * co_g + oc) * ci_g + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                    out.data[((g * co_g + oc) * oh + y) * ow + xx] = acc;
                }
    return out;
}

Tensor average_pool(const Node& n, const Tensor& x, const Shape& out_shape) {
    auto k = n.attr_ints("kernel_shape", {});
    auto strides = n.attr_ints("strides", {k[0], k[1]});
    auto pads = n.attr_ints("pads", {0, 0, 0, 0});
    bool include_pad = n.attr_int("count_include_pad", 0) != 0;
    std::int64_t c = x.shape[1], ih = x.shape[2], iw = x.shape[3];
    std::int64_t oh = out_shape[2], ow = out_shape[3];

    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                double acc = 0.0;
                std::int64_t seen = 0;
                for (std::int64_t ky = 0; ky < k[0]; ++ky)
                    for (std::int64_t kx = 0; kx < k[1]; ++kx) {
                        std::int64_t sy = y * strides[0] + ky - pads[0];
                        std::int64_t sx = xx * strides[1] + kx - pads[1];
                        if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
                        acc += x.data[(ch * ih + sy) * iw + sx];
                        ++seen;
                    }
                double denom = include_pad ? static_cast<double>(k[0] * k[1])
                                           : static_cast<double>(seen);
                out.data[(ch * oh + y) * ow + xx] = seen ? acc / denom : 0.0;
            }
    return out;
}

Tensor pad_constant(const Tensor& x, const std::vector<double>& pads, const Shape& out_shape) {
    Tensor out = Tensor::zeros(out_shape);
    std::size_t rank = x.shape.size();
    std::vector<std::int64_t> coord(rank, 0);
    for (std::int64_t i = 0; i < x.element_count(); ++i) {
        std::int64_t flat = i;
        for (std::size_t d = rank; d-- > 0;) {
            coord[d] = flat % x.shape[d];
            flat /= x.shape[d];
        }
        std::int64_t oi = 0;
        for (std::size_t d = 0; d < rank; ++d)
            oi = oi * out_shape[d] + coord[d] + static_cast<std::int64_t>(pads[d]);
        out.data[oi] = x.data[i];
    }
    return out;
}

}  // namespace

Tensor apply_node_reference(const ModelGraph& g, const Node& n,
                            const std::map<std::string, Tensor>& env) {
    auto input = [&](std::size_t i) -> const Tensor& {
        const std::string& edge = n.inputs.at(i);
        if (auto it = g.initializers.find(edge); it != g.initializers.end())
            return it->second;
        auto it = env.find(edge);
        if (it == env.end()) throw GraphError("edge '" + edge + "' not yet computed");
        return it->second;
    };
    const Shape& out_shape = g.edge_spec(n.outputs[0]).shape;

    switch (n.op) {
        case OpKind::Add:
            return elementwise(input(0), input(1), out_shape, false);
        case OpKind::Mul:
            return elementwise(input(0), input(1), out_shape, true);
        case OpKind::MatMul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            std::int64_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
            Tensor out = Tensor::zeros(out_shape);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < nn; ++j) {
                    double acc = 0.0;
                    for (std::int64_t t = 0; t < k; ++t)
                        acc += a.data[i * k + t] * b.data[t * nn + j];
                    out.data[i * nn + j] = acc;
                }
            return out;
        }
        case OpKind::Gemm: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            double alpha = n.attr_float("alpha", 1.0);
            double beta = n.attr_float("beta", 1.0);
            bool ta = n.attr_int("transA", 0) != 0;
            bool tb = n.attr_int("transB", 0) != 0;
            std::int64_t m = out_shape[0], nn = out_shape[1];
            std::int64_t k = ta ? a.shape[0] : a.shape[1];
            Tensor out = Tensor::zeros(out_shape);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < nn; ++j) {
                    double acc = 0.0;
                    for (std::int64_t t = 0; t < k; ++t) {
                        double av = ta ? a.data[t * m + i] : a.data[i * k + t];
                        double bv = tb ? b.data[j * k + t] : b.data[t * nn + j];
                        acc += av * bv;
                    }
                    out.data[i * nn + j] = alpha * acc;
                }
            if (n.inputs.size() > 2) {
                const Tensor& c = input(2);
                for (std::int64_t i = 0; i < out.element_count(); ++i)
                    out.data[i] += beta * c.data[broadcast_index(out_shape, c.shape, i)];
            }
            return out;
        }
        case OpKind::Conv: {
            const Tensor* bias = n.inputs.size() > 2 ? &input(2) : nullptr;
            return conv2d(n, input(0), input(1), bias, out_shape);
        }
        case OpKind::AveragePool:
            return average_pool(n, input(0), out_shape);
        case OpKind::Relu: {
            Tensor out = input(0);
            for (auto& v : out.data) v = std::max(0.0, v);
            out.shape = out_shape;
            return out;
        }
        case OpKind::Pad: {
            const Tensor& pads = input(1);
            return pad_constant(input(0), pads.data, out_shape);
        }
        case OpKind::Flatten:
        case OpKind::Reshape: {
            Tensor out = input(0);
            out.shape = out_shape;
            return out;
        }
    }
    throw GraphError("unreachable op kind");
}

Tensor cleartext_forward(const ModelGraph& g, const Tensor& x,
                         std::map<std::string, Tensor>* trace) {
    if (g.graph_inputs.size() != 1)
        throw ShapeError("cleartext_forward expects exactly one graph input");
    const auto& spec = g.edge_spec(g.graph_inputs[0]);
    if (x.shape != spec.shape)
        throw ShapeError("input shape " + shape_to_string(x.shape) +
                         " does not match graph input " + shape_to_string(spec.shape));

    std::map<std::string, Tensor> env;
    env[g.graph_inputs[0]] = x;
    for (auto idx : topo_order(g)) {
        const Node& n = g.nodes[idx];
        Tensor out = apply_node_reference(g, n, env);
        for (const auto& e : n.outputs) env[e] = out;
    }
    if (trace) *trace = env;
    auto it = env.find(g.graph_outputs.at(0));
    if (it == env.end()) throw GraphError("graph output was never produced");
    return it->second;
}

CalibratedModel calibrate(const ModelGraph& g, const std::vector<Tensor>& data,
                          const std::string& dataset_digest) {
    if (data.empty()) throw CalibrationError("calibration dataset is empty");
    CalibratedModel cm;
    cm.graph = g;
    cm.sample_count = static_cast<std::int64_t>(data.size());
    cm.dataset_digest = dataset_digest;
    for (const auto& e : g.value_edges()) cm.stats[e];  // ensure full key set

    for (const auto& sample : data) {
        std::map<std::string, Tensor> trace;
        cleartext_forward(g, sample, &trace);
        for (auto& [edge, st] : cm.stats) {
            const Tensor& t = trace.at(edge);
            for (double v : t.data) st.observe(v);
        }
    }
    return cm;
}

Interval edge_interval(const CalibratedModel& cm, const std::string& edge,
                       const DomainMethod& m) {
    auto it = cm.stats.find(edge);
    if (it == cm.stats.end()) throw CalibrationError("no stats for edge '" + edge + "'");
    const EdgeStats& st = it->second;
    Interval iv;
    if (m.kind == DomainMethod::MinMax) {
        iv = {st.min, st.max};
    } else {
        double s = st.stddev();
        iv = {st.mean - m.k * s, st.mean + m.k * s};
    }
    if (iv.lo >= iv.hi) {
        double c = iv.lo;
        double eps = kDegenerateEpsScale * std::max(1.0, std::abs(c));
        iv = {c - eps, c + eps};
    }
    return iv;
}

}  // namespace heman
