#include "heman/graph.hpp"

#include <algorithm>
#include <set>

namespace heman {

namespace {

const std::pair<OpKind, const char*> kOpNames[] = {
    {OpKind::Add, "Add"},           {OpKind::Mul, "Mul"},
    {OpKind::MatMul, "MatMul"},     {OpKind::Gemm, "Gemm"},
    {OpKind::Conv, "Conv"},         {OpKind::AveragePool, "AveragePool"},
    {OpKind::Relu, "Relu"},         {OpKind::Pad, "Pad"},
    {OpKind::Flatten, "Flatten"},   {OpKind::Reshape, "Reshape"},
};

}  // namespace

const char* op_kind_name(OpKind op) {
    for (const auto& [kind, name] : kOpNames)
        if (kind == op) return name;
    return "?";
}

std::optional<OpKind> op_kind_from_string(const std::string& name) {
    for (const auto& [kind, n] : kOpNames)
        if (name == n) return kind;
    return std::nullopt;
}

std::int64_t Node::attr_int(const std::string& key, std::int64_t fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end()) return fallback;
    return std::get<std::int64_t>(it->second);
}

double Node::attr_float(const std::string& key, double fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end()) return fallback;
    return std::get<double>(it->second);
}

std::vector<std::int64_t> Node::attr_ints(const std::string& key,
                                          std::vector<std::int64_t> fallback) const {
    auto it = attrs.find(key);
    if (it == attrs.end()) return fallback;
    return std::get<std::vector<std::int64_t>>(it->second);
}

std::vector<std::string> ModelGraph::value_edges() const {
    std::vector<std::string> out = graph_inputs;
    for (const auto& n : nodes)
        for (const auto& e : n.outputs) out.push_back(e);
    return out;
}

const TensorSpec& ModelGraph::edge_spec(const std::string& edge) const {
    auto it = edges.find(edge);
    if (it == edges.end()) throw GraphError("no shape recorded for edge '" + edge + "'");
    return it->second;
}

std::string UnsupportedReport::to_string() const {
    std::string out;
    for (const auto& item : items) {
        out += "unsupported: node '" + item.node_name + "' (" + item.op + "): " +
               item.reason + "\n";
    }
    return out;
}

void check_structure(const ModelGraph& g) {
    std::set<std::string> producers;
    for (const auto& in : g.graph_inputs) {
        if (g.is_initializer(in))
            throw GraphError("edge '" + in + "' is both graph input and initializer");
        producers.insert(in);
    }
    for (const auto& [name, t] : g.initializers) producers.insert(name);
    for (const auto& n : g.nodes) {
        for (const auto& out : n.outputs) {
            if (!producers.insert(out).second)
                throw GraphError("edge '" + out + "' has more than one producer");
        }
    }
    for (const auto& n : g.nodes) {
        for (const auto& in : n.inputs) {
            if (!producers.count(in))
                throw GraphError("node '" + n.name + "' consumes unknown edge '" + in + "'");
        }
        if (n.outputs.empty())
            throw GraphError("node '" + n.name + "' has no outputs");
    }
    for (const auto& out : g.graph_outputs) {
        if (!producers.count(out))
            throw GraphError("graph output '" + out + "' has no producer");
    }
    topo_order(g);  // throws on cycles
}

namespace {

bool attr_is_default_ints(const Node& n, const std::string& key, std::int64_t want) {
    auto v = n.attr_ints(key, {});
    return std::all_of(v.begin(), v.end(), [&](std::int64_t x) { return x == want; });
}

void check_node_supported(const ModelGraph& g, const Node& n, UnsupportedReport& rep) {
    auto fail = [&](const std::string& reason) {
        rep.items.push_back({n.name, op_kind_name(n.op), reason});
    };
    switch (n.op) {
        case OpKind::Conv:
            if (!attr_is_default_ints(n, "dilations", 1)) fail("dilation != 1");
            if (n.attrs.count("auto_pad") &&
                std::get<std::string>(n.attrs.at("auto_pad")) != "NOTSET")
                fail("auto_pad other than NOTSET");
            break;
        case OpKind::AveragePool:
            if (n.attr_int("ceil_mode", 0) != 0) fail("ceil_mode != 0");
            if (n.attrs.count("auto_pad") &&
                std::get<std::string>(n.attrs.at("auto_pad")) != "NOTSET")
                fail("auto_pad other than NOTSET");
            break;
        case OpKind::Pad: {
            auto it = n.attrs.find("mode");
            if (it != n.attrs.end() && std::get<std::string>(it->second) != "constant")
                fail("pad mode other than constant");
            if (n.inputs.size() >= 3) {
                auto cv = g.initializers.find(n.inputs[2]);
                if (cv == g.initializers.end())
                    fail("non-initializer constant_value input");
                else if (!cv->second.data.empty() && cv->second.data[0] != 0.0)
                    fail("non-zero pad constant");
            }
            break;
        }
        case OpKind::Gemm:
        case OpKind::MatMul:
        case OpKind::Add:
        case OpKind::Mul:
        case OpKind::Relu:
        case OpKind::Flatten:
        case OpKind::Reshape:
            break;
    }
}

Shape conv_like_output(const Node& n, const Shape& in, const Shape& kernel_hw,
                       std::int64_t out_channels) {
    if (in.size() != 4)
        throw ShapeError("node '" + n.name + "': expected 4-D NCHW input, got " +
                         shape_to_string(in));
    auto strides = n.attr_ints("strides", {1, 1});
    auto pads = n.attr_ints("pads", {0, 0, 0, 0});
    if (strides.size() != 2 || pads.size() != 4)
        throw ShapeError("node '" + n.name + "': bad strides/pads arity");
    std::int64_t h = in[2] + pads[0] + pads[2] - kernel_hw[0];
    std::int64_t w = in[3] + pads[1] + pads[3] - kernel_hw[1];
    if (h < 0 || w < 0)
        throw ShapeError("node '" + n.name + "': kernel larger than padded input");
    return {in[0], out_channels, h / strides[0] + 1, w / strides[1] + 1};
}

Shape infer_node_shape(const ModelGraph& g, const Node& n,
                       const std::map<std::string, Shape>& known) {
    auto shape_of = [&](const std::string& edge) -> const Shape& {
        if (auto it = g.initializers.find(edge); it != g.initializers.end())
            return it->second.shape;
        auto it = known.find(edge);
        if (it == known.end())
            throw ShapeError("node '" + n.name + "': input edge '" + edge +
                             "' has no shape yet");
        return it->second;
    };

    switch (n.op) {
        case OpKind::Add:
        case OpKind::Mul: {
            // Numpy broadcasting between the two operands.
            const Shape& a = shape_of(n.inputs[0]);
            const Shape& b = shape_of(n.inputs[1]);
            Shape out(std::max(a.size(), b.size()));
            for (std::size_t i = 0; i < out.size(); ++i) {
                std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
                std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
                if (da != db && da != 1 && db != 1)
                    throw ShapeError("node '" + n.name + "': cannot broadcast " +
                                     shape_to_string(a) + " with " + shape_to_string(b));
                out[i] = std::max(da, db);
            }
            return out;
        }
        case OpKind::MatMul: {
            const Shape& a = shape_of(n.inputs[0]);
            const Shape& b = shape_of(n.inputs[1]);
            if (a.size() != 2 || b.size() != 2)
                throw ShapeError("node '" + n.name + "': only 2-D MatMul is supported");
            if (a[1] != b[0])
                throw ShapeError("node '" + n.name + "': MatMul inner dims differ (" +
                                 std::to_string(a[1]) + " vs " + std::to_string(b[0]) + ")");
            return {a[0], b[1]};
        }
        case OpKind::Gemm: {
            Shape a = shape_of(n.inputs[0]);
            Shape b = shape_of(n.inputs[1]);
            if (a.size() != 2 || b.size() != 2)
                throw ShapeError("node '" + n.name + "': Gemm expects 2-D operands");
            if (n.attr_int("transA", 0)) std::swap(a[0], a[1]);
            if (n.attr_int("transB", 0)) std::swap(b[0], b[1]);
            if (a[1] != b[0])
                throw ShapeError("node '" + n.name + "': Gemm inner dims differ (" +
                                 std::to_string(a[1]) + " vs " + std::to_string(b[0]) + ")");
            return {a[0], b[1]};
        }
        case OpKind::Conv: {
            const Shape& in = shape_of(n.inputs[0]);
            const Shape& w = shape_of(n.inputs[1]);
            if (w.size() != 4)
                throw ShapeError("node '" + n.name + "': Conv weight must be 4-D");
            std::int64_t group = n.attr_int("group", 1);
            if (in.size() == 4 && in[1] != w[1] * group)
                throw ShapeError("node '" + n.name + "': Conv channel mismatch");
            return conv_like_output(n, in, {w[2], w[3]}, w[0]);
        }
        case OpKind::AveragePool: {
            const Shape& in = shape_of(n.inputs[0]);
            auto k = n.attr_ints("kernel_shape", {});
            if (k.size() != 2)
                throw ShapeError("node '" + n.name + "': AveragePool kernel_shape required");
            Node tmp = n;
            if (!tmp.attrs.count("strides"))
                tmp.attrs["strides"] = std::vector<std::int64_t>{k[0], k[1]};
            return conv_like_output(tmp, in, {k[0], k[1]}, in[1]);
        }
        case OpKind::Relu:
            return shape_of(n.inputs[0]);
        case OpKind::Pad: {
            Shape in = shape_of(n.inputs[0]);
            auto it = g.initializers.find(n.inputs.size() > 1 ? n.inputs[1] : "");
            if (it == g.initializers.end())
                throw ShapeError("node '" + n.name + "': Pad pads must be an initializer");
            const auto& pads = it->second.data;
            if (pads.size() != 2 * in.size())
                throw ShapeError("node '" + n.name + "': pads length != 2*rank");
            for (std::size_t i = 0; i < in.size(); ++i)
                in[i] += static_cast<std::int64_t>(pads[i]) +
                         static_cast<std::int64_t>(pads[i + in.size()]);
            return in;
        }
        case OpKind::Flatten: {
            const Shape& in = shape_of(n.inputs[0]);
            std::int64_t axis = n.attr_int("axis", 1);
            if (axis < 0) axis += static_cast<std::int64_t>(in.size());
            std::int64_t head = 1, tail = 1;
            for (std::size_t i = 0; i < in.size(); ++i)
                (static_cast<std::int64_t>(i) < axis ? head : tail) *= in[i];
            return {head, tail};
        }
        case OpKind::Reshape: {
            const Shape& in = shape_of(n.inputs[0]);
            auto it = g.initializers.find(n.inputs.size() > 1 ? n.inputs[1] : "");
            if (it == g.initializers.end())
                throw ShapeError("node '" + n.name + "': Reshape shape must be an initializer");
            Shape out;
            std::int64_t known_prod = 1;
            int minus_one = -1;
            for (std::size_t i = 0; i < it->second.data.size(); ++i) {
                auto d = static_cast<std::int64_t>(it->second.data[i]);
                if (d == 0) d = in[i];
                if (d == -1) {
                    minus_one = static_cast<int>(i);
                    out.push_back(-1);
                    continue;
                }
                known_prod *= d;
                out.push_back(d);
            }
            std::int64_t total = shape_elements(in);
            if (minus_one >= 0) {
                if (total % known_prod != 0)
                    throw ShapeError("node '" + n.name + "': Reshape cannot infer -1 dim");
                out[minus_one] = total / known_prod;
            } else if (known_prod != total) {
                throw ShapeError("node '" + n.name + "': Reshape element count mismatch");
            }
            return out;
        }
    }
    throw GraphError("unreachable op kind");
}

}  // namespace

UnsupportedReport validate_supported(const ModelGraph& g) {
    UnsupportedReport rep;
    for (const auto& n : g.nodes) check_node_supported(g, n, rep);
    return rep;
}

ModelGraph infer_shapes(ModelGraph g) {
    std::map<std::string, Shape> known;
    for (const auto& in : g.graph_inputs) {
        auto it = g.edges.find(in);
        if (it == g.edges.end() || it->second.shape.empty())
            throw ShapeError("graph input '" + in + "' has no concrete shape");
        for (auto d : it->second.shape)
            if (d <= 0) throw ShapeError("graph input '" + in + "' has symbolic dims");
        known[in] = it->second.shape;
    }
    for (auto idx : topo_order(g)) {
        const Node& n = g.nodes[idx];
        Shape out = infer_node_shape(g, n, known);
        for (const auto& e : n.outputs) {
            known[e] = out;
            g.edges[e] = TensorSpec{out};
        }
    }
    return g;
}

std::vector<std::size_t> topo_order(const ModelGraph& g) {
    // Kahn's algorithm with an index-ordered ready set for determinism.
    std::map<std::string, std::vector<std::size_t>> consumers;
    std::vector<std::size_t> pending(g.nodes.size(), 0);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        std::set<std::string> outs(g.nodes[i].outputs.begin(), g.nodes[i].outputs.end());
        for (const auto& in : g.nodes[i].inputs) {
            if (g.is_initializer(in)) continue;
            if (outs.count(in)) throw GraphError("node '" + g.nodes[i].name + "' feeds itself");
            consumers[in].push_back(i);
        }
    }
    std::vector<std::size_t> indegree(g.nodes.size(), 0);
    std::map<std::string, std::size_t> producer;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        for (const auto& out : g.nodes[i].outputs) producer[out] = i;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        for (const auto& in : g.nodes[i].inputs)
            if (producer.count(in)) ++indegree[i];

    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (indegree[i] == 0) ready.insert(i);

    std::vector<std::size_t> order;
    while (!ready.empty()) {
        std::size_t i = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(i);
        for (const auto& out : g.nodes[i].outputs) {
            auto it = consumers.find(out);
            if (it == consumers.end()) continue;
            for (auto c : it->second)
                if (--indegree[c] == 0) ready.insert(c);
        }
    }
    if (order.size() != g.nodes.size()) throw GraphError("graph contains a cycle");
    return order;
}

}  // namespace heman
