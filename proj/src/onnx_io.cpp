#include "heman/onnx_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "onnx.pb.h"

namespace heman {

namespace {

Tensor tensor_from_proto(const onnx::TensorProto& t) {
    Shape shape(t.dims().begin(), t.dims().end());
    std::int64_t n = shape_elements(shape);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(n));

    using DT = onnx::TensorProto;
    switch (t.data_type()) {
        case DT::FLOAT:
            if (!t.raw_data().empty()) {
                if (t.raw_data().size() != static_cast<std::size_t>(n) * 4)
                    throw ParseError("initializer '" + t.name() + "': raw_data size mismatch");
                const char* p = t.raw_data().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    float v;
                    std::memcpy(&v, p + i * 4, 4);
                    data.push_back(static_cast<double>(v));
                }
            } else {
                for (float v : t.float_data()) data.push_back(static_cast<double>(v));
            }
            break;
        case DT::DOUBLE:
            if (!t.raw_data().empty()) {
                if (t.raw_data().size() != static_cast<std::size_t>(n) * 8)
                    throw ParseError("initializer '" + t.name() + "': raw_data size mismatch");
                const char* p = t.raw_data().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    double v;
                    std::memcpy(&v, p + i * 8, 8);
                    data.push_back(v);
                }
            } else {
                for (double v : t.double_data()) data.push_back(v);
            }
            break;
        case DT::INT64:
            if (!t.raw_data().empty()) {
                if (t.raw_data().size() != static_cast<std::size_t>(n) * 8)
                    throw ParseError("initializer '" + t.name() + "': raw_data size mismatch");
                const char* p = t.raw_data().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    std::int64_t v;
                    std::memcpy(&v, p + i * 8, 8);
                    data.push_back(static_cast<double>(v));
                }
            } else {
                for (std::int64_t v : t.int64_data()) data.push_back(static_cast<double>(v));
            }
            break;
        case DT::INT32:
            for (std::int32_t v : t.int32_data()) data.push_back(static_cast<double>(v));
            break;
        default:
            throw ParseError("initializer '" + t.name() + "': unsupported element type " +
                             std::to_string(t.data_type()));
    }
    if (static_cast<std::int64_t>(data.size()) != n)
        throw ParseError("initializer '" + t.name() + "': element count mismatch");
    return Tensor(std::move(shape), std::move(data));
}

AttrValue attr_from_proto(const onnx::AttributeProto& a) {
    using AT = onnx::AttributeProto;
    switch (a.type()) {
        case AT::INT:
            return a.i();
        case AT::FLOAT:
            return static_cast<double>(a.f());
        case AT::STRING:
            return std::string(a.s());
        case AT::INTS:
            return std::vector<std::int64_t>(a.ints().begin(), a.ints().end());
        case AT::FLOATS: {
            std::vector<double> v;
            for (float f : a.floats()) v.push_back(static_cast<double>(f));
            return v;
        }
        default:
            throw ParseError("attribute '" + a.name() + "' has unsupported type");
    }
}

Shape shape_from_value_info(const onnx::ValueInfoProto& vi) {
    if (!vi.has_type() || !vi.type().has_tensor_type())
        throw ParseError("graph input '" + vi.name() + "' is not a tensor");
    Shape s;
    for (const auto& d : vi.type().tensor_type().shape().dim()) {
        if (d.value_case() != onnx::TensorShapeProto::Dimension::kDimValue)
            throw ParseError("graph input '" + vi.name() + "' has symbolic dimensions");
        s.push_back(d.dim_value());
    }
    return s;
}

}  // namespace

ModelGraph load_model(const std::string& bytes) {
    onnx::ModelProto model;
    if (!model.ParseFromString(bytes)) throw ParseError("malformed ONNX protobuf");
    if (!model.has_graph()) throw ParseError("ONNX model has no graph");

    std::int64_t opset = 0;
    for (const auto& o : model.opset_import())
        if (o.domain().empty() || o.domain() == "ai.onnx") opset = o.version();
    if (opset != kSupportedOpset)
        throw ParseError("unsupported ONNX opset " + std::to_string(opset) +
                         " (this build accepts opset " + std::to_string(kSupportedOpset) + ")");

    ModelGraph g;
    g.opset_version = opset;
    const auto& graph = model.graph();

    for (const auto& init : graph.initializer())
        g.initializers[init.name()] = tensor_from_proto(init);

    for (const auto& vi : graph.input()) {
        if (g.initializers.count(vi.name())) continue;  // initializers may be listed as inputs
        g.graph_inputs.push_back(vi.name());
        Shape s = shape_from_value_info(vi);
        if (!s.empty() && s[0] != 1)
            throw ParseError("graph input '" + vi.name() +
                             "': only batch size 1 is accepted, got batch " +
                             std::to_string(s[0]));
        g.edges[vi.name()] = TensorSpec{std::move(s)};
    }
    for (const auto& vo : graph.output()) g.graph_outputs.push_back(vo.name());

    int anon = 0;
    for (const auto& np : graph.node()) {
        auto kind = op_kind_from_string(np.op_type());
        if (!kind)
            throw ParseError("node '" + np.name() + "' uses operator '" + np.op_type() +
                             "' outside the supported set");
        Node n;
        n.op = *kind;
        n.name = np.name().empty() ? np.op_type() + "_" + std::to_string(anon++) : np.name();
        n.inputs.assign(np.input().begin(), np.input().end());
        n.outputs.assign(np.output().begin(), np.output().end());
        for (const auto& a : np.attribute()) n.attrs[a.name()] = attr_from_proto(a);
        g.nodes.push_back(std::move(n));
    }

    check_structure(g);
    return g;
}

ModelGraph load_model_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open model file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return load_model(ss.str());
}

std::string serialize_model(const ModelGraph& g, const std::string& graph_name) {
    onnx::ModelProto model;
    model.set_ir_version(8);
    model.set_producer_name("heman");
    auto* opset = model.add_opset_import();
    opset->set_domain("");
    opset->set_version(kSupportedOpset);

    auto* graph = model.mutable_graph();
    graph->set_name(graph_name);

    auto fill_value_info = [&](onnx::ValueInfoProto* vi, const std::string& edge) {
        vi->set_name(edge);
        auto* tt = vi->mutable_type()->mutable_tensor_type();
        tt->set_elem_type(onnx::TensorProto::FLOAT);
        auto it = g.edges.find(edge);
        if (it != g.edges.end())
            for (auto d : it->second.shape)
                tt->mutable_shape()->add_dim()->set_dim_value(d);
    };
    for (const auto& in : g.graph_inputs) fill_value_info(graph->add_input(), in);
    for (const auto& out : g.graph_outputs) fill_value_info(graph->add_output(), out);

    for (const auto& [name, t] : g.initializers) {
        auto* tp = graph->add_initializer();
        tp->set_name(name);
        for (auto d : t.shape) tp->add_dims(d);
        // Reshape targets and Pad amounts must stay integer tensors.
        bool integral = true;
        for (double v : t.data)
            if (v != static_cast<double>(static_cast<std::int64_t>(v))) integral = false;
        bool is_meta = false;
        for (const auto& n : g.nodes) {
            if ((n.op == OpKind::Reshape || n.op == OpKind::Pad) && n.inputs.size() > 1 &&
                n.inputs[1] == name)
                is_meta = true;
        }
        if (is_meta && integral) {
            tp->set_data_type(onnx::TensorProto::INT64);
            for (double v : t.data) tp->add_int64_data(static_cast<std::int64_t>(v));
        } else {
            tp->set_data_type(onnx::TensorProto::FLOAT);
            for (double v : t.data) tp->add_float_data(static_cast<float>(v));
        }
    }

    for (const auto& n : g.nodes) {
        auto* np = graph->add_node();
        np->set_name(n.name);
        np->set_op_type(op_kind_name(n.op));
        for (const auto& in : n.inputs) np->add_input(in);
        for (const auto& out : n.outputs) np->add_output(out);
        for (const auto& [key, value] : n.attrs) {
            auto* a = np->add_attribute();
            a->set_name(key);
            std::visit(
                [&](auto&& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, std::int64_t>) {
                        a->set_type(onnx::AttributeProto::INT);
                        a->set_i(v);
                    } else if constexpr (std::is_same_v<T, double>) {
                        a->set_type(onnx::AttributeProto::FLOAT);
                        a->set_f(static_cast<float>(v));
                    } else if constexpr (std::is_same_v<T, std::string>) {
                        a->set_type(onnx::AttributeProto::STRING);
                        a->set_s(v);
                    } else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
                        a->set_type(onnx::AttributeProto::INTS);
                        for (auto x : v) a->add_ints(x);
                    } else {
                        a->set_type(onnx::AttributeProto::FLOATS);
                        for (auto x : v) a->add_floats(static_cast<float>(x));
                    }
                },
                value);
        }
    }

    std::string out;
    if (!model.SerializeToString(&out)) throw IoError("ONNX serialization failed");
    return out;
}

}  // namespace heman
