#include "heman/dataio.hpp"

#include <cstdio>
#include <cstring>

#include "heman/util.hpp"
#include "heman/zipfile.hpp"
#include "json.hpp"

namespace heman {

namespace {

std::string sample_entry_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06zu.bin", i);
    return buf;
}

}  // namespace

std::string tensor_set_pack(const TensorSet& ts) {
    nlohmann::json manifest = {
        {"format_version", kTensorSetFormatVersion},
        {"tensor_name", ts.tensor_name},
        {"shape", ts.shape},
        {"dtype", "f32"},
        {"sample_count", ts.samples.size()},
    };
    std::map<std::string, std::string> entries;
    entries["manifest.json"] = manifest.dump(2);
    for (std::size_t i = 0; i < ts.samples.size(); ++i) {
        const Tensor& t = ts.samples[i];
        if (t.shape != ts.shape)
            throw IoError("tensor set sample " + std::to_string(i) + " has shape " +
                          shape_to_string(t.shape) + ", manifest says " +
                          shape_to_string(ts.shape));
        std::string blob(t.data.size() * 4, '\0');
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            float f = static_cast<float>(t.data[k]);
            std::memcpy(blob.data() + 4 * k, &f, 4);
        }
        entries[sample_entry_name(i)] = std::move(blob);
    }
    return zip_pack(entries);
}

TensorSet tensor_set_unpack(const std::string& bytes) {
    auto entries = zip_unpack(bytes);
    auto mit = entries.find("manifest.json");
    if (mit == entries.end()) throw ParseError("tensor set: missing manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mit->second, nullptr, false);
    if (manifest.is_discarded()) throw ParseError("tensor set: manifest.json is not valid JSON");
    if (manifest.value("format_version", -1) != kTensorSetFormatVersion)
        throw ParseError("tensor set: unsupported format_version");
    if (manifest.value("dtype", "") != "f32")
        throw ParseError("tensor set: dtype must be f32");

    TensorSet ts;
    ts.tensor_name = manifest.value("tensor_name", "input");
    ts.shape = manifest.at("shape").get<Shape>();
    auto count = manifest.at("sample_count").get<std::size_t>();
    std::int64_t n = shape_elements(ts.shape);

    for (std::size_t i = 0; i < count; ++i) {
        auto it = entries.find(sample_entry_name(i));
        if (it == entries.end())
            throw ParseError("tensor set: missing entry " + sample_entry_name(i));
        const std::string& blob = it->second;
        if (blob.size() != static_cast<std::size_t>(n) * 4)
            throw ParseError("tensor set: entry " + sample_entry_name(i) + " has " +
                             std::to_string(blob.size()) + " bytes, expected " +
                             std::to_string(n * 4));
        std::vector<double> data(static_cast<std::size_t>(n));
        for (std::int64_t k = 0; k < n; ++k) {
            float f;
            std::memcpy(&f, blob.data() + 4 * k, 4);
            data[static_cast<std::size_t>(k)] = static_cast<double>(f);
        }
        ts.samples.emplace_back(ts.shape, std::move(data));
    }
    return ts;
}

void tensor_set_save(const std::string& path, const TensorSet& ts) {
    write_file_atomic(path, tensor_set_pack(ts));
}

TensorSet tensor_set_load(const std::string& path) {
    return tensor_set_unpack(read_file(path));
}

}  // namespace heman
