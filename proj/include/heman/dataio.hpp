#pragma once

#include <string>
#include <vector>

#include "heman/tensor.hpp"

namespace heman {

// Tensor exchange file: a zip archive holding manifest.json (name, shape,
// dtype=f32, sample count) plus one little-endian raw f32 blob per sample.
// Calibration datasets and single input/result tensors share this layout.
struct TensorSet {
    std::string tensor_name = "input";
    Shape shape;
    std::vector<Tensor> samples;
};

constexpr int kTensorSetFormatVersion = 1;

std::string tensor_set_pack(const TensorSet& ts);
TensorSet tensor_set_unpack(const std::string& bytes);

void tensor_set_save(const std::string& path, const TensorSet& ts);
TensorSet tensor_set_load(const std::string& path);

}  // namespace heman
