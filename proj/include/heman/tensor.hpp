#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "heman/errors.hpp"

namespace heman {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_elements(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_to_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense row-major tensor of doubles. All numeric paths in the toolset use a
// single 64-bit real representation regardless of the on-disk element type.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_elements(shape))
            throw ShapeError("tensor data size does not match shape " + shape_to_string(shape));
    }

    static Tensor zeros(const Shape& s) {
        return Tensor(s, std::vector<double>(static_cast<std::size_t>(shape_elements(s)), 0.0));
    }

    std::int64_t element_count() const { return static_cast<std::int64_t>(data.size()); }
};

}  // namespace heman
