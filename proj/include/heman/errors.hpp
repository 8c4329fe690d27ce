#pragma once

#include <stdexcept>
#include <string>

namespace heman {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct GraphError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct ApproxError : Error { using Error::Error; };
struct ParamsError : Error { using Error::Error; };
struct DepthError : Error { using Error::Error; };
struct KeyError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct PlanError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace heman
