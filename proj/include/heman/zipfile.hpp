#pragma once

#include <map>
#include <string>

namespace heman {

// Minimal ZIP container support (method 0 / stored entries only), enough for
// the calibration-data and tensor exchange files.
std::string zip_pack(const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> zip_unpack(const std::string& bytes);

}  // namespace heman
