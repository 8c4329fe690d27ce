#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heman/errors.hpp"

namespace heman {

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

std::string read_file(const std::string& path);
// Writes via temp file + rename so readers never observe partial content.
void write_file_atomic(const std::string& path, const std::string& bytes);

// Little-endian binary serialization helpers for the file formats.
class BinWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    void bytes(const void* p, std::size_t n);
    void str(const std::string& s);  // length-prefixed
    const std::string& data() const { return buf_; }

  private:
    std::string buf_;
};

class BinReader {
  public:
    explicit BinReader(const std::string& data) : data_(data) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64();
    std::string raw(std::size_t n);
    std::string str();
    bool at_end() const { return pos_ == data_.size(); }

  private:
    void need(std::size_t n);
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace heman
