/**
 * @file binary_io.hpp
 * @brief Little-endian binary streams with file-aware error reporting.
 */
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace skf {

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);

    void bytes(const void* data, std::size_t len);
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void f32(float v);
    void str(const std::string& s);
    /// Flushes and throws LoadError if any write failed.
    void close();

private:
    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);

    void bytes(void* data, std::size_t len, const char* what);
    std::uint8_t u8(const char* what);
    std::uint16_t u16(const char* what);
    std::uint32_t u32(const char* what);
    std::uint64_t u64(const char* what);
    double f64(const char* what);
    float f32(const char* what);
    std::string str(const char* what);
    /// Reads a fixed-size magic string and throws on mismatch.
    void expect_magic(const std::string& magic);
    bool at_end();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
};

}  // namespace skf
