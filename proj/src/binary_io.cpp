#include "skf/binary_io.hpp"

#include <bit>
#include <cstring>

#include "skf/errors.hpp"

namespace skf {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

}  // namespace

BinaryWriter::BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw LoadError(path, "cannot open for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t len) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

void BinaryWriter::u16(std::uint16_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }
void BinaryWriter::f32(float v) { bytes(&v, sizeof v); }

void BinaryWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void BinaryWriter::close() {
    out_.flush();
    if (!out_) throw LoadError(path_, "write failed");
    out_.close();
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw LoadError(path, "cannot open for reading");
}

void BinaryReader::bytes(void* data, std::size_t len, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(in_.gcount()) != len) {
        throw LoadError(path_, std::string("truncated while reading ") + what);
    }
}

std::uint8_t BinaryReader::u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
}

std::uint16_t BinaryReader::u16(const char* what) {
    std::uint16_t v;
    bytes(&v, sizeof v, what);
    return v;
}

std::uint32_t BinaryReader::u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
}

std::uint64_t BinaryReader::u64(const char* what) {
    std::uint64_t v;
    bytes(&v, sizeof v, what);
    return v;
}

double BinaryReader::f64(const char* what) {
    double v;
    bytes(&v, sizeof v, what);
    return v;
}

float BinaryReader::f32(const char* what) {
    float v;
    bytes(&v, sizeof v, what);
    return v;
}

std::string BinaryReader::str(const char* what) {
    const std::uint32_t len = u32(what);
    if (len > (1u << 28)) throw LoadError(path_, std::string("implausible string length for ") + what);
    std::string s(len, '\0');
    bytes(s.data(), len, what);
    return s;
}

void BinaryReader::expect_magic(const std::string& magic) {
    std::string got(magic.size(), '\0');
    bytes(got.data(), got.size(), "magic");
    if (got != magic) throw LoadError(path_, "bad magic, expected " + magic);
}

bool BinaryReader::at_end() {
    return in_.peek() == std::char_traits<char>::eof();
}

}  // namespace skf
