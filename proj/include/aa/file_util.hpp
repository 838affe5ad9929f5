#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace aa {

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Little-endian byte packing.
class ByteWriter {
public:
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void bytes(std::string_view s) { buf_.append(s); }
    const std::string& str() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string_view bytes(std::size_t n);
    bool at_end() const { return pos_ == data_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const;
    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace aa
