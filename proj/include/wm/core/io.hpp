#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wm::core {

/// Raised for unreadable, truncated or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes through a temporary sibling file and renames it into place; on any
/// failure the partial file is removed and the exception propagates.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

std::vector<char> read_file_bytes(const std::filesystem::path& path);

// Little-endian primitives.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f32s(std::ostream& os, std::span<const float> v);
void write_string(std::ostream& os, const std::string& s);

std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
void read_f32s(std::istream& is, std::span<float> out);
std::string read_string(std::istream& is);
void read_exact(std::istream& is, char* dst, std::size_t n);

}  // namespace wm::core
