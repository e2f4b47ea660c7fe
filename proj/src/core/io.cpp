#include "wm/core/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace wm::core {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  try {
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
      writer(os);
      os.flush();
      if (!os) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void write_u16(std::ostream& os, std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f32(std::ostream& os, float v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f32s(std::ostream& os, std::span<const float> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}
void write_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("string too long for u16 length prefix");
  write_u16(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("unexpected end of file");
}

namespace {
template <class T>
T read_pod(std::istream& is) {
  T v;
  read_exact(is, reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

std::uint8_t read_u8(std::istream& is) { return read_pod<std::uint8_t>(is); }
std::uint16_t read_u16(std::istream& is) { return read_pod<std::uint16_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_pod<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_pod<std::uint64_t>(is); }
float read_f32(std::istream& is) { return read_pod<float>(is); }
void read_f32s(std::istream& is, std::span<float> out) {
  read_exact(is, reinterpret_cast<char*>(out.data()), out.size_bytes());
}
std::string read_string(std::istream& is) {
  const auto n = read_u16(is);
  std::string s(n, '\0');
  read_exact(is, s.data(), n);
  return s;
}

}  // namespace wm::core
