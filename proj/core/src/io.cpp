#include "spi/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>
#include <thread>

#include "spi/errors.hpp"

namespace spi {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("short read from " + path.string());
  }
  return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned long> counter{0};
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(tid % 100000) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                        text.size()));
}

void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  std::uint8_t* dst = out.data() + start;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    dst[0] = static_cast<std::uint8_t>(bits);
    dst[1] = static_cast<std::uint8_t>(bits >> 8);
    dst[2] = static_cast<std::uint8_t>(bits >> 16);
    dst[3] = static_cast<std::uint8_t>(bits >> 24);
    dst += 4;
  }
}

void read_f32_le(std::span<const std::uint8_t> bytes, std::span<float> out) {
  if (bytes.size() != out.size() * 4) throw CorruptionError("float blob length mismatch");
  const std::uint8_t* src = bytes.data();
  for (float& v : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(src[0]) | (static_cast<std::uint32_t>(src[1]) << 8) |
                               (static_cast<std::uint32_t>(src[2]) << 16) |
                               (static_cast<std::uint32_t>(src[3]) << 24);
    v = std::bit_cast<float>(bits);
    src += 4;
  }
}

}  // namespace spi
