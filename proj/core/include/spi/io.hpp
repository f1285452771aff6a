#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spi {

// Whole-file read; throws IoError if the file cannot be opened.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Writes to "<path>.tmp.<unique>" in the same directory, then renames, so
// readers never observe a partially written file. Creates parent dirs.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// Little-endian float32 packing independent of host byte order.
void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values);
void read_f32_le(std::span<const std::uint8_t> bytes, std::span<float> out);

}  // namespace spi
