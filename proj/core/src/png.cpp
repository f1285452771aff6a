#include <algorithm>
#include <zlib.h>

#include <cmath>
#include <string_view>

#include "spi/errors.hpp"
#include "spi/preprocess.hpp"

namespace spi {
namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, std::string_view type, const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type.begin(), type.end());
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(out.size() - type_at));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t to_byte(float v) {
  const double scaled = std::floor(static_cast<double>(std::clamp(v, 0.0f, 1.0f)) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RenderedImage& image) {
  if (image.rows == 0 || image.cols == 0 || image.data.size() != 3 * image.rows * image.cols) {
    throw ShapeError("cannot encode an empty or inconsistent image as PNG");
  }
  // Filter type 0 on every scanline.
  const std::size_t stride = 1 + 3 * image.cols;
  std::vector<std::uint8_t> raw(stride * image.rows);
  for (std::size_t r = 0; r < image.rows; ++r) {
    std::uint8_t* line = raw.data() + r * stride;
    line[0] = 0;
    for (std::size_t c = 0; c < image.cols; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) line[1 + 3 * c + ch] = to_byte(image.at(ch, r, c));
    }
  }

  uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(compressed_size);
  if (compress2(compressed.data(), &compressed_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("zlib compression failed");
  }
  compressed.resize(compressed_size);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> header;
  put_u32_be(header, static_cast<std::uint32_t>(image.cols));
  put_u32_be(header, static_cast<std::uint32_t>(image.rows));
  header.insert(header.end(), {8, 2, 0, 0, 0});  // 8-bit depth, truecolour, deflate, adaptive, no interlace
  put_chunk(png, "IHDR", header);
  put_chunk(png, "IDAT", compressed);
  put_chunk(png, "IEND", {});
  return png;
}

}  // namespace spi
