#pragma once

#include <cstdint>
#include <vector>

#include "spi/geometry.hpp"

namespace spi {

using PatternId = std::uint32_t;

// One detector frame of photon counts, row-major rows x cols.
struct Pattern {
  PatternId id = 0;
  DetectorGeometry geometry;
  std::vector<float> counts;
  // Empty means nothing masked; otherwise one flag per pixel (1 = excluded).
  std::vector<std::uint8_t> masked;

  Pattern() = default;
  Pattern(PatternId pattern_id, const DetectorGeometry& g)
      : id(pattern_id), geometry(g), counts(g.pixels(), 0.0f) {}

  [[nodiscard]] bool is_masked(std::size_t i) const noexcept { return !masked.empty() && masked[i] != 0; }
  float& at(std::size_t r, std::size_t c) noexcept { return counts[r * geometry.cols + c]; }
  [[nodiscard]] float at(std::size_t r, std::size_t c) const noexcept { return counts[r * geometry.cols + c]; }
  [[nodiscard]] double total() const noexcept;

  // Throws ValidationError if counts are non-finite or do not match the panel.
  void validate() const;
};

// Per-pixel exclusion mask (true = excluded).
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> excluded;

  Mask() = default;
  Mask(std::size_t r, std::size_t c) : rows(r), cols(c), excluded(r * c, 0) {}
  void exclude(std::size_t r, std::size_t c) { excluded[r * cols + c] = 1; }
};

}  // namespace spi
