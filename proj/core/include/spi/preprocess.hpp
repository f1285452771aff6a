#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spi/geometry.hpp"
#include "spi/pattern.hpp"
#include "spi/tensor.hpp"

namespace spi {

// ---------------------------------------------------------------- filtering

// Zeroes excluded pixels and records them in pattern.masked (union with any
// mask already applied). Throws ShapeError on a dimension mismatch.
Pattern apply_mask(const Pattern& pattern, const Mask& mask);

// Azimuthal statistics in rings of `bin_width_px` around the beam centre.
// Bin b covers radii [b * width, (b + 1) * width).
struct RadialProfile {
  double bin_width_px = 1.0;
  std::vector<double> value;      // mean or median per bin
  std::vector<double> mean_q;     // mean momentum transfer of the bin's pixels
  std::vector<std::size_t> count; // unmasked pixels contributing

  [[nodiscard]] std::size_t bins() const noexcept { return value.size(); }
  [[nodiscard]] std::size_t bin_of(double radius_px) const noexcept {
    return static_cast<std::size_t>(radius_px / bin_width_px);
  }
};

RadialProfile azimuthal_average(const Pattern& pattern, const QMap& map, double bin_width_px = 1.0,
                                std::optional<double> max_radius_px = std::nullopt);

// Median over every unmasked pixel of every frame that falls in the bin.
// All frames must share one geometry.
RadialProfile azimuthal_median(std::span<const Pattern> background_frames, double bin_width_px = 1.0);

// counts <- max(0, counts - baseline(radius)). A missing baseline passes the
// pattern through unchanged and emits a warning on stderr.
Pattern subtract_background(const Pattern& pattern, const std::optional<RadialProfile>& baseline);

struct SizeEstimate {
  std::optional<double> diameter_nm;  // empty: indeterminate
  double score = 0.0;                 // best normalized correlation
  double photons = 0.0;
};

inline constexpr double kSizeSearchMinNm = 20.0;
inline constexpr double kSizeSearchMaxNm = 500.0;
inline constexpr double kMinPhotonsForSize = 100.0;

// Grid search over sphere diameters in 1 nm steps, maximizing the
// normalized correlation between the q^2-weighted azimuthal profile and the
// hard-sphere profile, refined by a parabola through the best three points.
// Indeterminate with fewer than kMinPhotonsForSize photons or when the best
// score sits on either end of the search range.
SizeEstimate estimate_size(const Pattern& pattern, const QMap& map);
SizeEstimate estimate_size(const Pattern& pattern);

inline constexpr double kSizeFilterMinNm = 55.0;
inline constexpr double kSizeFilterMaxNm = 84.0;

// Inclusive at both ends.
[[nodiscard]] constexpr bool size_filter(double diameter_nm, double lo = kSizeFilterMinNm,
                                         double hi = kSizeFilterMaxNm) noexcept {
  return diameter_nm >= lo && diameter_nm <= hi;
}

// ------------------------------------------------------------ rasterization

enum class Colormap { jet, grayscale };
enum class IntensityScale { linear, logarithmic };

std::string to_string(Colormap c);
std::string to_string(IntensityScale s);
Colormap parse_colormap(const std::string& text);        // "jet"/"color" | "grayscale"/"gray"
IntensityScale parse_scale(const std::string& text);     // "linear"/"lin" | "log"/"logarithmic"

struct RenderSpec {
  Colormap colormap = Colormap::jet;
  IntensityScale scale = IntensityScale::linear;
  std::size_t crop_rows = 123;
  std::size_t crop_cols = 240;
  std::size_t out_rows = 954;
  std::size_t out_cols = 1855;

  [[nodiscard]] std::string tag() const;  // e.g. "jet-linear"
  void validate() const;
  friend bool operator==(const RenderSpec&, const RenderSpec&) = default;
};

// Crop window centred on the beam pixel, shifted to stay inside the panel.
struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};
CropWindow crop_window(const DetectorGeometry& geometry, const RenderSpec& spec);

struct Rgb {
  float r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Piecewise-linear jet: r = clamp(1.5 - |4v - 3|), g = clamp(1.5 - |4v - 2|),
// b = clamp(1.5 - |4v - 1|).
Rgb jet(float v) noexcept;
Rgb colorize(float v, Colormap colormap) noexcept;

// Crop values scaled to [0, 1]: c / c_max or ln(1 + c) / ln(1 + c_max).
std::vector<float> scaled_crop(const Pattern& pattern, const RenderSpec& spec);

// Rows of the up-sampled image covered by detector row i:
// [floor(i * out / in), floor((i + 1) * out / in)).
std::vector<std::size_t> block_index_map(std::size_t detector_extent, std::size_t image_extent);

struct RenderedImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;  // channel-major: 3 x rows x cols
  RenderSpec spec;
  PatternId source_id = 0;

  [[nodiscard]] float at(std::size_t ch, std::size_t r, std::size_t c) const noexcept {
    return data[(ch * rows + r) * cols + c];
  }
};

RenderedImage rasterize(const Pattern& pattern, const RenderSpec& spec = {});

// Nearest-neighbour resampling to (1, 3, N, N): src = (floor(i * rows / N), floor(j * cols / N)).
Tensor resize_to_network(const RenderedImage& image, std::size_t target);

// Same values as resize_to_network(rasterize(pattern, spec), target) without
// materializing the full-size image.
Tensor render_network_input(const Pattern& pattern, const RenderSpec& spec, std::size_t target);

// 8-bit RGB PNG, value * 255 rounded half up; byte-stable for equal input.
std::vector<std::uint8_t> encode_png(const RenderedImage& image);

}  // namespace spi
