#pragma once

#include <cstddef>
#include <vector>

namespace spi {

// pnCCD panel at the AMO endstation: 1.7 keV photons, 0.130 m sample
// distance, 75 um pixels, 512 x 1024 panel. The beam centre sits on a pixel
// centre, in (row, col) pixel coordinates.
struct DetectorGeometry {
  double distance_m = 0.130;
  double pixel_size_m = 75e-6;
  std::size_t rows = 512;
  std::size_t cols = 1024;
  double wavelength_nm = 0.729;
  double beam_row = 256.0;
  double beam_col = 512.0;

  // Throws ConfigError for non-positive physical quantities or a beam centre
  // more than one pixel outside the panel.
  void validate() const;
  [[nodiscard]] std::size_t pixels() const noexcept { return rows * cols; }

  friend bool operator==(const DetectorGeometry&, const DetectorGeometry&) = default;
};

// Per-pixel momentum transfer, row-major. q = (4 pi / lambda) sin(theta / 2),
// theta = atan(r / D). In-plane components follow the small-angle
// direction of the pixel offset: qx along columns, qy along rows.
struct QMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> q;
  std::vector<double> qx;
  std::vector<double> qy;
  std::vector<double> radius_px;

  [[nodiscard]] std::size_t index(std::size_t r, std::size_t c) const noexcept { return r * cols + c; }
};

QMap qmap(const DetectorGeometry& geometry);

// Momentum transfer at a radial distance from the beam centre, in pixels.
double q_at_radius(const DetectorGeometry& geometry, double radius_px);

}  // namespace spi
