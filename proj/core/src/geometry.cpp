#include "spi/geometry.hpp"

#include <cmath>
#include <numbers>

#include "spi/errors.hpp"

namespace spi {

void DetectorGeometry::validate() const {
  if (!(distance_m > 0) || !(pixel_size_m > 0) || !(wavelength_nm > 0)) {
    throw ConfigError("detector distance, pixel size and wavelength must be positive");
  }
  if (rows == 0 || cols == 0) throw ConfigError("detector panel must have at least one pixel");
  if (beam_row < -1.0 || beam_row > static_cast<double>(rows) || beam_col < -1.0 ||
      beam_col > static_cast<double>(cols)) {
    throw ConfigError("beam centre lies outside the detector panel");
  }
}

double q_at_radius(const DetectorGeometry& geometry, double radius_px) {
  const double r_m = radius_px * geometry.pixel_size_m;
  const double theta = std::atan(r_m / geometry.distance_m);
  return 4.0 * std::numbers::pi / geometry.wavelength_nm * std::sin(theta / 2.0);
}

QMap qmap(const DetectorGeometry& geometry) {
  geometry.validate();
  QMap map;
  map.rows = geometry.rows;
  map.cols = geometry.cols;
  const std::size_t n = geometry.pixels();
  map.q.resize(n);
  map.qx.resize(n);
  map.qy.resize(n);
  map.radius_px.resize(n);
  for (std::size_t r = 0; r < geometry.rows; ++r) {
    const double dy = static_cast<double>(r) - geometry.beam_row;
    for (std::size_t c = 0; c < geometry.cols; ++c) {
      const double dx = static_cast<double>(c) - geometry.beam_col;
      const double radius = std::hypot(dx, dy);
      const double q = q_at_radius(geometry, radius);
      const std::size_t i = map.index(r, c);
      map.q[i] = q;
      map.radius_px[i] = radius;
      map.qx[i] = radius > 0.0 ? q * dx / radius : 0.0;
      map.qy[i] = radius > 0.0 ? q * dy / radius : 0.0;
    }
  }
  return map;
}

}  // namespace spi
