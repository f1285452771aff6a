#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spi/detector.hpp"
#include "spi/geometry.hpp"
#include "spi/pattern.hpp"

namespace spi {

class Dataset;

enum class SceneKind { single, multiple, droplet, blank };
std::string to_string(SceneKind kind);
SceneKind parse_scene_kind(const std::string& text);

struct Particle {
  double radius_nm = 35.0;
  double x_nm = 0.0;  // transverse position, along detector columns
  double y_nm = 0.0;  // along detector rows
  double weight = 1.0;
};

struct ParticleScene {
  SceneKind kind = SceneKind::blank;
  std::vector<Particle> particles;

  // single => exactly one particle, blank => none.
  void validate() const;
};

// Volumes are relative to a sphere of this radius (70 nm diameter), so the
// fluence is the q -> 0 photon count of that reference sphere.
inline constexpr double kReferenceRadiusNm = 35.0;

struct SimConfig {
  DetectorGeometry geometry;
  double fluence = 1000.0;    // photons per pixel at q -> 0, weight 1, reference volume
  double background = 0.02;   // flat photons per pixel
  double single_min_diameter_nm = 40.0;
  double single_max_diameter_nm = 100.0;
  double droplet_min_radius_nm = 150.0;
  double droplet_max_radius_nm = 400.0;
  std::size_t singles = 0;
  std::size_t negatives = 0;
  // Composition of the negatives; blanks take the remainder.
  double multiple_fraction = 0.5;
  double droplet_fraction = 0.3;
  std::uint64_t seed = 1;
  std::string split;
  double box_threshold = 1.0;  // expected signal photons bounding the annotation box

  void validate() const;
};

// 3 [sin x - x cos x] / x^3, with the series 1 - x^2/10 + x^4/280 near 0.
double sphere_form_factor(double qr) noexcept;
double sphere_volume(double radius_nm) noexcept;  // (R / R_ref)^3
double sphere_amplitude(double q, double radius_nm, double weight = 1.0) noexcept;

// Expected photons per pixel without noise:
//   fluence * |sum_k A_k(q) exp(i q.r_k)|^2 + background
std::vector<double> expected_intensity(const ParticleScene& scene, const QMap& map, double fluence,
                                       double background);

// Poisson counts with the expected intensity as mean.
Pattern render_pattern(const ParticleScene& scene, const QMap& map, const SimConfig& config, std::mt19937_64& rng,
                       PatternId id = 0);
Pattern render_pattern(const ParticleScene& scene, const SimConfig& config, std::mt19937_64& rng, PatternId id = 0);

ParticleScene sample_scene(SceneKind kind, const SimConfig& config, std::mt19937_64& rng);

// Box around the crop pixels whose expected particle signal reaches
// config.box_threshold, normalized to the rendered crop.
BoxAnnotation signal_box(const std::vector<double>& expected_signal, const SimConfig& config);

// Seed for frame `index` of a run: mix(seed) xor index.
std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index) noexcept;

struct SimulatedFrame {
  PatternId id = 0;
  SceneKind kind = SceneKind::blank;
  std::optional<BoxAnnotation> box;
  double diameter_nm = 0.0;  // singles only
};

// Renders config.singles + config.negatives frames into the dataset with
// ground-truth labels and the split tag, ids continuing after the last one
// present. Class counts are exact; kinds are interleaved by a seeded shuffle.
std::vector<SimulatedFrame> make_dataset(const SimConfig& config, Dataset& dataset);

}  // namespace spi
