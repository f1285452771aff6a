#include "spi/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <thread>

#include "spi/errors.hpp"
#include "spi/preprocess.hpp"
#include "spi/store.hpp"

namespace spi {

std::string to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::single: return "single";
    case SceneKind::multiple: return "multiple";
    case SceneKind::droplet: return "droplet";
    case SceneKind::blank: return "blank";
  }
  return "blank";
}

SceneKind parse_scene_kind(const std::string& text) {
  if (text == "single") return SceneKind::single;
  if (text == "multiple") return SceneKind::multiple;
  if (text == "droplet") return SceneKind::droplet;
  if (text == "blank") return SceneKind::blank;
  throw ConfigError("unknown scene kind '" + text + "'");
}

void ParticleScene::validate() const {
  if (kind == SceneKind::single && particles.size() != 1) {
    throw ConfigError("a single-hit scene needs exactly one particle, got " + std::to_string(particles.size()));
  }
  if (kind == SceneKind::blank && !particles.empty()) throw ConfigError("a blank scene cannot hold particles");
  if (kind == SceneKind::multiple && particles.size() < 2) throw ConfigError("a multiple-hit scene needs 2+ particles");
  for (const Particle& p : particles) {
    if (!(p.radius_nm > 0.0) || !(p.weight > 0.0) || !std::isfinite(p.x_nm) || !std::isfinite(p.y_nm)) {
      throw ConfigError("particle radius and weight must be positive and finite");
    }
  }
}

void SimConfig::validate() const {
  geometry.validate();
  if (!(fluence > 0.0)) throw ConfigError("fluence must be positive");
  if (!(background >= 0.0)) throw ConfigError("background must be non-negative");
  if (!(single_min_diameter_nm > 0.0) || single_max_diameter_nm < single_min_diameter_nm) {
    throw ConfigError("single-hit diameter range is empty");
  }
  if (!(droplet_min_radius_nm > 0.0) || droplet_max_radius_nm < droplet_min_radius_nm) {
    throw ConfigError("droplet radius range is empty");
  }
  if (multiple_fraction < 0.0 || droplet_fraction < 0.0 || multiple_fraction + droplet_fraction > 1.0 + 1e-12) {
    throw ConfigError("multiple_fraction + droplet_fraction must lie in [0, 1]");
  }
  if (!(box_threshold > 0.0)) throw ConfigError("box_threshold must be positive");
}

double sphere_form_factor(double x) noexcept {
  x = std::abs(x);
  if (x < 0.1) {
    const double x2 = x * x;
    return 1.0 - x2 / 10.0 + x2 * x2 / 280.0 - x2 * x2 * x2 / 15120.0;
  }
  return 3.0 * (std::sin(x) - x * std::cos(x)) / (x * x * x);
}

double sphere_volume(double radius_nm) noexcept {
  const double r = radius_nm / kReferenceRadiusNm;
  return r * r * r;
}

double sphere_amplitude(double q, double radius_nm, double weight) noexcept {
  return weight * sphere_volume(radius_nm) * sphere_form_factor(q * radius_nm);
}

std::vector<double> expected_intensity(const ParticleScene& scene, const QMap& map, double fluence,
                                       double background) {
  const std::size_t n = map.q.size();
  std::vector<double> out(n, background);
  if (scene.particles.empty()) return out;
  if (scene.particles.size() == 1) {
    const Particle& p = scene.particles.front();
    for (std::size_t i = 0; i < n; ++i) {
      const double a = sphere_amplitude(map.q[i], p.radius_nm, p.weight);
      out[i] += fluence * a * a;
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> sum{0.0, 0.0};
    for (const Particle& p : scene.particles) {
      const double a = sphere_amplitude(map.q[i], p.radius_nm, p.weight);
      sum += std::polar(a, map.qx[i] * p.x_nm + map.qy[i] * p.y_nm);
    }
    out[i] += fluence * std::norm(sum);
  }
  return out;
}

namespace {

Pattern poisson_pattern(const std::vector<double>& mean, const DetectorGeometry& geometry, std::mt19937_64& rng,
                        PatternId id) {
  Pattern pattern(id, geometry);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (mean[i] <= 0.0) continue;
    std::poisson_distribution<long> draw(mean[i]);
    pattern.counts[i] = static_cast<float>(draw(rng));
  }
  return pattern;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Particle random_sphere(const SimConfig& config, std::mt19937_64& rng) {
  Particle p;
  p.radius_nm = 0.5 * uniform(rng, config.single_min_diameter_nm, config.single_max_diameter_nm);
  return p;
}

}  // namespace

Pattern render_pattern(const ParticleScene& scene, const QMap& map, const SimConfig& config, std::mt19937_64& rng,
                       PatternId id) {
  scene.validate();
  return poisson_pattern(expected_intensity(scene, map, config.fluence, config.background), config.geometry, rng, id);
}

Pattern render_pattern(const ParticleScene& scene, const SimConfig& config, std::mt19937_64& rng, PatternId id) {
  return render_pattern(scene, qmap(config.geometry), config, rng, id);
}

ParticleScene sample_scene(SceneKind kind, const SimConfig& config, std::mt19937_64& rng) {
  ParticleScene scene;
  scene.kind = kind;
  switch (kind) {
    case SceneKind::blank: break;
    case SceneKind::single: scene.particles.push_back(random_sphere(config, rng)); break;
    case SceneKind::multiple: {
      const int count = std::uniform_int_distribution<int>(2, 3)(rng);
      scene.particles.push_back(random_sphere(config, rng));
      while (static_cast<int>(scene.particles.size()) < count) {
        Particle next = random_sphere(config, rng);
        const Particle& anchor = scene.particles.back();
        for (int attempt = 0; attempt < 100; ++attempt) {
          const double sep = uniform(rng, 1.0, 4.0) * (anchor.radius_nm + next.radius_nm);
          const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          next.x_nm = anchor.x_nm + sep * std::cos(angle);
          next.y_nm = anchor.y_nm + sep * std::sin(angle);
          const bool clear = std::all_of(scene.particles.begin(), scene.particles.end(), [&](const Particle& o) {
            return std::hypot(o.x_nm - next.x_nm, o.y_nm - next.y_nm) >= o.radius_nm + next.radius_nm;
          });
          if (clear) break;
        }
        scene.particles.push_back(next);
      }
      break;
    }
    case SceneKind::droplet: {
      Particle p;
      p.radius_nm = uniform(rng, config.droplet_min_radius_nm, config.droplet_max_radius_nm);
      // Dilute droplets: total scattering strength log-uniform in [0.3, 3]
      // reference spheres regardless of size.
      const double strength = std::exp(uniform(rng, std::log(0.3), std::log(3.0)));
      p.weight = strength / sphere_volume(p.radius_nm);
      scene.particles.push_back(p);
      break;
    }
  }
  return scene;
}

BoxAnnotation signal_box(const std::vector<double>& expected_signal, const SimConfig& config) {
  const DetectorGeometry& g = config.geometry;
  if (expected_signal.size() != g.pixels()) {
    throw ShapeError("signal map has " + std::to_string(expected_signal.size()) + " pixels, panel has " +
                     std::to_string(g.pixels()));
  }
  const RenderSpec spec;
  const CropWindow win = crop_window(g, spec);
  std::size_t rmin = win.rows, rmax = 0, cmin = win.cols, cmax = 0;
  for (std::size_t r = 0; r < win.rows; ++r) {
    for (std::size_t c = 0; c < win.cols; ++c) {
      if (expected_signal[(win.top + r) * g.cols + win.left + c] >= config.box_threshold) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
    }
  }
  if (rmin > rmax) {
    rmin = rmax = win.rows / 2;
    cmin = cmax = win.cols / 2;
  }
  const auto rows = static_cast<double>(win.rows);
  const auto cols = static_cast<double>(win.cols);
  BoxAnnotation box;
  box.cx = (static_cast<double>(cmin + cmax) + 1.0) / 2.0 / cols;
  box.cy = (static_cast<double>(rmin + rmax) + 1.0) / 2.0 / rows;
  box.w = static_cast<double>(cmax - cmin + 1) / cols;
  box.h = static_cast<double>(rmax - rmin + 1) / rows;
  return box;
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z ^ index;
}

namespace {

struct RenderedFrame {
  SimulatedFrame info;
  Pattern pattern;
};

RenderedFrame simulate_frame(const SimConfig& config, const QMap& map, SceneKind kind, std::uint64_t index,
                             PatternId id) {
  std::mt19937_64 rng(frame_seed(config.seed, index));
  const ParticleScene scene = sample_scene(kind, config, rng);
  std::vector<double> signal = expected_intensity(scene, map, config.fluence, 0.0);
  RenderedFrame out;
  out.info.id = id;
  out.info.kind = kind;
  if (kind == SceneKind::single) {
    out.info.box = signal_box(signal, config);
    out.info.diameter_nm = 2.0 * scene.particles.front().radius_nm;
  }
  for (double& v : signal) v += config.background;
  out.pattern = poisson_pattern(signal, config.geometry, rng, id);
  return out;
}

}  // namespace

std::vector<SimulatedFrame> make_dataset(const SimConfig& config, Dataset& dataset) {
  config.validate();
  if (!(dataset.geometry() == config.geometry)) {
    throw ConfigError("simulation geometry differs from the dataset geometry");
  }
  const auto multiples = static_cast<std::size_t>(std::llround(config.multiple_fraction * config.negatives));
  const auto droplets = std::min(config.negatives - multiples,
                                 static_cast<std::size_t>(std::llround(config.droplet_fraction * config.negatives)));
  std::vector<SceneKind> kinds(config.singles, SceneKind::single);
  kinds.insert(kinds.end(), multiples, SceneKind::multiple);
  kinds.insert(kinds.end(), droplets, SceneKind::droplet);
  kinds.insert(kinds.end(), config.negatives - multiples - droplets, SceneKind::blank);
  std::mt19937_64 order_rng(frame_seed(config.seed, ~std::uint64_t{0}));
  std::shuffle(kinds.begin(), kinds.end(), order_rng);

  const QMap map = qmap(config.geometry);
  const PatternId first = dataset.next_id();
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t chunk = 8 * workers;

  std::vector<SimulatedFrame> frames;
  frames.reserve(kinds.size());
  for (std::size_t begin = 0; begin < kinds.size(); begin += chunk) {
    const std::size_t end = std::min(kinds.size(), begin + chunk);
    std::vector<RenderedFrame> rendered(end - begin);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = begin + w; i < end; i += workers) {
          rendered[i - begin] = simulate_frame(config, map, kinds[i], i, first + static_cast<PatternId>(i));
        }
      });
    }
    for (auto& t : pool) t.join();
    for (RenderedFrame& f : rendered) {
      ManifestEntry entry;
      entry.id = f.info.id;
      entry.truth = f.info.kind == SceneKind::single ? Label::single : Label::non_single;
      entry.kind = to_string(f.info.kind);
      entry.box = f.info.box;
      entry.split = config.split;
      dataset.write_pattern(f.pattern, entry);
      frames.push_back(f.info);
    }
  }
  dataset.save_manifest();
  return frames;
}

}  // namespace spi
