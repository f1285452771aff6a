// Acceptance checks. One line per criterion:
//   PASS|FAIL <group>.<criterion>: <measured values>
// Usage: spi_acceptance <group>...  (metrics numerical raster physics
// formats determinism e2e, or "all" for every group except e2e).

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "detector_harness.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "spi/checkpoint.hpp"
#include "spi/errors.hpp"
#include "spi/grad_check.hpp"
#include "spi/io.hpp"
#include "spi/layers.hpp"
#include "spi/metrics.hpp"
#include "spi/pipeline.hpp"
#include "spi/preprocess.hpp"
#include "spi/simulator.hpp"
#include "spi/store.hpp"
#include "spi/workflow.hpp"
#include "temp_dir.hpp"

namespace {

using spi::Shape;
using spi::TensorD;

// Tolerances and budgets.
constexpr double kStdTol = 0.05;
constexpr double kGradTol = 1e-4;
constexpr double kConvOracleTol = 1e-5;
constexpr int kGradSeeds = 20;
constexpr double kChi2PerDofMax = 2.0;
constexpr std::size_t kRadialBins = 50;
constexpr double kFirstZero = 4.4934;
constexpr double kFirstZeroTol = 0.01;
constexpr double kCoincidentTol = 1e-12;
constexpr double kE2eF1Min = 0.70;
constexpr double kMetricsBudgetS = 1.0;
constexpr double kNumericalBudgetS = 60.0;
constexpr double kRasterBudgetS = 10.0;
constexpr double kPhysicsBudgetS = 60.0;
constexpr double kE2eRunBudgetS = 30.0 * 60.0;

int failures = 0;

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void report(const std::string& group, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s %s.%s: %s\n", pass ? "PASS" : "FAIL", group.c_str(), name.c_str(), detail.c_str());
  std::fflush(stdout);
}

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename E, typename F>
bool throws_as(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

std::vector<double> to_vec(const TensorD& t) { return {t.values().begin(), t.values().end()}; }

double weighted_sum(const TensorD& y, const TensorD& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
  return s;
}

spi::LayerParams<double> random_params(gen::Gen& g, std::size_t out, std::size_t in, std::size_t k) {
  spi::LayerParams<double> p("conv", out, in, k);
  p.weights = g.tensor<double>(p.weights.shape());
  p.bias = g.tensor<double>(p.bias.shape());
  return p;
}

// ------------------------------------------------------------------ metrics

void metrics_group() {
  const Stopwatch clock;
  const std::string G = "metrics";
  const double s1 = spi::population_std(std::vector<double>{1441, 1572, 1830, 1804, 1707});
  const double s2 = spi::population_std(std::vector<double>{1860, 1830, 1608, 1989, 2263});
  report(G, "population_std_146.3", std::abs(s1 - 146.3) <= kStdTol, fmt("%.4f", s1));
  report(G, "population_std_214.9", std::abs(s2 - 214.9) <= kStdTol, fmt("%.4f", s2));

  const auto f1a = spi::f1_score(0.98, 0.72);
  const auto f1b = spi::f1_score(0.83, 0.39);
  report(G, "f1_0.98_0.72", f1a && std::round(*f1a * 100.0) == 83.0, fmt("%.5f", f1a.value_or(-1)));
  report(G, "f1_0.83_0.39", f1b && std::round(*f1b * 100.0) == 53.0, fmt("%.5f", f1b.value_or(-1)));

  const double iou = spi::selection_iou(1379, 1196, 792);
  report(G, "iou_1379_1196_792", spi::percent(iou, 0) == "44", fmt("%.5f -> %s%%", iou, spi::percent(iou, 0).c_str()));

  std::vector<spi::LabeledId> universe;
  for (spi::PatternId i = 0; i < 18213; ++i) universe.push_back({i, i % 7 == 0});
  const auto split = spi::split_dataset(universe, {120, 120, 0, 0}, 1);
  report(G, "split_18213_minus_240", split.train.size() == 240 && split.test.size() == 17973,
         fmt("train %zu test %zu", split.train.size(), split.test.size()));

  const double t = clock.seconds();
  report(G, "runtime", t < kMetricsBudgetS, fmt("%.3f s (budget %.0f s)", t, kMetricsBudgetS));
}

// ---------------------------------------------------------------- numerical

void numerical_group() {
  const Stopwatch clock;
  const std::string G = "numerical";

  double conv_worst = 0.0;
  for (int s = 0; s < kGradSeeds; ++s) {
    gen::Gen g(1000 + s);
    const std::size_t stride = g.size(1, 2), pad = g.size(0, 1);
    TensorD x = g.tensor<double>(Shape{g.size(1, 2), 2, g.size(4, 7), g.size(4, 7)});
    auto p = random_params(g, 3, 2, 3);
    const TensorD c = g.tensor<double>(spi::conv2d(x, p, stride, pad).shape());
    p.zero_grad();
    const TensorD gx = spi::conv2d_backward(x, p, c, stride, pad);
    const spi::GradGroup groups[] = {{"input", x.values(), gx.values()},
                                     {"weights", p.weights.values(), p.weight_grad.values()},
                                     {"bias", p.bias.values(), p.bias_grad.values()}};
    conv_worst = std::max(conv_worst, spi::grad_check([&] { return weighted_sum(spi::conv2d(x, p, stride, pad), c); },
                                                      groups).worst());
  }
  report(G, "grad_conv2d", conv_worst <= kGradTol, fmt("worst rel err %.2e over %d seeds", conv_worst, kGradSeeds));

  double leaky_worst = 0.0;
  for (int s = 0; s < kGradSeeds; ++s) {
    gen::Gen g(2000 + s);
    TensorD x = g.tensor<double>(Shape{1, 2, 5, 5});
    for (double& v : x.values()) {
      while (std::abs(v) < 0.01) v = g.real(-1, 1);
    }
    const TensorD c = g.tensor<double>(x.shape());
    const TensorD gx = spi::leaky_relu_backward(x, c);
    const spi::GradGroup groups[] = {{"input", x.values(), gx.values()}};
    leaky_worst = std::max(leaky_worst,
                           spi::grad_check([&] { return weighted_sum(spi::leaky_relu(x), c); }, groups).worst());
  }
  report(G, "grad_leaky_relu", leaky_worst <= kGradTol, fmt("worst rel err %.2e over %d seeds", leaky_worst, kGradSeeds));

  double pool_worst = 0.0;
  for (int s = 0; s < kGradSeeds; ++s) {
    gen::Gen g(3000 + s);
    TensorD x(Shape{1, 2, g.size(4, 7), g.size(4, 7)});
    std::vector<double> levels(x.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
    std::shuffle(levels.begin(), levels.end(), g.rng());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = levels[i];
    const auto r = spi::maxpool2d(x);
    const TensorD c = g.tensor<double>(r.output.shape());
    const TensorD gx = spi::maxpool2d_backward(r, c);
    const spi::GradGroup groups[] = {{"input", x.values(), gx.values()}};
    pool_worst = std::max(pool_worst,
                          spi::grad_check([&] { return weighted_sum(spi::maxpool2d(x).output, c); }, groups).worst());
  }
  report(G, "grad_maxpool2d", pool_worst <= kGradTol, fmt("worst rel err %.2e over %d seeds", pool_worst, kGradSeeds));

  double det_worst = 0.0;
  std::string det_where;
  for (int s = 0; s < kGradSeeds; ++s) {
    gen::Gen g(4000 + s);
    auto k = harness::random_case(g, harness::small_config(), 2);
    const auto rep = harness::check(k);
    for (const auto& group : rep.groups) {
      if (group.max_relative_error > det_worst) {
        det_worst = group.max_relative_error;
        det_where = group.name;
      }
    }
  }
  report(G, "grad_full_detector", det_worst <= kGradTol,
         fmt("worst rel err %.2e (%s) over %d seeds", det_worst, det_where.c_str(), kGradSeeds));

  double oracle_worst = 0.0;
  for (int s = 0; s < kGradSeeds; ++s) {
    gen::Gen g(5000 + s);
    const TensorD x = g.tensor<double>(Shape{g.size(1, 2), 3, g.size(6, 12), g.size(6, 12)});
    const auto p = random_params(g, 4, 3, 3);
    const std::size_t stride = g.size(1, 2), pad = g.size(0, 1);
    oracle::Dims yd{};
    const auto expected = oracle::conv2d(to_vec(x), {x.shape().n, x.shape().c, x.shape().h, x.shape().w},
                                         to_vec(p.weights), 4, 3, to_vec(p.bias), stride, pad, yd);
    oracle_worst = std::max(oracle_worst, oracle::max_relative_error(to_vec(spi::conv2d(x, p, stride, pad)), expected));
    const auto yf = spi::conv2d(x.cast<float>(), p.cast<float>(), stride, pad);
    for (std::size_t i = 0; i < yf.size(); ++i) {
      oracle_worst =
          std::max(oracle_worst, std::abs(yf[i] - expected[i]) / std::max(1.0, std::abs(expected[i])));
    }
  }
  report(G, "conv_vs_naive_oracle", oracle_worst <= kConvOracleTol,
         fmt("worst rel err %.2e (double and float) over %d seeds", oracle_worst, kGradSeeds));

  const double t = clock.seconds();
  report(G, "runtime", t < kNumericalBudgetS, fmt("%.2f s (budget %.0f s)", t, kNumericalBudgetS));
}

// ------------------------------------------------------------------- raster

spi::Pattern single_pattern(std::uint64_t seed, double radius_nm = 35.0) {
  spi::SimConfig c;
  std::mt19937_64 rng(seed);
  const spi::ParticleScene scene{spi::SceneKind::single, {spi::Particle{radius_nm, 0, 0, 1}}};
  return spi::render_pattern(scene, c, rng, 1);
}

void raster_group() {
  const Stopwatch clock;
  const std::string G = "raster";
  const spi::Pattern p = single_pattern(21);
  spi::RenderSpec spec{spi::Colormap::jet, spi::IntensityScale::logarithmic};
  const auto win = spi::crop_window(p.geometry, spec);
  const auto img = spi::rasterize(p, spec);
  report(G, "output_3x954x1855_from_123x240",
         win.rows == 123 && win.cols == 240 && img.rows == 954 && img.cols == 1855 &&
             img.data.size() == 3u * 954u * 1855u,
         fmt("crop %zux%zu -> 3x%zux%zu (%zu values)", win.rows, win.cols, img.rows, img.cols, img.data.size()));

  const auto v = spi::scaled_crop(p, spec);
  const auto rows = spi::block_index_map(win.rows, img.rows);
  const auto cols = spi::block_index_map(win.cols, img.cols);
  std::size_t bad = 0;
  for (std::size_t r = 0; r < img.rows; ++r) {
    for (std::size_t c = 0; c < img.cols; ++c) {
      const spi::Rgb want = spi::jet(v[rows[r] * win.cols + cols[c]]);
      if (img.at(0, r, c) != want.r || img.at(1, r, c) != want.g || img.at(2, r, c) != want.b) ++bad;
    }
  }
  std::size_t unmapped = 0;
  for (std::size_t i = 0; i < win.rows; ++i) unmapped += std::count(rows.begin(), rows.end(), i) == 0;
  for (std::size_t j = 0; j < win.cols; ++j) unmapped += std::count(cols.begin(), cols.end(), j) == 0;
  report(G, "blocks_monochrome", bad == 0 && unmapped == 0,
         fmt("%zu off-colour pixels, %zu detector pixels without a block", bad, unmapped));

  const spi::Rgb lo = spi::jet(0.0f), hi = spi::jet(1.0f);
  report(G, "jet_endpoints", lo.r == 0.0f && lo.g == 0.0f && lo.b == 0.5f && hi.r == 0.5f && hi.g == 0.0f && hi.b == 0.0f,
         fmt("jet(0)=(%g,%g,%g) jet(1)=(%g,%g,%g)", lo.r, lo.g, lo.b, hi.r, hi.g, hi.b));

  bool gray_ok = true;
  for (auto scale : {spi::IntensityScale::linear, spi::IntensityScale::logarithmic}) {
    const auto gimg = spi::rasterize(p, spi::RenderSpec{spi::Colormap::grayscale, scale});
    const std::size_t plane = gimg.rows * gimg.cols;
    gray_ok = gray_ok && std::equal(gimg.data.begin(), gimg.data.begin() + plane, gimg.data.begin() + plane) &&
              std::equal(gimg.data.begin(), gimg.data.begin() + plane, gimg.data.begin() + 2 * plane);
  }
  report(G, "grayscale_channels_identical", gray_ok, "linear and log");

  const spi::RenderSpec lin{spi::Colormap::jet, spi::IntensityScale::linear};
  const auto base = spi::rasterize(p, lin);
  std::string alphas;
  bool invariant = true;
  for (double alpha : {0.5, 3.0, 1000.0}) {
    spi::Pattern q = p;
    for (float& c : q.counts) c = static_cast<float>(c * alpha);
    const bool same = spi::rasterize(q, lin).data == base.data;
    invariant = invariant && same;
    alphas += fmt("%s%g:%s", alphas.empty() ? "" : " ", alpha, same ? "equal" : "differs");
  }
  report(G, "linear_scale_invariance", invariant, alphas);

  const double t = clock.seconds();
  report(G, "runtime", t < kRasterBudgetS, fmt("%.2f s (budget %.0f s)", t, kRasterBudgetS));
}

// ------------------------------------------------------------------ physics

void physics_group() {
  const Stopwatch clock;
  const std::string G = "physics";
  spi::SimConfig config;
  config.background = 0.0;
  config.fluence = 1000.0;
  const spi::DetectorGeometry& geo = config.geometry;
  const double radius = 35.0;

  // Radial bins out to the largest circle inside the panel.
  const double r_max = std::min({geo.beam_row, geo.beam_col, static_cast<double>(geo.rows) - 1.0 - geo.beam_row,
                                 static_cast<double>(geo.cols) - 1.0 - geo.beam_col});
  double worst_chi2 = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    std::mt19937_64 rng(seed);
    const spi::ParticleScene scene{spi::SceneKind::single, {spi::Particle{radius, 0, 0, 1}}};
    const spi::Pattern p = spi::render_pattern(scene, config, rng, 0);
    std::vector<double> observed(kRadialBins, 0.0), expected(kRadialBins, 0.0);
    for (std::size_t r = 0; r < geo.rows; ++r) {
      for (std::size_t c = 0; c < geo.cols; ++c) {
        const double dr = static_cast<double>(r) - geo.beam_row, dc = static_cast<double>(c) - geo.beam_col;
        const double rp = std::hypot(dr, dc);
        if (rp >= r_max) continue;
        const auto b = static_cast<std::size_t>(rp / r_max * kRadialBins);
        const double q = oracle::momentum_transfer(geo.wavelength_nm, geo.distance_m, rp * geo.pixel_size_m);
        const double f = oracle::sphere_form_factor(q * radius);
        expected[b] += config.fluence * f * f;
        observed[b] += p.at(r, c);
      }
    }
    double chi2 = 0.0;
    for (std::size_t b = 0; b < kRadialBins; ++b) {
      chi2 += (observed[b] - expected[b]) * (observed[b] - expected[b]) / expected[b];
    }
    const double per_dof = chi2 / static_cast<double>(kRadialBins);
    worst_chi2 = std::max(worst_chi2, per_dof);
    per_seed += fmt("%s%.3f", per_seed.empty() ? "" : ", ", per_dof);
  }
  report(G, "azimuthal_profile_chi2", worst_chi2 < kChi2PerDofMax,
         fmt("chi2/dof over %zu bins = %s (limit %.1f)", kRadialBins, per_seed.c_str(), kChi2PerDofMax));

  // First zero of the simulated intensity on a fine 1-D q grid.
  spi::QMap line;
  const std::size_t n = 300001;
  line.rows = 1;
  line.cols = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double qr = 3.0 + 3.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    line.q.push_back(qr / radius);
    line.qx.push_back(qr / radius);
    line.qy.push_back(0.0);
    line.radius_px.push_back(0.0);
  }
  const spi::ParticleScene one{spi::SceneKind::single, {spi::Particle{radius, 0, 0, 1}}};
  const auto intensity = spi::expected_intensity(one, line, config.fluence, 0.0);
  const auto lowest = std::min_element(intensity.begin(), intensity.begin() + static_cast<long>(n / 2));
  const double zero_qr = line.q[static_cast<std::size_t>(lowest - intensity.begin())] * radius;
  report(G, "first_zero_qR", std::abs(zero_qr - kFirstZero) <= kFirstZeroTol,
         fmt("qR = %.5f (target %.4f +- %.2f, oracle %.5f)", zero_qr, kFirstZero, kFirstZeroTol,
             oracle::first_form_factor_zero()));

  const auto map = spi::qmap(geo);
  const spi::ParticleScene pair{spi::SceneKind::multiple,
                                {spi::Particle{radius, 40, -25, 1}, spi::Particle{radius, 40, -25, 1}}};
  const spi::ParticleScene lone{spi::SceneKind::single, {spi::Particle{radius, 40, -25, 1}}};
  const auto i2 = spi::expected_intensity(pair, map, config.fluence, 0.0);
  const auto i1 = spi::expected_intensity(lone, map, config.fluence, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < i1.size(); ++i) {
    worst = std::max(worst, std::abs(i2[i] - 4.0 * i1[i]) / std::max(4.0 * i1[i], 1e-300));
  }
  report(G, "coincident_pair_4x", worst <= kCoincidentTol, fmt("max rel deviation %.2e over %zu pixels", worst, i1.size()));

  const double t = clock.seconds();
  report(G, "runtime", t < kPhysicsBudgetS, fmt("%.2f s (budget %.0f s)", t, kPhysicsBudgetS));
}

// ------------------------------------------------------------------ formats

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_model_bits(const spi::Model& a, const spi::Model& b) {
  const auto& la = a.network.layers();
  const auto& lb = b.network.layers();
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (!same_bits(la[i].weights.values(), lb[i].weights.values()) ||
        !same_bits(la[i].bias.values(), lb[i].bias.values()) ||
        !same_bits(la[i].weight_velocity.values(), lb[i].weight_velocity.values()) ||
        !same_bits(la[i].bias_velocity.values(), lb[i].bias_velocity.values())) {
      return false;
    }
  }
  return a.config == b.config && a.iteration == b.iteration;
}

void formats_group() {
  const std::string G = "formats";
  testutil::TempDir tmp;

  spi::Model model = spi::build_model(spi::DetectorConfig{}, 7);
  model.iteration = 1234;
  gen::Gen g(41);
  for (auto& layer : model.network.layers()) {
    for (float& v : layer.weight_velocity.values()) v = static_cast<float>(g.real(-1e-3, 1e-3));
    for (float& v : layer.bias_velocity.values()) v = static_cast<float>(g.real(-1e-3, 1e-3));
  }
  auto w = model.network.layers().front().weights.values();
  w[0] = -0.0f;
  w[1] = std::numeric_limits<float>::denorm_min();
  w[2] = std::numeric_limits<float>::max();
  const auto bytes = spi::serialize_checkpoint(model);
  spi::save_checkpoint(model, tmp / "m.ckpt", true);
  const spi::Model back = spi::load_checkpoint(tmp / "m.ckpt");
  report(G, "checkpoint_roundtrip_bit_exact",
         same_model_bits(model, back) && spi::serialize_checkpoint(back) == bytes && spi::read_file(tmp / "m.ckpt") == bytes,
         fmt("%zu bytes, weights and velocities compared bitwise", bytes.size()));

  spi::DetectorGeometry geo;
  geo.rows = 40;
  geo.cols = 60;
  geo.beam_row = 20;
  geo.beam_col = 30;
  auto ds = spi::Dataset::open_or_create(tmp / "dataset", geo);
  std::vector<spi::Pattern> written;
  for (spi::PatternId id = 0; id < 4; ++id) {
    spi::Pattern p(id, geo);
    for (float& v : p.counts) v = static_cast<float>(g.real(0.0, 1e4));
    p.counts[0] = 0.0f;
    p.counts[1] = std::numeric_limits<float>::denorm_min();
    spi::ManifestEntry e;
    e.id = id;
    e.truth = id % 2 == 0 ? spi::Label::single : spi::Label::non_single;
    ds.write_pattern(p, e);
    written.push_back(p);
  }
  ds.save_manifest();
  const auto reopened = spi::Dataset::open(tmp / "dataset");
  bool frames_ok = true;
  for (const auto& p : written) {
    const auto q = reopened.read_pattern(p.id);
    frames_ok = frames_ok && same_bits(p.counts, q.counts) &&
                spi::encode_frame(q) == spi::encode_frame(p) &&
                spi::decode_frame(spi::encode_frame(p), geo, p.id).counts == p.counts;
  }
  report(G, "pattern_store_roundtrip_bit_exact", frames_ok && reopened.manifest().entries.size() == 4,
         fmt("%zu frames of %zu pixels through the on-disk dataset", written.size(), geo.pixels()));

  // Every truncation point of a checkpoint, and targeted damage.
  std::size_t cuts = 0, typed = 0;
  for (std::size_t len = 0; len < bytes.size(); len += len < 2048 ? 1 : 97) {
    ++cuts;
    typed += throws_as<spi::CheckpointError>(
        [&] { (void)spi::deserialize_checkpoint(std::span<const std::uint8_t>(bytes.data(), len)); });
  }
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  auto trailing = bytes;
  trailing.push_back(0);
  auto bad_header = bytes;
  bad_header[12] = '#';
  const bool ckpt_typed =
      typed == cuts &&
      throws_as<spi::NotACheckpointError>([&] { (void)spi::deserialize_checkpoint(bad_magic); }) &&
      throws_as<spi::CorruptionError>([&] { (void)spi::deserialize_checkpoint(trailing); }) &&
      throws_as<spi::CheckpointError>([&] { (void)spi::deserialize_checkpoint(bad_header); }) &&
      throws_as<spi::TruncatedCheckpointError>(
          [&] { (void)spi::deserialize_checkpoint(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1)); });
  report(G, "corrupt_checkpoint_typed_errors", ckpt_typed,
         fmt("%zu/%zu truncations rejected with CheckpointError; bad magic, trailing bytes, bad header typed", typed,
             cuts));

  const auto frame_path = tmp / "dataset" / reopened.manifest().find(1)->file;
  const auto frame_bytes = spi::read_file(frame_path);
  std::size_t frame_cuts = 0, frame_typed = 0;
  for (std::size_t len = 0; len < frame_bytes.size(); len += 313) {
    ++frame_cuts;
    frame_typed += throws_as<spi::CorruptionError>(
        [&] { (void)spi::decode_frame(std::span<const std::uint8_t>(frame_bytes.data(), len), geo, 1); });
  }
  std::filesystem::resize_file(frame_path, frame_bytes.size() - 4);
  const bool truncated_file = throws_as<spi::CorruptionError>([&] { (void)reopened.read_pattern(1); });
  spi::write_file_atomic(tmp / "dataset" / "manifest.json", std::string_view("{\"format_version\": 1, \"entr"));
  const bool manifest = throws_as<spi::CorruptionError>([&] { (void)spi::Dataset::open(tmp / "dataset"); });
  spi::LabelLog log(tmp / "labels.jsonl");
  log.append({1, spi::Label::single, std::nullopt, "human", spi::utc_timestamp_now()});
  std::ofstream(tmp / "labels.jsonl", std::ios::app) << "{\"id\": 2, \"lab\n";
  const bool labels = throws_as<spi::CorruptionError>([&] { (void)log.load_all(); });
  spi::write_file_atomic(tmp / "sel.json", std::string_view("{\"method\": \"x\", \"ids\": [1, 2"));
  const bool selection = throws_as<spi::ValidationError>([&] { (void)spi::read_selection(tmp / "sel.json"); });
  report(G, "corrupt_store_typed_errors",
         frame_typed == frame_cuts && truncated_file && manifest && labels && selection,
         fmt("frames %zu/%zu CorruptionError, truncated file %d, manifest %d, labels %d, selection %d", frame_typed,
             frame_cuts, truncated_file, manifest, labels, selection));
}

// ------------------------------------------------------------- determinism

std::vector<spi::Example> simulated_examples(spi::Store& store, const spi::TrainConfig& config) {
  return spi::load_training_data(store, config).train;
}

void determinism_group() {
  const std::string G = "determinism";
  testutil::TempDir tmp;
  spi::Store store(tmp.path());
  spi::SimConfig sim;
  sim.singles = 8;
  sim.negatives = 16;
  sim.split = "train";
  sim.seed = 51;
  (void)spi::simulate_into_store(store, sim);

  spi::TrainConfig config;
  config.iterations = 40;
  config.checkpoint_every = 20;
  config.batch_size = 4;
  config.seed = 9;
  const auto examples = simulated_examples(store, config);

  auto run = [&](const std::filesystem::path& dir) {
    spi::TrainOptions options;
    options.checkpoint_dir = dir;
    options.resume = false;
    return spi::train(config, examples, options);
  };
  const auto a = run(tmp / "a");
  const auto b = run(tmp / "b");
  double max_diff = 0.0;
  for (std::size_t i = 0; i < std::min(a.loss_curve.size(), b.loss_curve.size()); ++i) {
    max_diff = std::max(max_diff, std::abs(a.loss_curve[i] - b.loss_curve[i]));
  }
  report(G, "loss_curve_identical", a.loss_curve == b.loss_curve && a.loss_curve.size() == 40u,
         fmt("%zu losses, max difference %.3g", a.loss_curve.size(), max_diff));
  bool bytes_equal = a.checkpoints.size() == b.checkpoints.size() && !a.checkpoints.empty();
  std::size_t total = 0;
  for (const auto& rec : a.checkpoints) {
    const auto name = std::to_string(rec.iteration) + ".ckpt";
    const auto x = spi::read_file(tmp / "a" / name), y = spi::read_file(tmp / "b" / name);
    bytes_equal = bytes_equal && x == y;
    total += x.size();
  }
  bytes_equal = bytes_equal && spi::read_file(tmp / "a" / "loss.csv") == spi::read_file(tmp / "b" / "loss.csv");
  report(G, "checkpoint_bytes_identical", bytes_equal,
         fmt("%zu checkpoints, %zu bytes, default %d-input detector", a.checkpoints.size(), total,
             config.detector.input_size));
}

// --------------------------------------------------------------------- e2e

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = from; i < from + count; ++i) s += v[i];
  return s / static_cast<double>(count);
}

bool subset_of(const std::set<spi::PatternId>& a, const std::set<spi::PatternId>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

void e2e_group() {
  const std::string G = "e2e";
  testutil::TempDir tmp;
  spi::Store store(tmp.path());
  const Stopwatch sim_clock;
  spi::SimConfig train_sim;
  train_sim.singles = 165;
  train_sim.negatives = 390;
  train_sim.split = "train";
  train_sim.seed = 101;
  spi::SimConfig val_sim = train_sim;
  val_sim.singles = 53;
  val_sim.negatives = 283;
  val_sim.split = "validation";
  val_sim.seed = 102;
  (void)spi::simulate_into_store(store, train_sim);
  (void)spi::simulate_into_store(store, val_sim);

  const spi::TrainConfig base;
  const auto data = spi::load_training_data(store, base);
  std::printf("simulated and rendered %zu train / %zu validation patterns in %.1f s\n", data.train.size(),
              data.validation.size(), sim_clock.seconds());

  bool loss_ok = true, f1_ok = true, saturation_ok = true, stable_ok = true, nested_ok = true, time_ok = true;
  std::string loss_detail, f1_detail, saturation_detail, stable_detail, nested_detail, time_detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    spi::TrainConfig config = base;
    config.seed = seed;
    spi::TrainOptions options;
    options.validation = data.validation;
    options.on_progress = [&](const spi::TrainProgress& p) {
      if (p.iteration % 500 == 0) {
        std::printf("  seed %llu iteration %ld loss %.4f validation F1 %.3f\n", static_cast<unsigned long long>(seed),
                    p.iteration, p.loss, p.validation_f1.value_or(0.0));
        std::fflush(stdout);
      }
    };
    const Stopwatch clock;
    const spi::ModelFamily family = spi::train(config, data.train, options);
    const double seconds = clock.seconds();
    time_ok = time_ok && seconds < kE2eRunBudgetS;
    time_detail += fmt("%sseed %llu %.0f s", time_detail.empty() ? "" : ", ", static_cast<unsigned long long>(seed),
                       seconds);

    const auto& loss = family.loss_curve;
    const double start = window_mean(loss, 0, 100), end = window_mean(loss, loss.size() - 100, 100);
    loss_ok = loss_ok && end < start;
    loss_detail += fmt("%sseed %llu %.4f -> %.4f", loss_detail.empty() ? "" : ", ",
                       static_cast<unsigned long long>(seed), start, end);

    std::vector<double> f1;
    for (const auto& rec : family.checkpoints) f1.push_back(rec.validation ? rec.validation->f1.value_or(0.0) : 0.0);
    double last5 = 0.0;
    for (std::size_t i = f1.size() - 5; i < f1.size(); ++i) last5 += f1[i] / 5.0;
    f1_ok = f1_ok && last5 >= kE2eF1Min;
    f1_detail += fmt("%sseed %llu %.3f", f1_detail.empty() ? "" : ", ", static_cast<unsigned long long>(seed), last5);

    const auto sat = spi::detect_saturation(f1);
    saturation_ok = saturation_ok && sat.has_value();
    saturation_detail += fmt("%sseed %llu %s", saturation_detail.empty() ? "" : ", ",
                             static_cast<unsigned long long>(seed),
                             sat ? ("iteration " + std::to_string(family.checkpoints[*sat].iteration)).c_str() : "none");

    const auto iters = family.iterations();
    const long first = iters[iters.size() - spi::kStableCheckpoints];
    const auto stable = spi::stable_select(family, first, data.validation, config.detector.decision_threshold);
    std::size_t min_count = std::numeric_limits<std::size_t>::max();
    bool inside = true;
    for (const auto& s : stable.per_checkpoint) {
      min_count = std::min(min_count, s.ids.size());
      inside = inside && subset_of(stable.final_selection.ids, s.ids);
    }
    stable_ok = stable_ok && inside && stable.final_selection.ids.size() <= min_count;
    stable_detail += fmt("%sseed %llu |final| %zu min %zu", stable_detail.empty() ? "" : ", ",
                         static_cast<unsigned long long>(seed), stable.final_selection.ids.size(), min_count);

    const spi::Model& final_model = family.checkpoints.back().model;
    const auto strict = spi::classify(final_model, data.validation, 0.5, "t0.5");
    const auto loose = spi::classify(final_model, data.validation, 0.24, "t0.24");
    nested_ok = nested_ok && subset_of(strict.ids, loose.ids);
    nested_detail += fmt("%sseed %llu %zu of %zu", nested_detail.empty() ? "" : ", ",
                         static_cast<unsigned long long>(seed), strict.ids.size(), loose.ids.size());
  }
  report(G, "a_trailing100_loss_decreases", loss_ok, loss_detail);
  report(G, "b_final5_validation_f1", f1_ok, f1_detail + fmt(" (min %.2f)", kE2eF1Min));
  report(G, "c_saturation_detected", saturation_ok, saturation_detail);
  report(G, "d_stable_selection_nested", stable_ok, stable_detail);
  report(G, "e_threshold_nesting", nested_ok, nested_detail + " at 0.5 within 0.24");
  report(G, "runtime_per_run", time_ok, time_detail + fmt(" (target %.0f s)", kE2eRunBudgetS));
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<void()>> groups{
      {"metrics", metrics_group}, {"numerical", numerical_group},     {"raster", raster_group},
      {"physics", physics_group}, {"formats", formats_group},         {"determinism", determinism_group},
      {"e2e", e2e_group}};
  std::vector<std::string> wanted(argv + 1, argv + argc);
  if (wanted.empty() || (wanted.size() == 1 && wanted[0] == "all")) {
    wanted = {"metrics", "numerical", "raster", "physics", "formats", "determinism"};
  }
  for (const auto& name : wanted) {
    const auto it = groups.find(name);
    if (it == groups.end()) {
      std::fprintf(stderr, "unknown group '%s'\n", name.c_str());
      return 2;
    }
    try {
      it->second();
    } catch (const std::exception& e) {
      report(name, "completed", false, std::string("exception: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
