#include "spi/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "spi/errors.hpp"
#include "spi/simulator.hpp"

namespace spi {

double Pattern::total() const noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!is_masked(i)) sum += counts[i];
  }
  return sum;
}

void Pattern::validate() const {
  if (counts.size() != geometry.pixels()) {
    throw ValidationError("pattern " + std::to_string(id) + " has " + std::to_string(counts.size()) +
                          " pixels, geometry expects " + std::to_string(geometry.pixels()));
  }
  if (!masked.empty() && masked.size() != counts.size()) throw ValidationError("mask length does not match pattern");
  for (float v : counts) {
    if (!std::isfinite(v)) throw ValidationError("pattern " + std::to_string(id) + " has non-finite counts");
  }
}

Pattern apply_mask(const Pattern& pattern, const Mask& mask) {
  if (mask.rows != pattern.geometry.rows || mask.cols != pattern.geometry.cols ||
      mask.excluded.size() != pattern.counts.size()) {
    throw ShapeError("mask is " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) + " but pattern is " +
                     std::to_string(pattern.geometry.rows) + "x" + std::to_string(pattern.geometry.cols));
  }
  Pattern out = pattern;
  if (out.masked.empty()) out.masked.assign(out.counts.size(), 0);
  for (std::size_t i = 0; i < out.counts.size(); ++i) {
    if (mask.excluded[i] != 0) out.masked[i] = 1;
    if (out.masked[i] != 0) out.counts[i] = 0.0f;
  }
  return out;
}

namespace {

double max_full_ring_radius(const DetectorGeometry& g) {
  const double r = std::min({g.beam_row, static_cast<double>(g.rows - 1) - g.beam_row, g.beam_col,
                             static_cast<double>(g.cols - 1) - g.beam_col});
  return std::max(r, 0.0);
}

double max_panel_radius(const QMap& map) {
  return map.radius_px.empty() ? 0.0 : *std::max_element(map.radius_px.begin(), map.radius_px.end());
}

}  // namespace

RadialProfile azimuthal_average(const Pattern& pattern, const QMap& map, double bin_width_px,
                                std::optional<double> max_radius_px) {
  if (map.q.size() != pattern.counts.size()) throw ShapeError("q map does not match pattern dimensions");
  if (!(bin_width_px > 0)) throw ConfigError("bin width must be positive");
  const double limit = max_radius_px.value_or(max_panel_radius(map));
  RadialProfile profile;
  profile.bin_width_px = bin_width_px;
  const std::size_t bins = profile.bin_of(limit) + 1;
  std::vector<double> sum(bins, 0.0);
  std::vector<double> sum_q(bins, 0.0);
  profile.count.assign(bins, 0);
  for (std::size_t i = 0; i < pattern.counts.size(); ++i) {
    if (pattern.is_masked(i) || map.radius_px[i] > limit) continue;
    const std::size_t b = profile.bin_of(map.radius_px[i]);
    if (b >= bins) continue;
    sum[b] += pattern.counts[i];
    sum_q[b] += map.q[i];
    ++profile.count[b];
  }
  profile.value.resize(bins);
  profile.mean_q.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const auto n = static_cast<double>(profile.count[b]);
    profile.value[b] = n > 0 ? sum[b] / n : 0.0;
    profile.mean_q[b] = n > 0 ? sum_q[b] / n : q_at_radius(pattern.geometry, (b + 0.5) * bin_width_px);
  }
  return profile;
}

RadialProfile azimuthal_median(std::span<const Pattern> frames, double bin_width_px) {
  if (frames.empty()) throw ConfigError("azimuthal_median needs at least one background frame");
  if (!(bin_width_px > 0)) throw ConfigError("bin width must be positive");
  const DetectorGeometry& g = frames.front().geometry;
  const QMap map = qmap(g);
  RadialProfile profile;
  profile.bin_width_px = bin_width_px;
  const std::size_t bins = profile.bin_of(max_panel_radius(map)) + 1;
  std::vector<std::vector<float>> samples(bins);
  std::vector<double> sum_q(bins, 0.0);
  std::vector<std::size_t> q_count(bins, 0);
  for (std::size_t i = 0; i < map.q.size(); ++i) {
    const std::size_t b = profile.bin_of(map.radius_px[i]);
    sum_q[b] += map.q[i];
    ++q_count[b];
  }
  for (const Pattern& frame : frames) {
    if (!(frame.geometry == g)) throw ConfigError("background frames must share one geometry");
    for (std::size_t i = 0; i < frame.counts.size(); ++i) {
      if (frame.is_masked(i)) continue;
      samples[profile.bin_of(map.radius_px[i])].push_back(frame.counts[i]);
    }
  }
  profile.value.resize(bins, 0.0);
  profile.mean_q.resize(bins, 0.0);
  profile.count.resize(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    std::vector<float>& s = samples[b];
    profile.count[b] = s.size();
    profile.mean_q[b] = q_count[b] > 0 ? sum_q[b] / static_cast<double>(q_count[b]) : 0.0;
    if (s.empty()) continue;
    const std::size_t mid = s.size() / 2;
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid), s.end());
    double median = s[mid];
    if (s.size() % 2 == 0) {
      const float lower = *std::max_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid));
      median = 0.5 * (static_cast<double>(lower) + median);
    }
    profile.value[b] = median;
  }
  return profile;
}

Pattern subtract_background(const Pattern& pattern, const std::optional<RadialProfile>& baseline) {
  if (!baseline) {
    std::clog << "warning: no background baseline for pattern " << pattern.id << "; passing through unchanged\n";
    return pattern;
  }
  const QMap map = qmap(pattern.geometry);
  Pattern out = pattern;
  for (std::size_t i = 0; i < out.counts.size(); ++i) {
    const std::size_t b = baseline->bin_of(map.radius_px[i]);
    if (b >= baseline->bins()) {
      throw ConfigError("background baseline covers " + std::to_string(baseline->bins()) +
                        " radial bins but the pattern extends further");
    }
    const double v = static_cast<double>(out.counts[i]) - baseline->value[b];
    out.counts[i] = v > 0.0 ? static_cast<float>(v) : 0.0f;
  }
  return out;
}

SizeEstimate estimate_size(const Pattern& pattern) { return estimate_size(pattern, qmap(pattern.geometry)); }

SizeEstimate estimate_size(const Pattern& pattern, const QMap& map) {
  SizeEstimate result;
  result.photons = pattern.total();
  if (result.photons < kMinPhotonsForSize) return result;

  const RadialProfile profile = azimuthal_average(pattern, map, 1.0, max_full_ring_radius(pattern.geometry));
  std::vector<double> q;
  std::vector<double> y;
  for (std::size_t b = 1; b < profile.bins(); ++b) {
    if (profile.count[b] == 0) continue;
    const double qb = profile.mean_q[b];
    q.push_back(qb);
    y.push_back(profile.value[b] * qb * qb);
  }
  const double y_norm = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
  if (q.size() < 3 || y_norm <= 0.0) return result;

  const auto score_at = [&](double diameter) {
    const double radius = diameter / 2.0;
    double dot = 0.0;
    double m_norm = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double f = sphere_form_factor(q[i] * radius);
      const double m = f * f * q[i] * q[i];
      dot += m * y[i];
      m_norm += m * m;
    }
    return m_norm > 0.0 ? dot / (std::sqrt(m_norm) * y_norm) : 0.0;
  };

  const int steps = static_cast<int>(kSizeSearchMaxNm - kSizeSearchMinNm);
  std::vector<double> scores(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) scores[static_cast<std::size_t>(i)] = score_at(kSizeSearchMinNm + i);
  const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  result.score = scores[best];
  // A maximum on the edge of the search range is reported as indeterminate.
  if (best == 0 || best + 1 == scores.size()) return result;
  double diameter = kSizeSearchMinNm + static_cast<double>(best);
  const double left = scores[best - 1];
  const double mid = scores[best];
  const double right = scores[best + 1];
  const double denom = left - 2.0 * mid + right;
  if (denom < 0.0) diameter += std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
  result.diameter_nm = diameter;
  return result;
}

// ------------------------------------------------------------ rasterization

std::string to_string(Colormap c) { return c == Colormap::jet ? "jet" : "grayscale"; }
std::string to_string(IntensityScale s) { return s == IntensityScale::linear ? "linear" : "log"; }

Colormap parse_colormap(const std::string& text) {
  if (text == "jet" || text == "color" || text == "colour") return Colormap::jet;
  if (text == "grayscale" || text == "gray" || text == "grey") return Colormap::grayscale;
  throw ConfigError("unknown colormap '" + text + "' (expected jet or grayscale)");
}

IntensityScale parse_scale(const std::string& text) {
  if (text == "linear" || text == "lin") return IntensityScale::linear;
  if (text == "log" || text == "logarithmic") return IntensityScale::logarithmic;
  throw ConfigError("unknown scale '" + text + "' (expected linear or log)");
}

std::string RenderSpec::tag() const { return to_string(colormap) + "-" + to_string(scale); }

void RenderSpec::validate() const {
  if (crop_rows == 0 || crop_cols == 0 || out_rows == 0 || out_cols == 0) {
    throw ConfigError("render crop and output extents must be positive");
  }
  if (out_rows < crop_rows || out_cols < crop_cols) throw ConfigError("render output must up-sample the crop");
}

CropWindow crop_window(const DetectorGeometry& g, const RenderSpec& spec) {
  CropWindow w;
  w.rows = std::min(spec.crop_rows, g.rows);
  w.cols = std::min(spec.crop_cols, g.cols);
  const auto place = [](double centre, std::size_t extent, std::size_t panel) {
    const long start = std::lround(centre) - static_cast<long>(extent / 2);
    const long max_start = static_cast<long>(panel - extent);
    return static_cast<std::size_t>(std::clamp(start, 0L, max_start));
  };
  w.top = place(g.beam_row, w.rows, g.rows);
  w.left = place(g.beam_col, w.cols, g.cols);
  return w;
}

Rgb jet(float v) noexcept {
  const auto channel = [v](float offset) { return std::clamp(1.5f - std::abs(4.0f * v - offset), 0.0f, 1.0f); };
  return Rgb{channel(3.0f), channel(2.0f), channel(1.0f)};
}

Rgb colorize(float v, Colormap colormap) noexcept {
  if (colormap == Colormap::jet) return jet(v);
  return Rgb{v, v, v};
}

std::vector<float> scaled_crop(const Pattern& pattern, const RenderSpec& spec) {
  const CropWindow w = crop_window(pattern.geometry, spec);
  std::vector<double> raw(w.rows * w.cols);
  double peak = 0.0;
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      const std::size_t i = (w.top + r) * pattern.geometry.cols + (w.left + c);
      const double v = pattern.is_masked(i) ? 0.0 : std::max(0.0, static_cast<double>(pattern.counts[i]));
      raw[r * w.cols + c] = v;
      peak = std::max(peak, v);
    }
  }
  std::vector<float> scaled(raw.size(), 0.0f);
  if (peak <= 0.0) return scaled;
  if (spec.scale == IntensityScale::linear) {
    for (std::size_t i = 0; i < raw.size(); ++i) scaled[i] = static_cast<float>(raw[i] / peak);
  } else {
    const double log_peak = std::log1p(peak);
    for (std::size_t i = 0; i < raw.size(); ++i) scaled[i] = static_cast<float>(std::log1p(raw[i]) / log_peak);
  }
  return scaled;
}

std::vector<std::size_t> block_index_map(std::size_t detector_extent, std::size_t image_extent) {
  std::vector<std::size_t> map(image_extent, 0);
  for (std::size_t i = 0; i < detector_extent; ++i) {
    const std::size_t begin = i * image_extent / detector_extent;
    const std::size_t end = (i + 1) * image_extent / detector_extent;
    for (std::size_t y = begin; y < end; ++y) map[y] = i;
  }
  return map;
}

namespace {

std::vector<Rgb> crop_colors(const Pattern& pattern, const RenderSpec& spec) {
  const std::vector<float> v = scaled_crop(pattern, spec);
  std::vector<Rgb> colors(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) colors[i] = colorize(v[i], spec.colormap);
  return colors;
}

}  // namespace

RenderedImage rasterize(const Pattern& pattern, const RenderSpec& spec) {
  spec.validate();
  const CropWindow w = crop_window(pattern.geometry, spec);
  const std::vector<Rgb> colors = crop_colors(pattern, spec);
  const std::vector<std::size_t> row_of = block_index_map(w.rows, spec.out_rows);
  const std::vector<std::size_t> col_of = block_index_map(w.cols, spec.out_cols);

  RenderedImage image;
  image.rows = spec.out_rows;
  image.cols = spec.out_cols;
  image.spec = spec;
  image.source_id = pattern.id;
  image.data.resize(3 * image.rows * image.cols);
  const std::size_t plane = image.rows * image.cols;
  for (std::size_t r = 0; r < image.rows; ++r) {
    const Rgb* row_colors = colors.data() + row_of[r] * w.cols;
    float* red = image.data.data() + r * image.cols;
    float* green = red + plane;
    float* blue = green + plane;
    for (std::size_t c = 0; c < image.cols; ++c) {
      const Rgb& px = row_colors[col_of[c]];
      red[c] = px.r;
      green[c] = px.g;
      blue[c] = px.b;
    }
  }
  return image;
}

Tensor resize_to_network(const RenderedImage& image, std::size_t target) {
  if (target == 0) throw ConfigError("resize target must be positive");
  Tensor out(Shape{1, 3, target, target});
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t src_r = i * image.rows / target;
      for (std::size_t j = 0; j < target; ++j) {
        out.at(0, ch, i, j) = image.at(ch, src_r, j * image.cols / target);
      }
    }
  }
  return out;
}

Tensor render_network_input(const Pattern& pattern, const RenderSpec& spec, std::size_t target) {
  spec.validate();
  if (target == 0) throw ConfigError("resize target must be positive");
  const CropWindow w = crop_window(pattern.geometry, spec);
  const std::vector<Rgb> colors = crop_colors(pattern, spec);
  const std::vector<std::size_t> row_of = block_index_map(w.rows, spec.out_rows);
  const std::vector<std::size_t> col_of = block_index_map(w.cols, spec.out_cols);

  Tensor out(Shape{1, 3, target, target});
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t det_r = row_of[i * spec.out_rows / target];
    for (std::size_t j = 0; j < target; ++j) {
      const Rgb& px = colors[det_r * w.cols + col_of[j * spec.out_cols / target]];
      out.at(0, 0, i, j) = px.r;
      out.at(0, 1, i, j) = px.g;
      out.at(0, 2, i, j) = px.b;
    }
  }
  return out;
}

}  // namespace spi
