#include "spi/json_codec.hpp"

#include "spi/errors.hpp"

namespace spi {

namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.is_object()) throw ConfigError(std::string("expected an object holding '") + key + "'");
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    it->get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("'") + key + "' has the wrong type: " + e.what());
  }
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    out.reset();
    return;
  }
  T value{};
  read(j, key, value);
  out = std::move(value);
}

template <typename T>
void write_optional(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

}  // namespace

void to_json(json& j, const DetectorConfig& c) {
  j = json{{"input_size", c.input_size},
           {"stages", c.stages},
           {"channels", c.channels},
           {"lambda_coord", c.lambda_coord},
           {"lambda_obj", c.lambda_obj},
           {"lambda_noobj", c.lambda_noobj},
           {"decision_threshold", c.decision_threshold}};
}

void from_json(const json& j, DetectorConfig& c) {
  read(j, "input_size", c.input_size);
  read(j, "stages", c.stages);
  read(j, "channels", c.channels);
  read(j, "lambda_coord", c.lambda_coord);
  read(j, "lambda_obj", c.lambda_obj);
  read(j, "lambda_noobj", c.lambda_noobj);
  read(j, "decision_threshold", c.decision_threshold);
  c.validate();
}

void to_json(json& j, const RateChange& c) {
  j = json{{"iteration", c.iteration}, {"learning_rate", c.learning_rate}};
}

void from_json(const json& j, RateChange& c) {
  read(j, "iteration", c.iteration);
  read(j, "learning_rate", c.learning_rate);
}

void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"lr_schedule", c.lr_schedule}};
}

void from_json(const json& j, OptimizerConfig& c) {
  read(j, "learning_rate", c.learning_rate);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "lr_schedule", c.lr_schedule);
  c.validate();
}

void to_json(json& j, const BoxAnnotation& b) { j = json{{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}}; }

void from_json(const json& j, BoxAnnotation& b) {
  for (const char* key : {"cx", "cy", "w", "h"}) {
    if (!j.is_object() || !j.contains(key)) throw AnnotationError(std::string("box annotation needs '") + key + "'");
  }
  read(j, "cx", b.cx);
  read(j, "cy", b.cy);
  read(j, "w", b.w);
  read(j, "h", b.h);
  b.validate();
}

void to_json(json& j, const DetectorGeometry& g) {
  j = json{{"distance_m", g.distance_m}, {"pixel_size_m", g.pixel_size_m}, {"rows", g.rows},
           {"cols", g.cols},             {"wavelength_nm", g.wavelength_nm}, {"beam_row", g.beam_row},
           {"beam_col", g.beam_col}};
}

void from_json(const json& j, DetectorGeometry& g) {
  const bool had_rows = j.is_object() && j.contains("rows");
  const bool had_cols = j.is_object() && j.contains("cols");
  read(j, "distance_m", g.distance_m);
  read(j, "pixel_size_m", g.pixel_size_m);
  read(j, "rows", g.rows);
  read(j, "cols", g.cols);
  read(j, "wavelength_nm", g.wavelength_nm);
  // A resized panel without an explicit beam centre keeps the beam central.
  if (had_rows && !j.contains("beam_row")) g.beam_row = static_cast<double>(g.rows / 2);
  if (had_cols && !j.contains("beam_col")) g.beam_col = static_cast<double>(g.cols / 2);
  read(j, "beam_row", g.beam_row);
  read(j, "beam_col", g.beam_col);
  g.validate();
}

void to_json(json& j, const RenderSpec& s) {
  j = json{{"colormap", to_string(s.colormap)}, {"scale", to_string(s.scale)}, {"crop_rows", s.crop_rows},
           {"crop_cols", s.crop_cols},          {"out_rows", s.out_rows},     {"out_cols", s.out_cols}};
}

void from_json(const json& j, RenderSpec& s) {
  std::string colormap = to_string(s.colormap);
  std::string scale = to_string(s.scale);
  read(j, "colormap", colormap);
  read(j, "scale", scale);
  s.colormap = parse_colormap(colormap);
  s.scale = parse_scale(scale);
  read(j, "crop_rows", s.crop_rows);
  read(j, "crop_cols", s.crop_cols);
  read(j, "out_rows", s.out_rows);
  read(j, "out_cols", s.out_cols);
  s.validate();
}

void to_json(json& j, const SimConfig& c) {
  j = json{{"geometry", c.geometry},
           {"fluence", c.fluence},
           {"background", c.background},
           {"single_min_diameter_nm", c.single_min_diameter_nm},
           {"single_max_diameter_nm", c.single_max_diameter_nm},
           {"droplet_min_radius_nm", c.droplet_min_radius_nm},
           {"droplet_max_radius_nm", c.droplet_max_radius_nm},
           {"singles", c.singles},
           {"negatives", c.negatives},
           {"multiple_fraction", c.multiple_fraction},
           {"droplet_fraction", c.droplet_fraction},
           {"seed", c.seed},
           {"split", c.split},
           {"box_threshold", c.box_threshold}};
}

void from_json(const json& j, SimConfig& c) {
  read(j, "geometry", c.geometry);
  read(j, "fluence", c.fluence);
  read(j, "background", c.background);
  read(j, "single_min_diameter_nm", c.single_min_diameter_nm);
  read(j, "single_max_diameter_nm", c.single_max_diameter_nm);
  read(j, "droplet_min_radius_nm", c.droplet_min_radius_nm);
  read(j, "droplet_max_radius_nm", c.droplet_max_radius_nm);
  read(j, "singles", c.singles);
  read(j, "negatives", c.negatives);
  read(j, "multiple_fraction", c.multiple_fraction);
  read(j, "droplet_fraction", c.droplet_fraction);
  read(j, "seed", c.seed);
  read(j, "split", c.split);
  read(j, "box_threshold", c.box_threshold);
  c.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"checkpoint_every", c.checkpoint_every},
           {"optimizer", c.optimizer},
           {"default_drop_fraction", c.default_drop_fraction},
           {"render", c.render},
           {"detector", c.detector},
           {"seed", c.seed},
           {"family", c.family},
           {"default_box", c.default_box}};
}

void from_json(const json& j, TrainConfig& c) {
  read(j, "iterations", c.iterations);
  read(j, "batch_size", c.batch_size);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "optimizer", c.optimizer);
  read(j, "default_drop_fraction", c.default_drop_fraction);
  read(j, "render", c.render);
  read(j, "detector", c.detector);
  read(j, "seed", c.seed);
  read(j, "family", c.family);
  read(j, "default_box", c.default_box);
}

void to_json(json& j, const ManifestEntry& e) {
  j = json{{"id", e.id}, {"file", e.file}, {"bytes", e.bytes}};
  if (e.truth) j["truth"] = to_string(*e.truth);
  write_optional(j, "kind", e.kind);
  write_optional(j, "box", e.box);
  write_optional(j, "size_nm", e.size_nm);
  if (!e.split.empty()) j["split"] = e.split;
}

void from_json(const json& j, ManifestEntry& e) {
  read(j, "id", e.id);
  read(j, "file", e.file);
  read(j, "bytes", e.bytes);
  std::optional<std::string> truth;
  read_optional(j, "truth", truth);
  e.truth = truth ? std::optional<Label>(parse_label(*truth)) : std::nullopt;
  read_optional(j, "kind", e.kind);
  read_optional(j, "box", e.box);
  read_optional(j, "size_nm", e.size_nm);
  read(j, "split", e.split);
}

void to_json(json& j, const DatasetManifest& m) {
  j = json{{"format_version", m.format_version}, {"geometry", m.geometry}, {"entries", m.entries}};
}

void from_json(const json& j, DatasetManifest& m) {
  read(j, "format_version", m.format_version);
  if (m.format_version != 1) {
    throw ConfigError("unsupported manifest format_version " + std::to_string(m.format_version));
  }
  read(j, "geometry", m.geometry);
  read(j, "entries", m.entries);
}

void to_json(json& j, const LabelRecord& r) {
  j = json{{"id", r.id}, {"label", to_string(r.label)}, {"author", r.author}, {"timestamp", r.timestamp}};
  write_optional(j, "box", r.box);
}

void from_json(const json& j, LabelRecord& r) {
  if (!j.is_object() || !j.contains("id") || !j.contains("label")) {
    throw ValidationError("label record needs 'id' and 'label'");
  }
  read(j, "id", r.id);
  std::string label;
  read(j, "label", label);
  r.label = parse_label(label);
  read_optional(j, "box", r.box);
  read(j, "author", r.author);
  read(j, "timestamp", r.timestamp);
  r.validate();
}

void to_json(json& j, const SelectionSet& s) {
  j = json{{"method", s.method}, {"ids", std::vector<PatternId>(s.ids.begin(), s.ids.end())}};
  j["threshold"] = s.threshold ? json(*s.threshold) : json(nullptr);
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace spi
