#include "spi/store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"

namespace spi {

std::string to_string(Label label) { return label == Label::single ? "single" : "non_single"; }

Label parse_label(const std::string& text) {
  if (text == "single") return Label::single;
  if (text == "non_single" || text == "non-single") return Label::non_single;
  throw ValidationError("unknown label '" + text + "' (expected single or non_single)");
}

std::vector<std::uint8_t> encode_frame(const Pattern& pattern) {
  std::vector<std::uint8_t> out;
  out.reserve(pattern.counts.size() * 4);
  append_f32_le(out, pattern.counts);
  return out;
}

Pattern decode_frame(std::span<const std::uint8_t> bytes, const DetectorGeometry& geometry, PatternId id) {
  Pattern pattern(id, geometry);
  if (bytes.size() != pattern.counts.size() * 4) {
    throw CorruptionError("frame " + std::to_string(id) + " has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(pattern.counts.size() * 4));
  }
  read_f32_le(bytes, pattern.counts);
  return pattern;
}

// ---------------------------------------------------------------- manifest

const ManifestEntry* DatasetManifest::find(PatternId id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

ManifestEntry* DatasetManifest::find(PatternId id) {
  for (auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::vector<PatternId> DatasetManifest::ids() const {
  std::vector<PatternId> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

std::vector<PatternId> DatasetManifest::ids_in_split(const std::string& split) const {
  std::vector<PatternId> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.id);
  }
  return out;
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.json"; }

std::string frame_file(PatternId id) { return "frames/" + std::to_string(id) + ".f32"; }

}  // namespace

Dataset Dataset::open(const std::filesystem::path& dir) {
  const auto path = manifest_path(dir);
  if (!std::filesystem::exists(path)) throw NotFoundError("no dataset manifest at " + path.string());
  DatasetManifest manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(path)).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("malformed manifest " + path.string() + ": " + e.what());
  }
  return Dataset(dir, std::move(manifest));
}

Dataset Dataset::open_or_create(const std::filesystem::path& dir, const DetectorGeometry& geometry) {
  if (std::filesystem::exists(manifest_path(dir))) {
    Dataset existing = open(dir);
    if (!(existing.geometry() == geometry)) {
      throw ConfigError("dataset at " + dir.string() + " was recorded with a different detector geometry");
    }
    return existing;
  }
  geometry.validate();
  DatasetManifest manifest;
  manifest.geometry = geometry;
  Dataset ds(dir, std::move(manifest));
  ds.save_manifest();
  return ds;
}

PatternId Dataset::next_id() const {
  PatternId next = 0;
  for (const auto& e : manifest_.entries) next = std::max<PatternId>(next, e.id + 1);
  return next;
}

void Dataset::write_pattern(const Pattern& pattern, ManifestEntry entry) {
  if (!(pattern.geometry == manifest_.geometry)) {
    throw ConfigError("pattern " + std::to_string(pattern.id) + " does not match the dataset geometry");
  }
  pattern.validate();
  entry.id = pattern.id;
  entry.file = frame_file(pattern.id);
  const std::vector<std::uint8_t> bytes = encode_frame(pattern);
  entry.bytes = bytes.size();
  write_file_atomic(dir_ / entry.file, bytes);
  if (ManifestEntry* existing = manifest_.find(entry.id)) {
    *existing = std::move(entry);
  } else {
    manifest_.entries.push_back(std::move(entry));
  }
}

Pattern Dataset::read_pattern(PatternId id) const {
  const ManifestEntry* entry = manifest_.find(id);
  if (!entry) throw NotFoundError("pattern " + std::to_string(id) + " is not in the dataset");
  const auto path = dir_ / entry->file;
  if (!std::filesystem::exists(path)) throw NotFoundError("frame file missing: " + path.string());
  return decode_frame(read_file(path), manifest_.geometry, id);
}

void Dataset::set_size_estimate(PatternId id, std::optional<double> size_nm) {
  ManifestEntry* entry = manifest_.find(id);
  if (!entry) throw NotFoundError("pattern " + std::to_string(id) + " is not in the dataset");
  entry->size_nm = size_nm;
}

void Dataset::set_split(PatternId id, const std::string& split) {
  if (!split.empty() && split != "train" && split != "validation" && split != "test") {
    throw ValidationError("unknown split '" + split + "'");
  }
  ManifestEntry* entry = manifest_.find(id);
  if (!entry) throw NotFoundError("pattern " + std::to_string(id) + " is not in the dataset");
  entry->split = split;
}

void Dataset::save_manifest() const {
  const nlohmann::json j = manifest_;
  write_file_atomic(manifest_path(dir_), j.dump(1));
}

std::vector<std::string> Dataset::verify() const {
  std::vector<std::string> problems;
  std::set<PatternId> seen;
  const std::uint64_t expected_bytes = manifest_.geometry.pixels() * 4;
  for (const auto& e : manifest_.entries) {
    const std::string tag = "pattern " + std::to_string(e.id) + ": ";
    if (!seen.insert(e.id).second) problems.push_back(tag + "duplicate id");
    if (e.bytes != expected_bytes) {
      problems.push_back(tag + "recorded size " + std::to_string(e.bytes) + " != " + std::to_string(expected_bytes));
    }
    const auto path = dir_ / e.file;
    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    if (ec) {
      problems.push_back(tag + "missing frame file " + e.file);
    } else if (actual != e.bytes) {
      problems.push_back(tag + "file has " + std::to_string(actual) + " bytes, manifest says " +
                         std::to_string(e.bytes));
    }
    if (e.box && e.truth != Label::single) problems.push_back(tag + "box annotation on a non-single pattern");
    if (e.box) {
      try {
        e.box->validate();
      } catch (const Error& err) {
        problems.push_back(tag + err.what());
      }
    }
    if (!e.split.empty() && e.split != "train" && e.split != "validation" && e.split != "test") {
      problems.push_back(tag + "unknown split " + e.split);
    }
  }
  return problems;
}

// ------------------------------------------------------------------ labels

void LabelRecord::validate() const {
  if (box && label != Label::single) {
    throw AnnotationError("pattern " + std::to_string(id) + ": a box annotation requires the single label");
  }
  if (box) box->validate();
  if (author.empty()) throw ValidationError("label author must not be empty");
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

void LabelLog::append(const LabelRecord& record) {
  record.validate();
  const nlohmann::json j = record;
  const std::string line = j.dump() + "\n";
  std::lock_guard lock(mutex_);
  std::filesystem::create_directories(file_.parent_path().empty() ? "." : file_.parent_path());
  std::ofstream out(file_, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open label log " + file_.string());
  out << line;
  out.flush();
  if (!out) throw IoError("failed writing label log " + file_.string());
}

std::vector<LabelRecord> LabelLog::load_all() const {
  std::lock_guard lock(mutex_);
  std::vector<LabelRecord> out;
  std::ifstream in(file_, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<LabelRecord>());
    } catch (const std::exception& e) {
      throw CorruptionError(file_.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::pair<PatternId, std::string>, LabelRecord> LabelLog::latest() const {
  std::map<std::pair<PatternId, std::string>, LabelRecord> out;
  for (LabelRecord& r : load_all()) {
    auto key = std::make_pair(r.id, r.author);
    auto it = out.find(key);
    if (it == out.end()) {
      out.emplace(std::move(key), std::move(r));
    } else if (r.timestamp >= it->second.timestamp) {
      it->second = std::move(r);
    }
  }
  return out;
}

// -------------------------------------------------------------- selections

std::string selection_to_json(const SelectionSet& selection) {
  const nlohmann::json j = selection;
  return j.dump();
}

SelectionSet selection_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("selection is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("ids") || !j["ids"].is_array()) {
    throw ValidationError("selection must be an object with an 'ids' array");
  }
  SelectionSet s;
  if (j.contains("method")) {
    if (!j["method"].is_string()) throw ValidationError("selection 'method' must be a string");
    s.method = j["method"].get<std::string>();
  }
  if (j.contains("threshold") && !j["threshold"].is_null()) {
    if (!j["threshold"].is_number()) throw ValidationError("selection 'threshold' must be a number");
    s.threshold = j["threshold"].get<double>();
  }
  for (const auto& v : j["ids"]) {
    if (!v.is_number_unsigned()) throw ValidationError("selection ids must be non-negative integers");
    const auto id = v.get<std::uint64_t>();
    if (id > std::numeric_limits<PatternId>::max()) throw ValidationError("selection id out of range");
    if (!s.ids.insert(static_cast<PatternId>(id)).second) {
      throw ValidationError("duplicate id " + std::to_string(id) + " in selection");
    }
  }
  return s;
}

void write_selection(const std::filesystem::path& path, const SelectionSet& selection) {
  write_file_atomic(path, selection_to_json(selection));
}

SelectionSet read_selection(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("selection not found: " + path.string());
  return selection_from_json(read_text_file(path));
}

// ------------------------------------------------------------------- store

Store::Store(std::filesystem::path root) : root_(std::move(root)), labels_(std::make_unique<LabelLog>(labels_file())) {}

std::filesystem::path Store::default_root() {
  if (const char* env = std::getenv("SPI_STORE"); env && *env) return env;
  return ".";
}

std::filesystem::path Store::checkpoint_path(const std::string& family, long iteration) const {
  check_artifact_name(family);
  return family_dir(family) / (std::to_string(iteration) + ".ckpt");
}

std::filesystem::path Store::selection_path(const std::string& name) const {
  check_artifact_name(name);
  return selections_dir() / (name + ".json");
}

const Dataset& Store::dataset() const {
  {
    std::shared_lock lock(dataset_mutex_);
    if (dataset_) return *dataset_;
  }
  std::unique_lock lock(dataset_mutex_);
  if (!dataset_) dataset_.emplace(Dataset::open(dataset_dir()));
  return *dataset_;
}

Dataset& Store::mutable_dataset() {
  (void)dataset();
  return *dataset_;
}

void Store::reload_dataset() {
  std::unique_lock lock(dataset_mutex_);
  dataset_.reset();
}

void Store::append_label(LabelRecord record) {
  if (!dataset().contains(record.id)) {
    throw NotFoundError("pattern " + std::to_string(record.id) + " is not in the dataset");
  }
  if (record.timestamp.empty()) record.timestamp = utc_timestamp_now();
  labels_->append(record);
}

std::vector<LabelRecord> Store::load_labels() const { return labels_->load_all(); }

std::map<PatternId, LabelRecord> Store::human_labels() const {
  std::map<PatternId, LabelRecord> out;
  for (auto& [key, record] : labels_->latest()) {
    if (key.second == "human") out.emplace(key.first, record);
  }
  return out;
}

void Store::save_selection(const std::string& name, const SelectionSet& selection) const {
  write_selection(selection_path(name), selection);
}

SelectionSet Store::load_selection(const std::string& name) const { return read_selection(selection_path(name)); }

std::vector<std::string> Store::selection_names() const {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(selections_dir(), ec)) {
    if (entry.path().extension() == ".json") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_artifact_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name == "." || name == "..") {
    throw ValidationError("invalid name '" + name + "'");
  }
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) throw ValidationError("invalid character in name '" + name + "'");
  }
}

}  // namespace spi
