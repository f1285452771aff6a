#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spi/detector.hpp"
#include "spi/geometry.hpp"
#include "spi/metrics.hpp"
#include "spi/pattern.hpp"

namespace spi {

enum class Label { single, non_single };
std::string to_string(Label label);
Label parse_label(const std::string& text);

// ------------------------------------------------------------------ frames

// Raw little-endian float32, row-major rows x cols.
std::vector<std::uint8_t> encode_frame(const Pattern& pattern);
// Throws CorruptionError unless the byte count is exactly rows * cols * 4.
Pattern decode_frame(std::span<const std::uint8_t> bytes, const DetectorGeometry& geometry, PatternId id);

// ---------------------------------------------------------------- manifest

struct ManifestEntry {
  PatternId id = 0;
  std::string file;               // relative to the dataset directory
  std::uint64_t bytes = 0;
  std::optional<Label> truth;     // simulated data only
  std::optional<std::string> kind;
  std::optional<BoxAnnotation> box;
  std::optional<double> size_nm;  // set by the size filter
  std::string split;              // "train", "validation", "test" or empty
};

struct DatasetManifest {
  int format_version = 1;
  DetectorGeometry geometry;
  std::vector<ManifestEntry> entries;

  [[nodiscard]] const ManifestEntry* find(PatternId id) const;
  ManifestEntry* find(PatternId id);
  [[nodiscard]] std::vector<PatternId> ids() const;
  [[nodiscard]] std::vector<PatternId> ids_in_split(const std::string& split) const;
};

// A directory holding manifest.json and frames/<id>.f32.
class Dataset {
 public:
  // Opens an existing dataset; throws NotFoundError without a manifest.
  static Dataset open(const std::filesystem::path& dir);
  // Opens, or starts an empty dataset with the given geometry. An existing
  // dataset with a different geometry is a ConfigError.
  static Dataset open_or_create(const std::filesystem::path& dir, const DetectorGeometry& geometry);

  [[nodiscard]] const std::filesystem::path& dir() const noexcept { return dir_; }
  [[nodiscard]] const DatasetManifest& manifest() const noexcept { return manifest_; }
  [[nodiscard]] const DetectorGeometry& geometry() const noexcept { return manifest_.geometry; }
  [[nodiscard]] PatternId next_id() const;
  [[nodiscard]] bool contains(PatternId id) const { return manifest_.find(id) != nullptr; }

  // Writes the frame atomically and records the entry; the manifest itself
  // is written by save_manifest().
  void write_pattern(const Pattern& pattern, ManifestEntry entry);
  [[nodiscard]] Pattern read_pattern(PatternId id) const;
  void set_size_estimate(PatternId id, std::optional<double> size_nm);
  void set_split(PatternId id, const std::string& split);
  void save_manifest() const;

  // Machine-checks every manifest invariant; returns one line per problem.
  [[nodiscard]] std::vector<std::string> verify() const;

 private:
  Dataset(std::filesystem::path dir, DatasetManifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

// ------------------------------------------------------------------ labels

struct LabelRecord {
  PatternId id = 0;
  Label label = Label::non_single;
  std::optional<BoxAnnotation> box;
  std::string author = "human";
  std::string timestamp;  // ISO-8601 UTC with milliseconds

  // A box is only allowed on single labels (AnnotationError otherwise).
  void validate() const;
};

std::string utc_timestamp_now();

// Append-only JSON-lines log.
class LabelLog {
 public:
  explicit LabelLog(std::filesystem::path file) : file_(std::move(file)) {}

  void append(const LabelRecord& record);
  [[nodiscard]] std::vector<LabelRecord> load_all() const;
  // Latest record per (id, author): later timestamp wins, ties go to the
  // later line.
  [[nodiscard]] std::map<std::pair<PatternId, std::string>, LabelRecord> latest() const;
  [[nodiscard]] const std::filesystem::path& file() const noexcept { return file_; }

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
};

// -------------------------------------------------------------- selections

// {"method": ..., "threshold": ..., "ids": [sorted]}
std::string selection_to_json(const SelectionSet& selection);
// Throws ValidationError for malformed documents or duplicate ids.
SelectionSet selection_from_json(const std::string& text);
void write_selection(const std::filesystem::path& path, const SelectionSet& selection);
SelectionSet read_selection(const std::filesystem::path& path);

// ------------------------------------------------------------------- store

// Root layout:
//   dataset/manifest.json, dataset/frames/<id>.f32, dataset/labels.jsonl,
//   models/<family>/<iter>.ckpt, selections/<name>.json
class Store {
 public:
  explicit Store(std::filesystem::path root);

  // $SPI_STORE when set, otherwise the current directory.
  static std::filesystem::path default_root();

  [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }
  [[nodiscard]] std::filesystem::path dataset_dir() const { return root_ / "dataset"; }
  [[nodiscard]] std::filesystem::path labels_file() const { return dataset_dir() / "labels.jsonl"; }
  [[nodiscard]] std::filesystem::path models_dir() const { return root_ / "models"; }
  [[nodiscard]] std::filesystem::path family_dir(const std::string& family) const { return models_dir() / family; }
  [[nodiscard]] std::filesystem::path checkpoint_path(const std::string& family, long iteration) const;
  [[nodiscard]] std::filesystem::path selections_dir() const { return root_ / "selections"; }
  [[nodiscard]] std::filesystem::path selection_path(const std::string& name) const;

  // Lazily opened; throws NotFoundError if the store has no dataset.
  [[nodiscard]] const Dataset& dataset() const;
  Dataset& mutable_dataset();
  void reload_dataset();

  // Throws NotFoundError for ids missing from the manifest.
  void append_label(LabelRecord record);
  [[nodiscard]] std::vector<LabelRecord> load_labels() const;
  // Latest human label per pattern.
  [[nodiscard]] std::map<PatternId, LabelRecord> human_labels() const;

  void save_selection(const std::string& name, const SelectionSet& selection) const;
  [[nodiscard]] SelectionSet load_selection(const std::string& name) const;
  [[nodiscard]] std::vector<std::string> selection_names() const;

 private:
  std::filesystem::path root_;
  mutable std::shared_mutex dataset_mutex_;
  mutable std::optional<Dataset> dataset_;
  std::unique_ptr<LabelLog> labels_;
};

// Name used for selection files: letters, digits, '-', '_', '.'; no path
// separators. Throws ValidationError otherwise.
void check_artifact_name(const std::string& name);

}  // namespace spi
