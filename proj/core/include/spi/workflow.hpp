#pragma once

// Store-level operations shared by the command line and the HTTP service.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spi/pipeline.hpp"
#include "spi/simulator.hpp"
#include "spi/store.hpp"

namespace spi {

struct SimulateResult {
  std::vector<SimulatedFrame> frames;
  SelectionSet truth;  // every simulated single in the dataset so far
};

// Appends simulated frames to the store's dataset (created on first use)
// and refreshes selections/truth.json.
SimulateResult simulate_into_store(Store& store, const SimConfig& config);

// Ground truth for simulated data: {method "truth", ids of single hits}.
SelectionSet truth_selection(const Dataset& dataset);

struct PreprocessOptions {
  double min_diameter_nm = kSizeFilterMinNm;
  double max_diameter_nm = kSizeFilterMaxNm;
  // Patterns whose ring-median forms the background baseline; none means
  // no subtraction.
  std::optional<std::string> background_selection;
  // Optional preview PNGs written to <store>/previews/<tag>/<id>.png.
  std::optional<RenderSpec> preview;
};

struct PreprocessResult {
  std::size_t patterns = 0;
  std::size_t sized = 0;        // estimate available
  SelectionSet size_filtered;   // saved as selections/size-filtered.json
};

PreprocessResult preprocess_store(Store& store, const PreprocessOptions& options);

struct PatternLabel {
  bool single = false;
  std::optional<BoxAnnotation> box;
  std::string source;  // "human" or "truth"
};

// Ground truth from the manifest, overridden by the latest human label.
std::map<PatternId, PatternLabel> effective_labels(const Store& store);

// Splits the labeled patterns and tags the manifest; unlabeled patterns go
// to "test".
DatasetSplit assign_split(Store& store, const SplitRequest& request, std::uint64_t seed);

// Renders the patterns as network inputs. Single labels without a box take
// `default_box`; ids without a label are rejected.
std::vector<Example> load_examples(const Store& store, std::span<const PatternId> ids, const RenderSpec& spec,
                                   int input_size, const std::map<PatternId, PatternLabel>& labels,
                                   const BoxAnnotation& default_box);

struct TrainingData {
  std::vector<Example> train;
  std::vector<Example> validation;
};

// Training ids: the "train" split, or every human-labeled pattern outside
// the validation split when nothing is tagged. Validation: the
// "validation" split.
TrainingData load_training_data(const Store& store, const TrainConfig& config);

ModelFamily train_in_store(Store& store, const TrainConfig& config, TrainOptions options = {});

ImageSource store_image_source(const Store& store, const RenderSpec& spec, int input_size);

struct ResolvedModel {
  Model model;
  RenderSpec render;
  std::string family;
};

// "family@iteration", "family" (latest checkpoint) or a checkpoint path.
// The render spec comes from the family manifest next to the checkpoint.
ResolvedModel resolve_checkpoint(const Store& store, const std::string& reference);

// Ids scored by classify and stable-select by default: the "test" split,
// or every pattern outside train/validation if nothing is tagged test.
std::vector<PatternId> default_target_ids(const Dataset& dataset);

SelectionSet classify_in_store(Store& store, const std::string& checkpoint, std::optional<double> threshold,
                               const std::string& name);

// First checkpoint at or after the saturation point plus `margin`
// checkpoints, clamped so that `count` checkpoints remain; the last `count`
// checkpoints when the curve never saturates.
long choose_stable_start(const ModelFamily& family, std::size_t margin = 0, std::size_t count = kStableCheckpoints);

struct StableRequest {
  std::string family;
  std::optional<long> start_iteration;
  std::optional<double> threshold;
  std::size_t count = kStableCheckpoints;
  std::string name = "stable";
};

StableSelection stable_select_in_store(Store& store, const StableRequest& request);

std::string stable_selection_json(const StableSelection& selection);

// Universe: the "test" split when present, otherwise every pattern outside
// the train split. The reference is projected onto the universe; the
// selection must already lie in it.
std::set<PatternId> evaluation_universe(const Dataset& dataset);
Evaluation evaluate_in_store(const Store& store, const SelectionSet& selection, const SelectionSet& reference);

std::vector<std::uint8_t> render_png(const Store& store, PatternId id, const RenderSpec& spec);

}  // namespace spi
