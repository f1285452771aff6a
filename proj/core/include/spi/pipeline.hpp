#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spi/detector.hpp"
#include "spi/metrics.hpp"
#include "spi/optim.hpp"
#include "spi/preprocess.hpp"

namespace spi {

// ------------------------------------------------------------------- splits

struct LabeledId {
  PatternId id = 0;
  bool single = false;
};

// Explicit per-class counts rather than proportions; with heavily
// imbalanced data proportional sampling starves the positive class.
struct SplitRequest {
  std::size_t train_single = 0;
  std::size_t train_non_single = 0;
  std::size_t validation_single = 0;
  std::size_t validation_non_single = 0;
};

struct DatasetSplit {
  std::vector<PatternId> train;
  std::vector<PatternId> validation;
  std::vector<PatternId> test;  // universe minus train and validation
};

// Pairwise-disjoint, sorted, deterministic per seed. Throws ConfigError when
// a class has fewer members than requested.
DatasetSplit split_dataset(std::span<const LabeledId> universe, const SplitRequest& request, std::uint64_t seed);

// ----------------------------------------------------------------- training

struct TrainConfig {
  long iterations = 2500;
  int batch_size = 16;
  long checkpoint_every = 100;
  OptimizerConfig optimizer{3e-3, 0.9, 5e-4, {}};
  // With an empty optimizer schedule, drop the rate x0.1 at this fraction of
  // the run. Set to 0 to keep it constant.
  double default_drop_fraction = 0.9;
  RenderSpec render{Colormap::jet, IntensityScale::logarithmic};
  DetectorConfig detector;
  std::uint64_t seed = 1;
  std::string family;                            // defaults to "<render tag>-s<seed>"
  BoxAnnotation default_box{0.5, 0.5, 0.5, 0.5};  // for single labels without a box

  void validate(std::size_t training_examples) const;
  [[nodiscard]] std::string family_tag() const;
  [[nodiscard]] OptimizerConfig effective_optimizer() const;
};

struct Example {
  PatternId id = 0;
  Tensor image;  // (1, 3, N, N)
  bool single = false;
  std::optional<BoxAnnotation> box;
};

struct CheckpointRecord {
  long iteration = 0;
  Model model;
  std::filesystem::path file;         // empty when not persisted
  std::vector<double> loss_segment;   // losses since the previous checkpoint
  std::optional<MetricReport> validation;
};

struct ModelFamily {
  std::string tag;
  TrainConfig config;
  std::vector<CheckpointRecord> checkpoints;  // strictly increasing iterations
  std::vector<double> loss_curve;             // loss_curve[i] is iteration i + 1

  [[nodiscard]] const CheckpointRecord* at_iteration(long iteration) const;
  [[nodiscard]] std::vector<long> iterations() const;
};

struct TrainProgress {
  long iteration = 0;
  long total = 0;
  double loss = 0.0;
  std::optional<double> validation_f1;
};

struct TrainOptions {
  // When set, every checkpoint is written as <dir>/<iter>.ckpt together with
  // loss.csv, f1.csv and family.json, and training resumes from the last
  // checkpoint found there.
  std::optional<std::filesystem::path> checkpoint_dir;
  bool resume = true;
  std::span<const Example> validation;  // scored at each checkpoint when non-empty
  std::function<void(const TrainProgress&)> on_progress;
  std::function<bool()> should_stop;
};

// Momentum SGD on random batches (drawn with replacement, batch RNG seeded
// per iteration so a resumed run matches an uninterrupted one). Throws
// NumericError on a non-finite loss naming the iteration.
ModelFamily train(const TrainConfig& config, std::span<const Example> train_set, const TrainOptions& options = {});

// Mean per-image loss over a batch, filling head_grad with dL/d(head).
double batch_loss(const DetectorConfig& config, const Tensor& head_output, std::span<const Example* const> batch,
                  Tensor& head_grad);

ModelFamily load_family(const std::filesystem::path& dir);

// --------------------------------------------------------------- validation

using ImageSource = std::function<Tensor(PatternId)>;

std::vector<Decision> classify_images(const Model& model, std::span<const Example> examples, double threshold);
SelectionSet classify(const Model& model, std::span<const Example> examples, double threshold,
                      const std::string& method);
SelectionSet classify(const Model& model, std::span<const PatternId> ids, const ImageSource& source,
                      double threshold, const std::string& method);

MetricReport validate_model(const Model& model, std::span<const Example> validation, double threshold);

struct CurvePoint {
  long iteration = 0;
  MetricReport report;
};

// One report per checkpoint; stored back into family.checkpoints.
std::vector<CurvePoint> validate_family(ModelFamily& family, std::span<const Example> validation, double threshold);

// F1 per point with undefined scores counted as 0.
std::vector<double> f1_values(std::span<const CurvePoint> curve);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct CurveSummary {
  MetricSummary accuracy, precision, recall, f1;
  std::size_t points = 0;
};

// Mean and population std of each metric over checkpoints in [from, to];
// undefined values count as 0.
CurveSummary summarize_curve(std::span<const CurvePoint> curve, long from_iteration, long to_iteration);

inline constexpr std::size_t kSaturationWindow = 10;
inline constexpr double kSaturationSlopeTol = 0.002;

// Earliest index k such that the least-squares slope over every trailing
// window ending at j >= k stays within +-slope_tol. Empty when the last
// window is still sloped. Throws ConfigError if the curve is shorter than
// 2 * window.
std::optional<std::size_t> detect_saturation(std::span<const double> curve, std::size_t window = kSaturationWindow,
                                             double slope_tol = kSaturationSlopeTol);

// Least-squares slope of values against their index.
double trailing_slope(std::span<const double> values);

// ---------------------------------------------------------- stable selection

inline constexpr std::size_t kStableCheckpoints = 5;

struct StableSelection {
  std::string family;
  std::vector<long> iterations;
  std::vector<SelectionSet> per_checkpoint;
  SelectionSet final_selection;
  std::vector<double> counts;
  double count_std = 0.0;
};

SelectionSet intersect_selections(std::span<const SelectionSet> selections, const std::string& method);

// Combines already-computed per-checkpoint selections.
StableSelection stable_from_selections(const std::string& family, std::vector<long> iterations,
                                       std::vector<SelectionSet> per_checkpoint);

// Uses the checkpoints at start, start + every, ..., start + (count-1) * every.
// Throws NotFoundError listing the available iterations if one is missing.
StableSelection stable_select(const ModelFamily& family, long start_iteration, std::span<const PatternId> ids,
                              const ImageSource& source, double threshold,
                              std::size_t count = kStableCheckpoints);
StableSelection stable_select(const ModelFamily& family, long start_iteration, std::span<const Example> examples,
                              double threshold, std::size_t count = kStableCheckpoints);

struct Evaluation {
  MetricReport report;
  double iou = 0.0;
  std::size_t intersection = 0;
  std::size_t selected = 0;
  std::size_t reference = 0;
};

// Confusion and metrics over the universe plus the selection IoU. Throws
// ValidationError if either set leaves the universe.
Evaluation evaluate_selection(const SelectionSet& selection, const SelectionSet& reference,
                              const std::set<PatternId>& universe);

// "Model | Number of single hits | Intersection | IoU % | Accuracy % | Precision % | Recall %".
std::string evaluation_row(const std::string& model, const Evaluation& evaluation);
std::string evaluation_header();

// "iteration,<name>" CSV.
std::string curve_csv(const std::string& name, std::span<const long> iterations, std::span<const double> values);

}  // namespace spi
