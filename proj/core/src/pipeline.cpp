#include "spi/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "spi/checkpoint.hpp"
#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"
#include "spi/simulator.hpp"
#include "parallel.hpp"

namespace spi {

// ------------------------------------------------------------------- splits

DatasetSplit split_dataset(std::span<const LabeledId> universe, const SplitRequest& request, std::uint64_t seed) {
  std::vector<PatternId> singles, others;
  std::set<PatternId> seen;
  for (const LabeledId& e : universe) {
    if (!seen.insert(e.id).second) throw ValidationError("duplicate pattern id " + std::to_string(e.id));
    (e.single ? singles : others).push_back(e.id);
  }
  std::sort(singles.begin(), singles.end());
  std::sort(others.begin(), others.end());
  if (request.train_single + request.validation_single > singles.size()) {
    throw ConfigError("split requests " + std::to_string(request.train_single + request.validation_single) +
                      " single hits but only " + std::to_string(singles.size()) + " are labeled");
  }
  if (request.train_non_single + request.validation_non_single > others.size()) {
    throw ConfigError("split requests " + std::to_string(request.train_non_single + request.validation_non_single) +
                      " non-single patterns but only " + std::to_string(others.size()) + " are labeled");
  }
  std::mt19937_64 rng(frame_seed(seed, 0x5b11u));
  std::shuffle(singles.begin(), singles.end(), rng);
  std::shuffle(others.begin(), others.end(), rng);

  DatasetSplit split;
  const auto take = [](std::vector<PatternId>& from, std::size_t& pos, std::size_t n, std::vector<PatternId>& to) {
    to.insert(to.end(), from.begin() + static_cast<std::ptrdiff_t>(pos),
              from.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  };
  std::size_t ps = 0, po = 0;
  take(singles, ps, request.train_single, split.train);
  take(others, po, request.train_non_single, split.train);
  take(singles, ps, request.validation_single, split.validation);
  take(others, po, request.validation_non_single, split.validation);
  take(singles, ps, singles.size() - ps, split.test);
  take(others, po, others.size() - po, split.test);
  for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

// ----------------------------------------------------------------- training

void TrainConfig::validate(std::size_t training_examples) const {
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (checkpoint_every <= 0) throw ConfigError("checkpoint_every must be positive");
  if (default_drop_fraction < 0.0 || default_drop_fraction >= 1.0) {
    throw ConfigError("default_drop_fraction must lie in [0, 1)");
  }
  if (iterations % checkpoint_every != 0) {
    throw ConfigError("checkpoint_every (" + std::to_string(checkpoint_every) + ") must divide iterations (" +
                      std::to_string(iterations) + ")");
  }
  if (training_examples == 0) throw ConfigError("training set is empty");
  if (static_cast<std::size_t>(batch_size) > training_examples) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds the " +
                      std::to_string(training_examples) + " training examples");
  }
  detector.validate();
  optimizer.validate();
  render.validate();
  default_box.validate();
  if (!family.empty()) check_artifact_name(family);
}

std::string TrainConfig::family_tag() const {
  if (!family.empty()) return family;
  return render.tag() + "-s" + std::to_string(seed);
}

OptimizerConfig TrainConfig::effective_optimizer() const {
  OptimizerConfig out = optimizer;
  if (out.lr_schedule.empty() && default_drop_fraction > 0.0) {
    const long at = std::lround(default_drop_fraction * static_cast<double>(iterations));
    if (at > 0) out.lr_schedule.push_back({at, optimizer.learning_rate * 0.1});
  }
  return out;
}

const CheckpointRecord* ModelFamily::at_iteration(long iteration) const {
  for (const auto& c : checkpoints) {
    if (c.iteration == iteration) return &c;
  }
  return nullptr;
}

std::vector<long> ModelFamily::iterations() const {
  std::vector<long> out;
  for (const auto& c : checkpoints) out.push_back(c.iteration);
  return out;
}

double batch_loss(const DetectorConfig& config, const Tensor& head_output, std::span<const Example* const> batch,
                  Tensor& head_grad) {
  const Shape& s = head_output.shape();
  if (s.n != batch.size() || s.c != kHeadChannels) {
    throw ShapeError("head output " + to_string(s) + " does not match a batch of " + std::to_string(batch.size()));
  }
  if (!(head_grad.shape() == s)) head_grad = Tensor(s);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = *batch[b];
    if (ex.single && !ex.box) {
      throw AnnotationError("single-hit example " + std::to_string(ex.id) + " has no box annotation");
    }
    const GridPrediction pred = grid_prediction(head_output, b);
    const LossResult r = detection_loss(pred, ex.single ? ex.box : std::nullopt, config);
    total += r.loss;
    for (int row = 0; row < r.grad.grid; ++row) {
      for (int col = 0; col < r.grad.grid; ++col) {
        const CellPrediction& g = r.grad.cell(row, col);
        const auto rr = static_cast<std::size_t>(row);
        const auto cc = static_cast<std::size_t>(col);
        head_grad.at(b, 0, rr, cc) = static_cast<float>(g.tx * scale);
        head_grad.at(b, 1, rr, cc) = static_cast<float>(g.ty * scale);
        head_grad.at(b, 2, rr, cc) = static_cast<float>(g.tw * scale);
        head_grad.at(b, 3, rr, cc) = static_cast<float>(g.th * scale);
        head_grad.at(b, 4, rr, cc) = static_cast<float>(g.to * scale);
      }
    }
  }
  return total * scale;
}

namespace {

constexpr const char* kFamilyFile = "family.json";
constexpr const char* kLossFile = "loss.csv";
constexpr const char* kF1File = "f1.csv";

void check_examples(std::span<const Example> examples, const DetectorConfig& config, const char* what) {
  const auto n = static_cast<std::size_t>(config.input_size);
  const Shape want{1, kInputChannels, n, n};
  for (const Example& ex : examples) {
    if (!(ex.image.shape() == want)) {
      throw ShapeError(std::string(what) + " example " + std::to_string(ex.id) + " has image shape " +
                       to_string(ex.image.shape()) + ", expected " + to_string(want));
    }
    if (ex.box) ex.box->validate();
  }
}

std::vector<double> parse_curve_csv(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

nlohmann::json report_json(const MetricReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"tp", r.counts.tp},        {"tn", r.counts.tn},          {"fp", r.counts.fp},
          {"fn", r.counts.fn},        {"accuracy", opt(r.accuracy)}, {"precision", opt(r.precision)},
          {"recall", opt(r.recall)},  {"f1", opt(r.f1)}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  ConfusionCounts c;
  c.tp = j.at("tp").get<std::size_t>();
  c.tn = j.at("tn").get<std::size_t>();
  c.fp = j.at("fp").get<std::size_t>();
  c.fn = j.at("fn").get<std::size_t>();
  return metric_report(c);
}

double f1_or_zero(const MetricReport& r) { return r.f1.value_or(0.0); }

void write_family_files(const std::filesystem::path& dir, const ModelFamily& family) {
  nlohmann::json j;
  j["tag"] = family.tag;
  j["config"] = family.config;
  j["checkpoints"] = nlohmann::json::array();
  std::vector<long> its;
  std::vector<double> f1;
  for (const auto& c : family.checkpoints) {
    nlohmann::json e{{"iteration", c.iteration}, {"file", c.file.filename().string()}};
    if (!c.loss_segment.empty()) e["mean_loss"] = mean(c.loss_segment);
    if (c.validation) {
      e["validation"] = report_json(*c.validation);
      its.push_back(c.iteration);
      f1.push_back(f1_or_zero(*c.validation));
    }
    j["checkpoints"].push_back(std::move(e));
  }
  std::vector<long> loss_its(family.loss_curve.size());
  for (std::size_t i = 0; i < loss_its.size(); ++i) loss_its[i] = static_cast<long>(i + 1);
  write_file_atomic(dir / kLossFile, curve_csv("loss", loss_its, family.loss_curve));
  write_file_atomic(dir / kF1File, curve_csv("f1", its, f1));
  write_file_atomic(dir / kFamilyFile, j.dump(1));
}

std::vector<std::pair<long, std::filesystem::path>> checkpoint_files(const std::filesystem::path& dir) {
  std::vector<std::pair<long, std::filesystem::path>> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.path().extension() != ".ckpt") continue;
    const std::string stem = entry.path().stem().string();
    long it = 0;
    const auto [ptr, err] = std::from_chars(stem.data(), stem.data() + stem.size(), it);
    if (err == std::errc() && ptr == stem.data() + stem.size()) out.emplace_back(it, entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> segment(const std::vector<double>& curve, long from_exclusive, long to_inclusive) {
  const auto lo = static_cast<std::size_t>(std::max<long>(0, from_exclusive));
  const auto hi = std::min(curve.size(), static_cast<std::size_t>(std::max<long>(0, to_inclusive)));
  if (lo >= hi) return {};
  return {curve.begin() + static_cast<std::ptrdiff_t>(lo), curve.begin() + static_cast<std::ptrdiff_t>(hi)};
}

}  // namespace

ModelFamily train(const TrainConfig& config, std::span<const Example> train_set, const TrainOptions& options) {
  config.validate(train_set.size());
  check_examples(train_set, config.detector, "training");
  check_examples(options.validation, config.detector, "validation");

  const OptimizerConfig optimizer = config.effective_optimizer();
  ModelFamily family;
  family.tag = config.family_tag();
  family.config = config;
  Model model = build_model(config.detector, config.seed);
  long start = 0;

  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    if (options.resume) {
      std::vector<std::pair<long, std::filesystem::path>> found;
      for (auto& f : checkpoint_files(*options.checkpoint_dir)) {
        if (f.first <= config.iterations) found.push_back(std::move(f));
      }
      if (!found.empty()) {
        const auto loss_path = *options.checkpoint_dir / kLossFile;
        std::vector<double> curve;
        if (std::filesystem::exists(loss_path)) curve = parse_curve_csv(read_text_file(loss_path));
        const long last = found.back().first;
        if (static_cast<long>(curve.size()) < last) {
          throw IoError("loss history in " + loss_path.string() + " stops before iteration " + std::to_string(last));
        }
        curve.resize(static_cast<std::size_t>(last));
        family.loss_curve = std::move(curve);
        long previous = 0;
        for (const auto& [it, path] : found) {
          CheckpointRecord rec;
          rec.iteration = it;
          rec.model = load_checkpoint(path);
          if (!(rec.model.config == config.detector)) {
            throw CheckpointMismatchError("checkpoint " + path.string() + " was trained with a different detector");
          }
          rec.file = path;
          rec.loss_segment = segment(family.loss_curve, previous, it);
          if (!options.validation.empty()) {
            rec.validation = validate_model(rec.model, options.validation, config.detector.decision_threshold);
          }
          previous = it;
          family.checkpoints.push_back(std::move(rec));
        }
        model = family.checkpoints.back().model;
        start = last;
      }
    }
  }

  Network<float>& net = model.network;
  const auto n = static_cast<std::size_t>(config.detector.input_size);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t image_size = kInputChannels * n * n;
  Tensor batch(Shape{batch_size, kInputChannels, n, n});
  Tensor head_grad;
  std::vector<const Example*> picked(batch_size);
  std::optional<double> last_f1;
  if (!family.checkpoints.empty() && family.checkpoints.back().validation) {
    last_f1 = f1_or_zero(*family.checkpoints.back().validation);
  }

  for (long it = start + 1; it <= config.iterations; ++it) {
    if (options.should_stop && options.should_stop()) break;
    std::mt19937_64 rng(frame_seed(config.seed, static_cast<std::uint64_t>(it)));
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    for (std::size_t b = 0; b < batch_size; ++b) {
      picked[b] = &train_set[pick(rng)];
      std::copy_n(picked[b]->image.data(), image_size, batch.data() + b * image_size);
    }
    ForwardTrace<float> trace;
    const Tensor head = net.forward(batch, trace);
    const double loss = batch_loss(config.detector, head, picked, head_grad);
    if (!std::isfinite(loss)) {
      throw NumericError("training loss became non-finite at iteration " + std::to_string(it));
    }
    net.backward(trace, head_grad);
    sgd_step<float>(net.layers(), optimizer, it);
    family.loss_curve.push_back(loss);

    if (it % config.checkpoint_every == 0) {
      model.iteration = it;
      CheckpointRecord rec;
      rec.iteration = it;
      rec.model = model;
      const long previous = family.checkpoints.empty() ? 0 : family.checkpoints.back().iteration;
      rec.loss_segment = segment(family.loss_curve, previous, it);
      if (!options.validation.empty()) {
        rec.validation = validate_model(model, options.validation, config.detector.decision_threshold);
        last_f1 = f1_or_zero(*rec.validation);
      }
      if (options.checkpoint_dir) {
        rec.file = *options.checkpoint_dir / (std::to_string(it) + ".ckpt");
        save_checkpoint(model, rec.file, true);
      }
      family.checkpoints.push_back(std::move(rec));
      if (options.checkpoint_dir) write_family_files(*options.checkpoint_dir, family);
    }
    if (options.on_progress) options.on_progress({it, config.iterations, loss, last_f1});
  }
  return family;
}

ModelFamily load_family(const std::filesystem::path& dir) {
  const auto path = dir / kFamilyFile;
  if (!std::filesystem::exists(path)) throw NotFoundError("no model family at " + dir.string());
  const nlohmann::json j = parse_json(read_text_file(path), path.string());
  ModelFamily family;
  try {
    family.tag = j.at("tag").get<std::string>();
    family.config = j.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("malformed " + path.string() + ": " + e.what());
  }
  const auto loss_path = dir / kLossFile;
  if (std::filesystem::exists(loss_path)) family.loss_curve = parse_curve_csv(read_text_file(loss_path));
  long previous = 0;
  for (const auto& e : j.at("checkpoints")) {
    CheckpointRecord rec;
    rec.iteration = e.at("iteration").get<long>();
    rec.file = dir / e.at("file").get<std::string>();
    rec.model = load_checkpoint(rec.file);
    rec.loss_segment = segment(family.loss_curve, previous, rec.iteration);
    if (e.contains("validation")) rec.validation = report_from_json(e["validation"]);
    previous = rec.iteration;
    family.checkpoints.push_back(std::move(rec));
  }
  return family;
}

// --------------------------------------------------------------- validation

namespace {

constexpr std::size_t kInferBatch = 16;

Tensor stack(std::span<const Tensor* const> images) {
  const Shape s = images.front()->shape();
  Tensor out(Shape{images.size(), s.c, s.h, s.w});
  const std::size_t size = s.c * s.h * s.w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i]->shape() == s)) throw ShapeError("images in one batch must share a shape");
    std::copy_n(images[i]->data(), size, out.data() + i * size);
  }
  return out;
}

std::vector<Decision> decide_batch(const Model& model, std::span<const Tensor* const> images, double threshold) {
  const Tensor head = model.network.infer(stack(images));
  std::vector<Decision> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(decide(grid_prediction(head, i), threshold));
  return out;
}

}  // namespace

std::vector<Decision> classify_images(const Model& model, std::span<const Example> examples, double threshold) {
  std::vector<Decision> out(examples.size());
  detail::parallel_chunks(examples.size(), kInferBatch, [&](std::size_t begin, std::size_t end) {
    std::vector<const Tensor*> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&examples[i].image);
    std::vector<Decision> d = decide_batch(model, images, threshold);
    std::move(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return out;
}

SelectionSet classify(const Model& model, std::span<const Example> examples, double threshold,
                      const std::string& method) {
  const std::vector<Decision> decisions = classify_images(model, examples, threshold);
  SelectionSet s{method, threshold, {}};
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (decisions[i].single_hit) s.ids.insert(examples[i].id);
  }
  return s;
}

SelectionSet classify(const Model& model, std::span<const PatternId> ids, const ImageSource& source,
                      double threshold, const std::string& method) {
  std::vector<char> hit(ids.size(), 0);
  detail::parallel_chunks(ids.size(), kInferBatch, [&](std::size_t begin, std::size_t end) {
    std::vector<Tensor> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(source(ids[i]));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : images) ptrs.push_back(&t);
    const std::vector<Decision> d = decide_batch(model, ptrs, threshold);
    for (std::size_t i = begin; i < end; ++i) hit[i] = d[i - begin].single_hit ? 1 : 0;
  });
  SelectionSet s{method, threshold, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (hit[i]) s.ids.insert(ids[i]);
  }
  return s;
}

MetricReport validate_model(const Model& model, std::span<const Example> validation, double threshold) {
  const SelectionSet predicted = classify(model, validation, threshold, "model");
  SelectionSet reference{"truth", std::nullopt, {}};
  std::set<PatternId> universe;
  for (const Example& ex : validation) {
    universe.insert(ex.id);
    if (ex.single) reference.ids.insert(ex.id);
  }
  return metric_report(confusion(predicted, reference, universe));
}

std::vector<CurvePoint> validate_family(ModelFamily& family, std::span<const Example> validation, double threshold) {
  check_examples(validation, family.config.detector, "validation");
  std::vector<CurvePoint> out;
  for (auto& c : family.checkpoints) {
    c.validation = validate_model(c.model, validation, threshold);
    out.push_back({c.iteration, *c.validation});
  }
  return out;
}

std::vector<double> f1_values(std::span<const CurvePoint> curve) {
  std::vector<double> out;
  out.reserve(curve.size());
  for (const auto& p : curve) out.push_back(f1_or_zero(p.report));
  return out;
}

CurveSummary summarize_curve(std::span<const CurvePoint> curve, long from_iteration, long to_iteration) {
  std::vector<double> acc, prec, rec, f1;
  for (const auto& p : curve) {
    if (p.iteration < from_iteration || p.iteration > to_iteration) continue;
    acc.push_back(p.report.accuracy.value_or(0.0));
    prec.push_back(p.report.precision.value_or(0.0));
    rec.push_back(p.report.recall.value_or(0.0));
    f1.push_back(p.report.f1.value_or(0.0));
  }
  if (f1.empty()) {
    throw ConfigError("no checkpoints between iterations " + std::to_string(from_iteration) + " and " +
                      std::to_string(to_iteration));
  }
  CurveSummary s;
  s.points = f1.size();
  s.accuracy = {mean(acc), population_std(acc)};
  s.precision = {mean(prec), population_std(prec)};
  s.recall = {mean(rec), population_std(rec)};
  s.f1 = {mean(f1), population_std(f1)};
  return s;
}

double trailing_slope(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw ConfigError("a slope needs at least two points");
  const double xm = (static_cast<double>(n) - 1.0) / 2.0;
  const double ym = mean(values);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    num += dx * (values[i] - ym);
    den += dx * dx;
  }
  return num / den;
}

std::optional<std::size_t> detect_saturation(std::span<const double> curve, std::size_t window, double slope_tol) {
  if (window < 2) throw ConfigError("saturation window must be at least 2");
  if (curve.size() < 2 * window) {
    throw ConfigError("curve of " + std::to_string(curve.size()) + " points is too short for a window of " +
                      std::to_string(window));
  }
  std::optional<std::size_t> earliest;
  for (std::size_t end = curve.size(); end >= window; --end) {
    const double slope = trailing_slope(curve.subspan(end - window, window));
    if (std::abs(slope) > slope_tol) break;
    earliest = end - 1;
  }
  return earliest;
}

// ---------------------------------------------------------- stable selection

SelectionSet intersect_selections(std::span<const SelectionSet> selections, const std::string& method) {
  if (selections.empty()) throw ConfigError("cannot intersect zero selections");
  SelectionSet out{method, selections.front().threshold, selections.front().ids};
  for (std::size_t i = 1; i < selections.size(); ++i) {
    std::erase_if(out.ids, [&](PatternId id) { return !selections[i].ids.contains(id); });
  }
  return out;
}

StableSelection stable_from_selections(const std::string& family, std::vector<long> iterations,
                                       std::vector<SelectionSet> per_checkpoint) {
  if (iterations.size() != per_checkpoint.size()) throw ConfigError("one selection per checkpoint is required");
  StableSelection s;
  s.family = family;
  s.iterations = std::move(iterations);
  s.per_checkpoint = std::move(per_checkpoint);
  s.final_selection = intersect_selections(
      s.per_checkpoint, family + "-stable@" + (s.iterations.empty() ? std::string("?") : std::to_string(s.iterations.front())));
  for (const auto& sel : s.per_checkpoint) s.counts.push_back(static_cast<double>(sel.size()));
  s.count_std = population_std(s.counts);
  return s;
}

namespace {

std::vector<const CheckpointRecord*> pick_checkpoints(const ModelFamily& family, long start, std::size_t count,
                                                      std::vector<long>& iterations) {
  if (count == 0) throw ConfigError("stable selection needs at least one checkpoint");
  std::vector<const CheckpointRecord*> out;
  for (std::size_t k = 0; k < count; ++k) {
    const long it = start + static_cast<long>(k) * family.config.checkpoint_every;
    const CheckpointRecord* rec = family.at_iteration(it);
    if (!rec) {
      std::string available;
      for (long a : family.iterations()) available += (available.empty() ? "" : ", ") + std::to_string(a);
      throw NotFoundError("family " + family.tag + " has no checkpoint at iteration " + std::to_string(it) +
                          " (available: " + (available.empty() ? "none" : available) + ")");
    }
    iterations.push_back(it);
    out.push_back(rec);
  }
  return out;
}

std::string checkpoint_method(const std::string& family, long iteration) {
  return family + "@" + std::to_string(iteration);
}

}  // namespace

StableSelection stable_select(const ModelFamily& family, long start_iteration, std::span<const PatternId> ids,
                              const ImageSource& source, double threshold, std::size_t count) {
  std::vector<long> iterations;
  const auto records = pick_checkpoints(family, start_iteration, count, iterations);
  std::vector<std::vector<char>> hits(records.size(), std::vector<char>(ids.size(), 0));
  detail::parallel_chunks(ids.size(), kInferBatch, [&](std::size_t begin, std::size_t end) {
    std::vector<Tensor> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(source(ids[i]));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : images) ptrs.push_back(&t);
    for (std::size_t k = 0; k < records.size(); ++k) {
      const std::vector<Decision> d = decide_batch(records[k]->model, ptrs, threshold);
      for (std::size_t i = begin; i < end; ++i) hits[k][i] = d[i - begin].single_hit ? 1 : 0;
    }
  });
  std::vector<SelectionSet> per;
  for (std::size_t k = 0; k < records.size(); ++k) {
    SelectionSet s{checkpoint_method(family.tag, iterations[k]), threshold, {}};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (hits[k][i]) s.ids.insert(ids[i]);
    }
    per.push_back(std::move(s));
  }
  return stable_from_selections(family.tag, std::move(iterations), std::move(per));
}

StableSelection stable_select(const ModelFamily& family, long start_iteration, std::span<const Example> examples,
                              double threshold, std::size_t count) {
  std::vector<long> iterations;
  const auto records = pick_checkpoints(family, start_iteration, count, iterations);
  std::vector<SelectionSet> per;
  for (std::size_t k = 0; k < records.size(); ++k) {
    per.push_back(classify(records[k]->model, examples, threshold, checkpoint_method(family.tag, iterations[k])));
  }
  return stable_from_selections(family.tag, std::move(iterations), std::move(per));
}

Evaluation evaluate_selection(const SelectionSet& selection, const SelectionSet& reference,
                              const std::set<PatternId>& universe) {
  Evaluation e;
  e.report = metric_report(confusion(selection, reference, universe));
  e.intersection = intersection_size(selection, reference);
  e.selected = selection.size();
  e.reference = reference.size();
  e.iou = selection_iou(e.selected, e.reference, e.intersection);
  return e;
}

std::string evaluation_header() {
  return "Model | Number of single hits | Intersection | IoU, % | Accuracy, % | Precision, % | Recall, %";
}

std::string evaluation_row(const std::string& model, const Evaluation& e) {
  return model + " | " + std::to_string(e.selected) + " | " + std::to_string(e.intersection) + " | " +
         percent(e.iou, 0) + " | " + percent(e.report.accuracy, 0) + " | " + percent(e.report.precision, 0) +
         " | " + percent(e.report.recall, 0);
}

std::string curve_csv(const std::string& name, std::span<const long> iterations, std::span<const double> values) {
  if (iterations.size() != values.size()) throw ConfigError("curve iterations and values differ in length");
  std::string out = "iteration," + name + "\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g\n", iterations[i], values[i]);
    out += buf;
  }
  return out;
}

}  // namespace spi
