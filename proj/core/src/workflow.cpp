#include "spi/workflow.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>
#include <nlohmann/json.hpp>

#include "parallel.hpp"
#include "spi/checkpoint.hpp"
#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"
#include "spi/preprocess.hpp"

namespace spi {

SelectionSet truth_selection(const Dataset& dataset) {
  SelectionSet s{"truth", std::nullopt, {}};
  for (const auto& e : dataset.manifest().entries) {
    if (e.truth == Label::single) s.ids.insert(e.id);
  }
  return s;
}

SimulateResult simulate_into_store(Store& store, const SimConfig& config) {
  config.validate();
  const DetectorGeometry geometry = config.geometry;
  {
    Dataset ds = Dataset::open_or_create(store.dataset_dir(), geometry);
    (void)ds;
  }
  store.reload_dataset();
  SimulateResult result;
  result.frames = make_dataset(config, store.mutable_dataset());
  result.truth = truth_selection(store.dataset());
  store.save_selection("truth", result.truth);
  return result;
}

PreprocessResult preprocess_store(Store& store, const PreprocessOptions& options) {
  if (options.min_diameter_nm > options.max_diameter_nm) throw ConfigError("size filter range is empty");
  Dataset& ds = store.mutable_dataset();
  const QMap map = qmap(ds.geometry());
  const std::vector<PatternId> ids = ds.manifest().ids();

  std::optional<RadialProfile> baseline;
  if (options.background_selection) {
    const SelectionSet bg = store.load_selection(*options.background_selection);
    std::vector<Pattern> frames;
    for (PatternId id : bg.ids) frames.push_back(ds.read_pattern(id));
    if (frames.empty()) throw ConfigError("background selection '" + *options.background_selection + "' is empty");
    baseline = azimuthal_median(frames);
  } else {
    std::clog << "warning: no background selection given, patterns are not background-subtracted\n";
  }
  if (options.preview) options.preview->validate();

  std::vector<SizeEstimate> estimates(ids.size());
  detail::parallel_chunks(ids.size(), 4, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Pattern p = ds.read_pattern(ids[i]);
      if (baseline) p = subtract_background(p, baseline);
      estimates[i] = estimate_size(p, map);
      if (options.preview) {
        const auto path = store.root() / "previews" / options.preview->tag() / (std::to_string(ids[i]) + ".png");
        write_file_atomic(path, encode_png(rasterize(p, *options.preview)));
      }
    }
  });

  PreprocessResult result;
  result.patterns = ids.size();
  result.size_filtered.method = "size-filter";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ds.set_size_estimate(ids[i], estimates[i].diameter_nm);
    if (!estimates[i].diameter_nm) continue;
    ++result.sized;
    if (size_filter(*estimates[i].diameter_nm, options.min_diameter_nm, options.max_diameter_nm)) {
      result.size_filtered.ids.insert(ids[i]);
    }
  }
  ds.save_manifest();
  store.save_selection("size-filtered", result.size_filtered);
  return result;
}

std::map<PatternId, PatternLabel> effective_labels(const Store& store) {
  std::map<PatternId, PatternLabel> out;
  for (const auto& e : store.dataset().manifest().entries) {
    if (e.truth) out[e.id] = PatternLabel{*e.truth == Label::single, e.box, "truth"};
  }
  for (const auto& [id, record] : store.human_labels()) {
    out[id] = PatternLabel{record.label == Label::single, record.box, "human"};
  }
  return out;
}

DatasetSplit assign_split(Store& store, const SplitRequest& request, std::uint64_t seed) {
  const auto labels = effective_labels(store);
  std::vector<LabeledId> universe;
  for (const auto& [id, label] : labels) universe.push_back({id, label.single});
  DatasetSplit split = split_dataset(universe, request, seed);
  Dataset& ds = store.mutable_dataset();
  for (PatternId id : ds.manifest().ids()) {
    if (!labels.contains(id)) split.test.push_back(id);
  }
  std::sort(split.test.begin(), split.test.end());
  for (PatternId id : split.train) ds.set_split(id, "train");
  for (PatternId id : split.validation) ds.set_split(id, "validation");
  for (PatternId id : split.test) ds.set_split(id, "test");
  ds.save_manifest();
  return split;
}

std::vector<Example> load_examples(const Store& store, std::span<const PatternId> ids, const RenderSpec& spec,
                                   int input_size, const std::map<PatternId, PatternLabel>& labels,
                                   const BoxAnnotation& default_box) {
  const Dataset& ds = store.dataset();
  std::vector<Example> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = labels.find(ids[i]);
    if (it == labels.end()) throw ValidationError("pattern " + std::to_string(ids[i]) + " has no label");
    out[i].id = ids[i];
    out[i].single = it->second.single;
    if (out[i].single) out[i].box = it->second.box.value_or(default_box);
  }
  detail::parallel_chunks(ids.size(), 8, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i].image = render_network_input(ds.read_pattern(ids[i]), spec, static_cast<std::size_t>(input_size));
    }
  });
  return out;
}

TrainingData load_training_data(const Store& store, const TrainConfig& config) {
  const Dataset& ds = store.dataset();
  const auto labels = effective_labels(store);
  std::vector<PatternId> train_ids = ds.manifest().ids_in_split("train");
  const std::vector<PatternId> validation_ids = ds.manifest().ids_in_split("validation");
  if (train_ids.empty()) {
    const std::set<PatternId> held(validation_ids.begin(), validation_ids.end());
    for (const auto& [id, label] : store.human_labels()) {
      if (!held.contains(id)) train_ids.push_back(id);
    }
  }
  if (train_ids.empty()) throw ConfigError("no training patterns: tag a train split or add human labels");
  TrainingData data;
  data.train = load_examples(store, train_ids, config.render, config.detector.input_size, labels, config.default_box);
  data.validation =
      load_examples(store, validation_ids, config.render, config.detector.input_size, labels, config.default_box);
  return data;
}

ModelFamily train_in_store(Store& store, const TrainConfig& config, TrainOptions options) {
  const TrainingData data = load_training_data(store, config);
  config.validate(data.train.size());
  options.checkpoint_dir = store.family_dir(config.family_tag());
  options.validation = data.validation;
  return train(config, data.train, options);
}

ImageSource store_image_source(const Store& store, const RenderSpec& spec, int input_size) {
  const Dataset* ds = &store.dataset();
  return [ds, spec, input_size](PatternId id) {
    return render_network_input(ds->read_pattern(id), spec, static_cast<std::size_t>(input_size));
  };
}

namespace {

std::optional<TrainConfig> family_config(const std::filesystem::path& dir) {
  const auto path = dir / "family.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  const nlohmann::json j = parse_json(read_text_file(path), path.string());
  return j.at("config").get<TrainConfig>();
}

}  // namespace

ResolvedModel resolve_checkpoint(const Store& store, const std::string& reference) {
  if (reference.empty()) throw ValidationError("checkpoint reference is empty");
  std::filesystem::path path;
  std::string family;
  const auto at = reference.find('@');
  if (reference.ends_with(".ckpt")) {
    path = reference;
    if (!std::filesystem::exists(path)) path = store.root() / reference;
    family = path.parent_path().filename().string();
  } else if (at != std::string::npos) {
    family = reference.substr(0, at);
    const std::string it_text = reference.substr(at + 1);
    long it = 0;
    const auto [ptr, err] = std::from_chars(it_text.data(), it_text.data() + it_text.size(), it);
    if (err != std::errc() || ptr != it_text.data() + it_text.size()) {
      throw ValidationError("bad checkpoint iteration in '" + reference + "'");
    }
    path = store.checkpoint_path(family, it);
  } else {
    family = reference;
    check_artifact_name(family);
    long best = -1;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(store.family_dir(family), ec)) {
      if (entry.path().extension() != ".ckpt") continue;
      const std::string stem = entry.path().stem().string();
      long it = 0;
      const auto [ptr, err] = std::from_chars(stem.data(), stem.data() + stem.size(), it);
      if (err == std::errc() && ptr == stem.data() + stem.size() && it > best) {
        best = it;
        path = entry.path();
      }
    }
    if (best < 0) throw NotFoundError("model family '" + family + "' has no checkpoints");
  }
  ResolvedModel out;
  out.model = load_checkpoint(path);
  out.family = family;
  if (auto cfg = family_config(path.parent_path())) out.render = cfg->render;
  return out;
}

std::vector<PatternId> default_target_ids(const Dataset& dataset) {
  std::vector<PatternId> test = dataset.manifest().ids_in_split("test");
  if (!test.empty()) return test;
  std::vector<PatternId> out;
  for (const auto& e : dataset.manifest().entries) {
    if (e.split != "train" && e.split != "validation") out.push_back(e.id);
  }
  return out;
}

SelectionSet classify_in_store(Store& store, const std::string& checkpoint, std::optional<double> threshold,
                               const std::string& name) {
  check_artifact_name(name);
  const ResolvedModel resolved = resolve_checkpoint(store, checkpoint);
  const double t = threshold.value_or(resolved.model.config.decision_threshold);
  const std::vector<PatternId> ids = default_target_ids(store.dataset());
  SelectionSet s = classify(resolved.model, ids,
                            store_image_source(store, resolved.render, resolved.model.config.input_size), t,
                            resolved.family + "@" + std::to_string(resolved.model.iteration));
  store.save_selection(name, s);
  return s;
}

long choose_stable_start(const ModelFamily& family, std::size_t margin, std::size_t count) {
  if (family.checkpoints.size() < count) {
    throw NotFoundError("family " + family.tag + " has " + std::to_string(family.checkpoints.size()) +
                        " checkpoints, stable selection needs " + std::to_string(count));
  }
  const std::size_t last_start = family.checkpoints.size() - count;
  std::vector<double> f1;
  for (const auto& c : family.checkpoints) {
    if (!c.validation) {
      f1.clear();
      break;
    }
    f1.push_back(c.validation->f1.value_or(0.0));
  }
  std::size_t index = last_start;
  if (f1.size() >= 2 * kSaturationWindow) {
    if (const auto sat = detect_saturation(f1)) index = std::min(last_start, *sat + margin);
  }
  return family.checkpoints[index].iteration;
}

StableSelection stable_select_in_store(Store& store, const StableRequest& request) {
  check_artifact_name(request.name);
  const ModelFamily family = load_family(store.family_dir(request.family));
  const long start = request.start_iteration.value_or(choose_stable_start(family, 0, request.count));
  const double t = request.threshold.value_or(family.config.detector.decision_threshold);
  const std::vector<PatternId> ids = default_target_ids(store.dataset());
  StableSelection s = stable_select(family, start, ids,
                                    store_image_source(store, family.config.render, family.config.detector.input_size),
                                    t, request.count);
  store.save_selection(request.name, s.final_selection);
  write_file_atomic(store.selections_dir() / (request.name + ".summary.json"), stable_selection_json(s));
  return s;
}

std::string stable_selection_json(const StableSelection& s) {
  nlohmann::json j;
  j["family"] = s.family;
  j["iterations"] = s.iterations;
  j["counts"] = s.counts;
  j["count_std"] = s.count_std;
  j["final_count"] = s.final_selection.size();
  j["method"] = s.final_selection.method;
  return j.dump(1);
}

std::set<PatternId> evaluation_universe(const Dataset& dataset) {
  std::set<PatternId> out;
  const std::vector<PatternId> test = dataset.manifest().ids_in_split("test");
  if (!test.empty()) return {test.begin(), test.end()};
  for (const auto& e : dataset.manifest().entries) {
    if (e.split != "train") out.insert(e.id);
  }
  return out;
}

Evaluation evaluate_in_store(const Store& store, const SelectionSet& selection, const SelectionSet& reference) {
  const std::set<PatternId> universe = evaluation_universe(store.dataset());
  SelectionSet projected = reference;
  std::erase_if(projected.ids, [&](PatternId id) { return !universe.contains(id); });
  return evaluate_selection(selection, projected, universe);
}

std::vector<std::uint8_t> render_png(const Store& store, PatternId id, const RenderSpec& spec) {
  return encode_png(rasterize(store.dataset().read_pattern(id), spec));
}

}  // namespace spi
