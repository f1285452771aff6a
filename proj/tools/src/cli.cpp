#include "spi_cli/cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"
#include "spi/service.hpp"
#include "spi/workflow.hpp"

namespace spi::cli {

namespace {

using nlohmann::json;

// Reads the config file for `section`. A document with a top-level key equal
// to the section name uses that sub-object.
json load_config(const std::optional<std::string>& path, const std::string& section) {
  if (!path) return json::object();
  if (!std::filesystem::exists(*path)) throw ConfigError("config file not found: " + *path);
  json j = parse_json(read_text_file(*path), *path);
  if (!j.is_object()) throw ConfigError("config file " + *path + " must hold a JSON object");
  if (j.contains(section) && j[section].is_object()) return j[section];
  return j;
}

template <typename T>
void override_with(T& target, const std::optional<T>& flag) {
  if (flag) target = *flag;
}

std::filesystem::path resolve_selection_path(const Store& store, const std::string& arg) {
  if (arg.ends_with(".json")) {
    std::filesystem::path p(arg);
    if (std::filesystem::exists(p) || p.is_absolute()) return p;
    return store.root() / p;
  }
  return store.selection_path(arg);
}

struct Common {
  std::optional<std::string> store;
  std::optional<std::string> config;

  [[nodiscard]] std::filesystem::path root() const { return store ? std::filesystem::path(*store) : Store::default_root(); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--store", c.store, "Store root (default: $SPI_STORE or .)");
  cmd->add_option("--config", c.config, "JSON config file; flags override it");
}

// ------------------------------------------------------------------ simulate

struct SimulateFlags {
  Common common;
  std::optional<std::size_t> singles, negatives;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split, out;
  std::optional<double> fluence, background, multiple_fraction, droplet_fraction;
};

int cmd_simulate(const SimulateFlags& f, std::ostream& out) {
  SimConfig config = load_config(f.common.config, "simulate").get<SimConfig>();
  override_with(config.singles, f.singles);
  override_with(config.negatives, f.negatives);
  override_with(config.seed, f.seed);
  override_with(config.split, f.split);
  override_with(config.fluence, f.fluence);
  override_with(config.background, f.background);
  override_with(config.multiple_fraction, f.multiple_fraction);
  override_with(config.droplet_fraction, f.droplet_fraction);
  config.validate();
  if (config.singles + config.negatives == 0) throw ConfigError("nothing to simulate: give --singles/--negatives");

  // --out names the dataset directory; the store root is its parent.
  std::filesystem::path root = f.common.root();
  if (f.out) {
    std::filesystem::path dir = std::filesystem::path(*f.out).lexically_normal();
    if (dir.filename().empty()) dir = dir.parent_path();
    if (dir.filename() != "dataset") throw ConfigError("--out must name a directory called 'dataset'");
    root = dir.has_parent_path() ? dir.parent_path() : std::filesystem::path(".");
  }
  Store store(root);
  const SimulateResult r = simulate_into_store(store, config);
  std::size_t singles = 0;
  for (const auto& fr : r.frames) singles += fr.kind == SceneKind::single ? 1 : 0;
  out << "simulated " << r.frames.size() << " frames (" << singles << " single, " << r.frames.size() - singles
      << " non-single) into " << store.dataset_dir().string() << "\n";
  out << "dataset now holds " << store.dataset().manifest().entries.size() << " patterns, " << r.truth.size()
      << " single hits in selections/truth.json\n";
  return kExitOk;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessFlags {
  Common common;
  std::optional<std::string> background;
  std::optional<double> min_nm, max_nm;
  std::optional<std::string> preview_colormap, preview_scale;
  bool preview = false;
  std::vector<std::size_t> split;  // train single, train non-single, validation single, validation non-single
  std::uint64_t split_seed = 1;
};

int cmd_preprocess(const PreprocessFlags& f, std::ostream& out) {
  const json cfg = load_config(f.common.config, "preprocess");
  PreprocessOptions options;
  options.min_diameter_nm = cfg.value("min_diameter_nm", options.min_diameter_nm);
  options.max_diameter_nm = cfg.value("max_diameter_nm", options.max_diameter_nm);
  if (cfg.contains("background_selection")) options.background_selection = cfg["background_selection"].get<std::string>();
  override_with(options.min_diameter_nm, f.min_nm);
  override_with(options.max_diameter_nm, f.max_nm);
  if (f.background) options.background_selection = f.background;
  if (f.preview || f.preview_colormap || f.preview_scale) {
    RenderSpec spec;
    if (f.preview_colormap) spec.colormap = parse_colormap(*f.preview_colormap);
    if (f.preview_scale) spec.scale = parse_scale(*f.preview_scale);
    options.preview = spec;
  }
  if (!f.split.empty() && f.split.size() != 4) {
    throw ConfigError("--split takes four counts: train-single train-non-single validation-single validation-non-single");
  }
  Store store(f.common.root());
  const PreprocessResult r = preprocess_store(store, options);
  out << "sized " << r.sized << " of " << r.patterns << " patterns; " << r.size_filtered.size() << " within "
      << options.min_diameter_nm << "-" << options.max_diameter_nm << " nm (selections/size-filtered.json)\n";
  if (!f.split.empty()) {
    const DatasetSplit s = assign_split(store, {f.split[0], f.split[1], f.split[2], f.split[3]}, f.split_seed);
    out << "split: " << s.train.size() << " train, " << s.validation.size() << " validation, " << s.test.size()
        << " test\n";
  }
  return kExitOk;
}

// --------------------------------------------------------------------- train

struct TrainFlags {
  Common common;
  std::optional<long> iterations, checkpoint_every;
  std::optional<int> batch, input_size;
  std::optional<double> lr, momentum, weight_decay;
  std::optional<std::string> colormap, scale, family;
  std::optional<std::uint64_t> seed;
  bool no_resume = false;
  bool quiet = false;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
  TrainConfig config = load_config(f.common.config, "train").get<TrainConfig>();
  override_with(config.iterations, f.iterations);
  override_with(config.checkpoint_every, f.checkpoint_every);
  override_with(config.batch_size, f.batch);
  override_with(config.optimizer.learning_rate, f.lr);
  override_with(config.optimizer.momentum, f.momentum);
  override_with(config.optimizer.weight_decay, f.weight_decay);
  override_with(config.seed, f.seed);
  override_with(config.family, f.family);
  if (f.input_size) config.detector.input_size = *f.input_size;
  if (f.colormap) config.render.colormap = parse_colormap(*f.colormap);
  if (f.scale) config.render.scale = parse_scale(*f.scale);
  config.detector.validate();
  config.optimizer.validate();

  Store store(f.common.root());
  TrainOptions options;
  options.resume = !f.no_resume;
  if (!f.quiet) {
    options.on_progress = [&out, every = config.checkpoint_every](const TrainProgress& p) {
      if (p.iteration % every != 0) return;
      out << "iteration " << p.iteration << "/" << p.total << " loss " << p.loss;
      if (p.validation_f1) out << " validation F1 " << *p.validation_f1;
      out << "\n" << std::flush;
    };
  }
  const ModelFamily family = train_in_store(store, config, options);
  out << "family " << family.tag << ": " << family.checkpoints.size() << " checkpoints in "
      << store.family_dir(family.tag).string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ classify

struct ClassifyFlags {
  Common common;
  std::string checkpoint;
  std::optional<double> threshold;
  std::optional<std::string> name;
};

int cmd_classify(const ClassifyFlags& f, std::ostream& out) {
  Store store(f.common.root());
  const std::string name = f.name.value_or("classified");
  const SelectionSet s = classify_in_store(store, f.checkpoint, f.threshold, name);
  out << s.method << ": " << s.size() << " single hits at threshold " << s.threshold.value_or(0.0)
      << " -> selections/" << name << ".json\n";
  return kExitOk;
}

// ------------------------------------------------------------- stable-select

struct StableFlags {
  Common common;
  std::string family;
  std::optional<long> start;
  std::optional<double> threshold;
  std::size_t count = kStableCheckpoints;
  std::string name = "stable";
};

int cmd_stable(const StableFlags& f, std::ostream& out) {
  Store store(f.common.root());
  StableRequest req;
  req.family = f.family;
  req.start_iteration = f.start;
  req.threshold = f.threshold;
  req.count = f.count;
  req.name = f.name;
  const StableSelection s = stable_select_in_store(store, req);
  for (std::size_t k = 0; k < s.iterations.size(); ++k) {
    out << "iteration " << s.iterations[k] << ": " << s.per_checkpoint[k].size() << " single hits\n";
  }
  char std_text[32];
  std::snprintf(std_text, sizeof std_text, "%.1f", s.count_std);
  out << "stable selection: " << s.final_selection.size() << " single hits (count std " << std_text
      << ") -> selections/" << f.name << ".json\n";
  return kExitOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateFlags {
  Common common;
  std::string selection;
  std::string reference = "truth";
  bool json_output = false;
};

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out) {
  Store store(f.common.root());
  const SelectionSet selection = read_selection(resolve_selection_path(store, f.selection));
  const SelectionSet reference = read_selection(resolve_selection_path(store, f.reference));
  const Evaluation e = evaluate_in_store(store, selection, reference);
  if (f.json_output) {
    json j = json::parse(metric_report_json(e.report, Resolution::machine, e.iou, e.intersection));
    j["selected"] = e.selected;
    j["reference"] = e.reference;
    out << j.dump() << "\n";
  } else {
    out << evaluation_header() << "\n" << evaluation_row(selection.method, e) << "\n";
  }
  return kExitOk;
}

// --------------------------------------------------------------------- serve

struct ServeFlags {
  Common common;
  std::string host = "127.0.0.1";
  int port = 8080;
};

Service* g_service = nullptr;

extern "C" void handle_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const ServeFlags& f, std::ostream& out) {
  Service service(f.common.root(), ServiceConfig{f.host, f.port});
  const int port = service.bind();
  out << "serving " << f.common.root().string() << " on http://" << f.host << ":" << port << "\n" << std::flush;
  g_service = &service;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  service.listen();
  g_service = nullptr;
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-hit triage for single-particle imaging diffraction patterns", "spi"};
  app.require_subcommand(1);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate labeled diffraction patterns into the store");
  add_common(simulate, sim.common);
  simulate->add_option("--singles", sim.singles, "Single-hit patterns to render");
  simulate->add_option("--negatives", sim.negatives, "Non-single patterns to render");
  simulate->add_option("--seed", sim.seed, "Simulation seed");
  simulate->add_option("--split", sim.split, "Split tag for the new patterns (train, validation, test)");
  simulate->add_option("--out", sim.out, "Dataset directory (default <store>/dataset)");
  simulate->add_option("--fluence", sim.fluence, "Photons per pixel at q=0 for the reference sphere");
  simulate->add_option("--background", sim.background, "Flat background photons per pixel");
  simulate->add_option("--multiple-fraction", sim.multiple_fraction, "Share of negatives with 2-3 particles");
  simulate->add_option("--droplet-fraction", sim.droplet_fraction, "Share of negatives that are droplets");

  PreprocessFlags pre;
  auto* preprocess = app.add_subcommand("preprocess", "Estimate particle sizes, apply the size filter, split");
  add_common(preprocess, pre.common);
  preprocess->add_option("--background", pre.background, "Selection of background frames to subtract");
  preprocess->add_option("--min-nm", pre.min_nm, "Size filter lower bound");
  preprocess->add_option("--max-nm", pre.max_nm, "Size filter upper bound");
  preprocess->add_flag("--preview", pre.preview, "Write preview PNGs");
  preprocess->add_option("--preview-colormap", pre.preview_colormap, "jet or grayscale");
  preprocess->add_option("--preview-scale", pre.preview_scale, "linear or log");
  preprocess->add_option("--split", pre.split, "Tag train/validation splits: TS TN VS VN")->expected(4);
  preprocess->add_option("--split-seed", pre.split_seed, "Split seed");

  TrainFlags tr;
  auto* trainc = app.add_subcommand("train", "Train a detector family on the train split");
  add_common(trainc, tr.common);
  trainc->add_option("--iterations", tr.iterations, "Total iterations");
  trainc->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence");
  trainc->add_option("--batch", tr.batch, "Batch size");
  trainc->add_option("--input-size", tr.input_size, "Network input size");
  trainc->add_option("--lr", tr.lr, "Base learning rate");
  trainc->add_option("--momentum", tr.momentum, "SGD momentum");
  trainc->add_option("--weight-decay", tr.weight_decay, "Weight decay");
  trainc->add_option("--colormap", tr.colormap, "jet or grayscale");
  trainc->add_option("--scale", tr.scale, "linear or log");
  trainc->add_option("--family", tr.family, "Family tag (default <colormap>-<scale>-s<seed>)");
  trainc->add_option("--seed", tr.seed, "Initialization and batch seed");
  trainc->add_flag("--no-resume", tr.no_resume, "Ignore existing checkpoints");
  trainc->add_flag("--quiet", tr.quiet, "No progress output");

  ClassifyFlags cl;
  auto* classifyc = app.add_subcommand("classify", "Classify the test patterns with one checkpoint");
  add_common(classifyc, cl.common);
  classifyc->add_option("--checkpoint", cl.checkpoint, "family@iteration, family, or a .ckpt path")->required();
  classifyc->add_option("--threshold", cl.threshold, "Objectness threshold (default from the model)");
  classifyc->add_option("--name", cl.name, "Selection name (default 'classified')");

  StableFlags st;
  auto* stable = app.add_subcommand("stable-select", "Intersect the selections of consecutive checkpoints");
  add_common(stable, st.common);
  stable->add_option("--family", st.family, "Model family")->required();
  stable->add_option("--start", st.start, "First checkpoint iteration (default: after saturation)");
  stable->add_option("--threshold", st.threshold, "Objectness threshold");
  stable->add_option("--count", st.count, "Checkpoints to intersect");
  stable->add_option("--name", st.name, "Selection name");

  EvaluateFlags ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compare a selection with a reference selection");
  add_common(evaluate, ev.common);
  evaluate->add_option("--selection", ev.selection, "Selection name or .json path")->required();
  evaluate->add_option("--reference", ev.reference, "Reference selection (default truth)");
  evaluate->add_flag("--json", ev.json_output, "Machine-readable output");

  ServeFlags sv;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  add_common(serve, sv.common);
  serve->add_option("--host", sv.host, "Bind address");
  serve->add_option("--port", sv.port, "Port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, out);
    if (*preprocess) return cmd_preprocess(pre, out);
    if (*trainc) return cmd_train(tr, out);
    if (*classifyc) return cmd_classify(cl, out);
    if (*stable) return cmd_stable(st, out);
    if (*evaluate) return cmd_evaluate(ev, out);
    if (*serve) return cmd_serve(sv, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace spi::cli
