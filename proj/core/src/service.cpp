#include "spi/service.hpp"

#include <httplib.h>

#include <atomic>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"
#include "spi/metrics.hpp"
#include "spi/store.hpp"
#include "spi/workflow.hpp"

namespace spi {

std::string to_string(JobState state) {
  switch (state) {
    case JobState::idle: return "idle";
    case JobState::running: return "running";
    case JobState::finished: return "finished";
    case JobState::failed: return "failed";
  }
  return "idle";
}

namespace {

using nlohmann::json;

struct HttpError {
  int status;
  std::string error;
  std::string detail;
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  send_json(res, status, json{{"error", error}, {"detail", detail}});
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json status_json(const TrainJobStatus& s) {
  return json{{"state", to_string(s.state)},  {"job_id", s.job_id},
              {"family", s.family},           {"iteration", s.iteration},
              {"total", s.total},             {"loss", optional_json(s.loss)},
              {"validation_f1", optional_json(s.validation_f1)}, {"error", s.error}};
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw HttpError{400, "bad_request", std::string("body is not valid JSON: ") + e.what()};
  }
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string text = req.get_param_value(key);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos != text.size() || v < 0) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw HttpError{400, "bad_request", std::string("query parameter '") + key + "' must be a non-negative integer"};
  }
}

std::string selection_name_from(const std::string& method) {
  std::string out;
  for (char c : method) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '-';
  }
  return out.empty() ? "classify" : out;
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  Store store;
  httplib::Server server;
  int port = -1;

  mutable std::mutex job_mutex;
  TrainJobStatus job;
  std::thread worker;
  std::atomic<bool> stop_requested{false};
  long job_counter = 0;

  mutable std::mutex prediction_mutex;
  std::optional<SelectionSet> latest_prediction;

  Impl(std::filesystem::path root, ServiceConfig cfg) : config(std::move(cfg)), store(std::move(root)) {
    if (!std::filesystem::is_directory(store.root())) {
      throw NotFoundError("store directory does not exist: " + store.root().string());
    }
    routes();
  }

  ~Impl() {
    stop_requested = true;
    server.stop();
    if (worker.joinable()) worker.join();
  }

  template <typename F>
  httplib::Server::Handler guarded(F&& body) {
    return [this, body = std::forward<F>(body)](const httplib::Request& req, httplib::Response& res) {
      try {
        body(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.error, e.detail);
      } catch (const NotFoundError& e) {
        send_error(res, 404, "not_found", e.what());
      } catch (const ConfigError& e) {  // includes validation, annotation and shape errors
        send_error(res, 400, "bad_request", e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes() {
    server.Get("/api/patterns", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 list_patterns(req, res);
               }));
    server.Get(R"(/api/patterns/(\d+)/image\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 image(req, res);
               }));
    server.Post("/api/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  post_label(req, res);
                }));
    server.Post("/api/train", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  start_training(req, res);
                }));
    server.Get("/api/train/status", guarded([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, status_json(snapshot()));
               }));
    server.Get("/api/train/curves", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 curves(req, res);
               }));
    server.Post("/api/classify", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  post_classify(req, res);
                }));
    server.Get(R"(/api/selections/([A-Za-z0-9._-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const SelectionSet s = store.load_selection(req.matches[1]);
                 res.status = 200;
                 res.set_content(selection_to_json(s), "application/json");
               }));
    server.Get("/api/metrics", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 metrics(req, res);
               }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const std::string error = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
        res.set_content(json{{"error", error}, {"detail", "no such endpoint"}}.dump(), "application/json");
      }
    });
  }

  TrainJobStatus snapshot() const {
    std::lock_guard lock(job_mutex);
    return job;
  }

  void list_patterns(const httplib::Request& req, httplib::Response& res) {
    const std::size_t offset = query_size(req, "offset", 0);
    const std::size_t limit = std::min<std::size_t>(query_size(req, "limit", 50), 1000);
    const Dataset& ds = store.dataset();
    const auto human = store.human_labels();
    std::optional<SelectionSet> prediction;
    {
      std::lock_guard lock(prediction_mutex);
      prediction = latest_prediction;
    }
    const auto& entries = ds.manifest().entries;
    json items = json::array();
    for (std::size_t i = offset; i < entries.size() && i < offset + limit; ++i) {
      const ManifestEntry& e = entries[i];
      json item{{"id", e.id}, {"split", e.split}};
      const auto h = human.find(e.id);
      item["label"] = h == human.end() ? json(nullptr) : json(to_string(h->second.label));
      if (h != human.end() && h->second.box) item["box"] = *h->second.box;
      item["truth"] = e.truth ? json(to_string(*e.truth)) : json(nullptr);
      item["size_nm"] = optional_json(e.size_nm);
      item["prediction"] = prediction ? json(prediction->ids.contains(e.id)) : json(nullptr);
      items.push_back(std::move(item));
    }
    send_json(res, 200,
              json{{"total", entries.size()}, {"offset", offset}, {"limit", limit}, {"items", std::move(items)},
                   {"prediction_source", prediction ? json(prediction->method) : json(nullptr)}});
  }

  void image(const httplib::Request& req, httplib::Response& res) {
    const auto id = static_cast<PatternId>(std::stoul(req.matches[1]));
    RenderSpec spec;
    if (req.has_param("colormap")) spec.colormap = parse_colormap(req.get_param_value("colormap"));
    if (req.has_param("scale")) spec.scale = parse_scale(req.get_param_value("scale"));
    const std::vector<std::uint8_t> png = render_png(store, id, spec);
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }

  void post_label(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    if (!body.is_object()) throw HttpError{400, "bad_request", "label body must be an object"};
    LabelRecord record = body.get<LabelRecord>();
    record.timestamp = utc_timestamp_now();
    store.append_label(record);
    send_json(res, 201, json(record));
  }

  void start_training(const httplib::Request& req, httplib::Response& res) {
    json body = req.body.empty() ? json::object() : parse_body(req);
    if (!body.is_object()) throw HttpError{400, "bad_request", "train body must be an object"};
    const json cfg_json = body.contains("config") ? body["config"] : body;
    const TrainConfig config = cfg_json.get<TrainConfig>();

    std::lock_guard lock(job_mutex);
    if (job.state == JobState::running) {
      throw HttpError{409, "conflict", "training job " + job.job_id + " is still running"};
    }
    if (worker.joinable()) worker.join();
    job = TrainJobStatus{};
    job.state = JobState::running;
    job.job_id = "job-" + std::to_string(++job_counter);
    job.family = config.family_tag();
    job.total = config.iterations;
    worker = std::thread([this, config] { run_training(config); });
    send_json(res, 202, json{{"job_id", job.job_id}, {"family", job.family}});
  }

  void run_training(const TrainConfig& config) {
    try {
      TrainOptions options;
      options.should_stop = [this] { return stop_requested.load(); };
      options.on_progress = [this](const TrainProgress& p) {
        std::lock_guard lock(job_mutex);
        job.iteration = std::max(job.iteration, p.iteration);
        job.loss = p.loss;
        job.validation_f1 = p.validation_f1;
      };
      train_in_store(store, config, options);
      std::lock_guard lock(job_mutex);
      job.state = JobState::finished;
    } catch (const std::exception& e) {
      std::lock_guard lock(job_mutex);
      job.state = JobState::failed;
      job.error = e.what();
    }
  }

  void curves(const httplib::Request& req, httplib::Response& res) {
    std::string family = req.has_param("family") ? req.get_param_value("family") : snapshot().family;
    if (family.empty()) throw NotFoundError("no training job has run; pass ?family=");
    check_artifact_name(family);
    const auto dir = store.family_dir(family);
    const auto read_or_empty = [&](const char* name) -> std::string {
      const auto path = dir / name;
      return std::filesystem::exists(path) ? read_text_file(path) : std::string();
    };
    send_json(res, 200, json{{"family", family}, {"loss", read_or_empty("loss.csv")}, {"f1", read_or_empty("f1.csv")}});
  }

  void post_classify(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    if (!body.is_object() || !body.contains("checkpoint") || !body["checkpoint"].is_string()) {
      throw HttpError{400, "bad_request", "classify body needs a 'checkpoint' string"};
    }
    std::optional<double> threshold;
    if (body.contains("threshold") && !body["threshold"].is_null()) threshold = body["threshold"].get<double>();
    const std::string checkpoint = body["checkpoint"].get<std::string>();
    const std::string name = body.contains("name") ? body["name"].get<std::string>()
                                                   : selection_name_from("classify-" + checkpoint);
    const SelectionSet s = classify_in_store(store, checkpoint, threshold, name);
    {
      std::lock_guard lock(prediction_mutex);
      latest_prediction = s;
    }
    send_json(res, 200, json{{"selection", name}, {"method", s.method}, {"count", s.size()}});
  }

  void metrics(const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("selection") || !req.has_param("reference")) {
      throw HttpError{400, "bad_request", "metrics needs 'selection' and 'reference' query parameters"};
    }
    const SelectionSet selection = store.load_selection(req.get_param_value("selection"));
    const SelectionSet reference = store.load_selection(req.get_param_value("reference"));
    const Evaluation e = evaluate_in_store(store, selection, reference);
    const Resolution resolution =
        req.has_param("resolution") && req.get_param_value("resolution") == "human" ? Resolution::human
                                                                                    : Resolution::machine;
    json j = json::parse(metric_report_json(e.report, resolution, e.iou, e.intersection));
    j["selected"] = e.selected;
    j["reference"] = e.reference;
    send_json(res, 200, j);
  }
};

Service::Service(std::filesystem::path store_root, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(store_root), std::move(config))) {}

Service::~Service() = default;

int Service::bind() {
  if (impl_->port >= 0) return impl_->port;
  if (impl_->config.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
    impl_->port = impl_->config.port;
  }
  if (impl_->port < 0) {
    throw IoError("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
  return impl_->port;
}

void Service::listen() {
  bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  impl_->stop_requested = true;
  impl_->server.stop();
}

TrainJobStatus Service::status() const { return impl_->snapshot(); }

void Service::wait_for_job() {
  std::thread worker;
  {
    std::lock_guard lock(impl_->job_mutex);
    worker.swap(impl_->worker);
  }
  if (worker.joinable()) worker.join();
}

}  // namespace spi
