#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace spi {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

enum class JobState { idle, running, finished, failed };
std::string to_string(JobState state);

struct TrainJobStatus {
  JobState state = JobState::idle;
  std::string job_id;
  std::string family;
  long iteration = 0;
  long total = 0;
  std::optional<double> loss;
  std::optional<double> validation_f1;
  std::string error;  // failed jobs only
};

// HTTP adapter over a store: pattern pages and images, labels, one
// background training job, classification and metrics. See README for the
// endpoint list.
class Service {
 public:
  Service(std::filesystem::path store_root, ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket and returns the port.
  int bind();
  // Serves until stop(); binds first if needed.
  void listen();
  void stop();

  [[nodiscard]] TrainJobStatus status() const;
  // Blocks until the current training job, if any, has ended.
  void wait_for_job();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spi
