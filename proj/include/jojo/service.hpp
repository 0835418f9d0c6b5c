#pragma once

#include "jojo/models.hpp"
#include "jojo/finetuner.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <thread>

namespace httplib {
class Server;
}

namespace jojo {

struct ServiceConfig {
  std::filesystem::path data_dir = "jojo-data";
  std::filesystem::path base_path;
  std::filesystem::path encoder_path;
  std::filesystem::path static_dir;  // optional UI assets, served at /
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_training = 1;  // concurrent finetune jobs
  int max_queue = 8;     // queued + running jobs before submissions get 409

  /// Defaults overridden by JOJO_DATA_DIR, JOJO_BASE, JOJO_ENCODER,
  /// JOJO_STATIC_DIR, JOJO_HOST, JOJO_PORT, JOJO_MAX_TRAINING, JOJO_MAX_QUEUE.
  static ServiceConfig from_env();
};

/// Status error surfaced as an HTTP code.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Uploaded reference images, keyed by the hash of their decoded pixels.
class ReferenceStore {
 public:
  explicit ReferenceStore(std::filesystem::path dir);
  std::string put(const std::string& png_bytes);
  torch::Tensor get(const std::string& id) const;  // ApiError 404
  bool contains(const std::string& id) const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

/// Content-addressed mapper archives plus a JSON index of their metadata.
class MapperStore {
 public:
  explicit MapperStore(std::filesystem::path dir);
  /// Id is a prefix of the SHA-256 of the archive bytes.
  std::string put(const MapperCheckpoint& mapper);
  std::string put_bytes(const std::string& archive_bytes);
  std::shared_ptr<const MapperCheckpoint> get(const std::string& id) const;  // ApiError 404
  nlohmann::json describe(const std::string& id) const;
  nlohmann::json list() const;

 private:
  void write_index() const;

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  nlohmann::json index_ = nlohmann::json::object();
  mutable std::map<std::string, std::shared_ptr<const MapperCheckpoint>> cache_;
};

enum class JobState { Queued, Running, Failed, Done };
std::string to_string(JobState state);

struct TrainingJob {
  std::string id;
  JobState state = JobState::Queued;
  TrainConfig config;
  std::vector<std::string> references;
  int iteration = 0;  // completed optimizer steps
  std::vector<double> loss_trace;
  std::string mapper_id;
  std::string error;

  /// Loss trace entries from `since` onward, so pollers can fetch deltas.
  nlohmann::json to_json(std::size_t since = 0) const;
};

/// FIFO of finetune jobs drained by `max_training` worker threads.
class JobManager {
 public:
  using Runner = std::function<std::string(TrainingJob& snapshot, const std::function<void(int, double)>& progress)>;

  JobManager(int max_training, int max_queue, Runner runner);
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  /// ApiError 409 once `max_queue` jobs are queued or running.
  std::string submit(const TrainConfig& config, const std::vector<std::string>& references);
  TrainingJob get(const std::string& id) const;  // ApiError 404
  std::vector<TrainingJob> list() const;
  void shutdown();
  /// Blocks until the job leaves the queued/running states or the timeout expires.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) const;

 private:
  void worker();

  Runner runner_;
  int max_queue_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::map<std::string, TrainingJob> jobs_;
  std::deque<std::string> queue_;
  std::vector<std::thread> workers_;
  std::uint64_t next_ = 1;
  bool stopping_ = false;
};

/// HTTP front end over the stores, the job manager and the loaded models.
class Service {
 public:
  Service(const ServiceConfig& config, BaseModel base, EncoderParams encoder);
  ~Service();

  /// Binds and serves on a background thread; returns the bound port
  /// (config port 0 picks a free one).
  int start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  JobManager& jobs() { return *jobs_; }
  MapperStore& mappers() { return mappers_; }
  ReferenceStore& references() { return references_; }

 private:
  void routes();
  std::string train(TrainingJob& job, const std::function<void(int, double)>& progress);

  ServiceConfig config_;
  BaseModel base_;
  EncoderParams encoder_;
  EmbeddingParams embedding_;
  ReferenceStore references_;
  MapperStore mappers_;
  std::unique_ptr<JobManager> jobs_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

int run_service(const ServiceConfig& config);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // InvalidInput on malformed text

}  // namespace jojo
