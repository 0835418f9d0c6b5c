#include "jojo/service.hpp"

#include "jojo/image.hpp"
#include "jojo/log.hpp"
#include "jojo/stylizer.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <cmath>
#include <cstdlib>

namespace jojo {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- helpers

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (const auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string_view::npos)
    text.remove_prefix(comma + 1);
  std::string clean;
  clean.reserve(text.size());
  for (const char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.size() % 4 != 0) throw InvalidInput("base64: length is not a multiple of 4");
  std::string out(3 * clean.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw InvalidInput("base64: malformed input");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw InvalidInput(std::string(name) + " is not an integer: " + v);
  }
}

std::string short_hash(std::string_view bytes) { return sha256_hex(bytes).substr(0, 16); }

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
}

}  // namespace

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  c.data_dir = env_or("JOJO_DATA_DIR", c.data_dir.string());
  c.base_path = env_or("JOJO_BASE", c.base_path.string());
  c.encoder_path = env_or("JOJO_ENCODER", c.encoder_path.string());
  c.static_dir = env_or("JOJO_STATIC_DIR", c.static_dir.string());
  c.host = env_or("JOJO_HOST", c.host);
  c.port = env_int("JOJO_PORT", c.port);
  c.max_training = env_int("JOJO_MAX_TRAINING", c.max_training);
  c.max_queue = env_int("JOJO_MAX_QUEUE", c.max_queue);
  return c;
}

// ---------------------------------------------------------------- stores

ReferenceStore::ReferenceStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

std::string ReferenceStore::put(const std::string& png_bytes) {
  const auto image = decode_png(png_bytes);
  const auto normalized = encode_png(image);
  const auto id = short_hash(normalized);
  std::lock_guard lock(mutex_);
  const auto path = dir_ / (id + ".png");
  if (!fs::exists(path)) write_file(path, normalized);
  return id;
}

bool ReferenceStore::contains(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return valid_id(id) && fs::exists(dir_ / (id + ".png"));
}

torch::Tensor ReferenceStore::get(const std::string& id) const {
  if (!contains(id)) throw ApiError(404, "unknown reference '" + id + "'");
  return decode_png(read_file(dir_ / (id + ".png")));
}

MapperStore::MapperStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  const auto index_path = dir_ / "index.json";
  if (fs::exists(index_path)) index_ = json::parse(read_file(index_path));
  bool changed = false;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".ckpt") continue;
    const auto id = entry.path().stem().string();
    if (index_.contains(id)) continue;
    try {
      const auto bytes = read_file(entry.path());
      const auto m = MapperCheckpoint::from_archive(Archive::from_bytes(bytes));
      index_[id] = {{"id", id},
                    {"base_hash", m.base_hash},
                    {"config", m.config.to_json()},
                    {"reference_hashes", m.reference_hashes},
                    {"iterations", m.loss_trace.size()},
                    {"final_loss", m.loss_trace.empty() ? json(nullptr) : json(m.loss_trace.back())},
                    {"bytes", bytes.size()}};
      changed = true;
    } catch (const std::exception& e) {
      log_warn("mapper store: skipping ", entry.path().string(), ": ", e.what());
    }
  }
  if (changed) write_index();
}

void MapperStore::write_index() const { write_file(dir_ / "index.json", index_.dump(2)); }

std::string MapperStore::put(const MapperCheckpoint& mapper) { return put_bytes(mapper.to_archive().to_bytes()); }

std::string MapperStore::put_bytes(const std::string& archive_bytes) {
  const auto mapper = std::make_shared<const MapperCheckpoint>(
      MapperCheckpoint::from_archive(Archive::from_bytes(archive_bytes)));
  const auto id = short_hash(archive_bytes);
  std::lock_guard lock(mutex_);
  if (index_.contains(id)) return id;
  write_file(dir_ / (id + ".ckpt"), archive_bytes);
  index_[id] = {{"id", id},
                {"base_hash", mapper->base_hash},
                {"config", mapper->config.to_json()},
                {"reference_hashes", mapper->reference_hashes},
                {"iterations", mapper->loss_trace.size()},
                {"final_loss", mapper->loss_trace.empty() ? json(nullptr) : json(mapper->loss_trace.back())},
                {"bytes", archive_bytes.size()}};
  cache_[id] = mapper;
  write_index();
  return id;
}

std::shared_ptr<const MapperCheckpoint> MapperStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  if (!valid_id(id) || !index_.contains(id)) throw ApiError(404, "unknown mapper '" + id + "'");
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  auto m = std::make_shared<const MapperCheckpoint>(MapperCheckpoint::load(dir_ / (id + ".ckpt")));
  cache_[id] = m;
  return m;
}

json MapperStore::describe(const std::string& id) const {
  std::lock_guard lock(mutex_);
  if (!valid_id(id) || !index_.contains(id)) throw ApiError(404, "unknown mapper '" + id + "'");
  return index_.at(id);
}

json MapperStore::list() const {
  std::lock_guard lock(mutex_);
  json out = json::array();
  for (const auto& [_, v] : index_.items()) out.push_back(v);
  return out;
}

// ---------------------------------------------------------------- jobs

std::string to_string(JobState state) {
  switch (state) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Failed: return "failed";
    case JobState::Done: return "done";
  }
  return "unknown";
}

json TrainingJob::to_json(std::size_t since) const {
  since = std::min(since, loss_trace.size());
  json j = {{"id", id},
            {"state", to_string(state)},
            {"config", config.to_json()},
            {"references", references},
            {"iteration", iteration},
            {"iterations", config.iterations},
            {"loss_offset", since},
            {"loss_trace", std::vector<double>(loss_trace.begin() + static_cast<std::ptrdiff_t>(since), loss_trace.end())}};
  j["mapper"] = mapper_id.empty() ? json(nullptr) : json(mapper_id);
  j["error"] = error.empty() ? json(nullptr) : json(error);
  return j;
}

namespace {
struct Cancelled : std::runtime_error {
  Cancelled() : std::runtime_error("service stopped") {}
};
}  // namespace

JobManager::JobManager(int max_training, int max_queue, Runner runner)
    : runner_(std::move(runner)), max_queue_(max_queue) {
  require(max_training >= 1, "max training concurrency must be >= 1");
  require(max_queue >= max_training, "max queue must be >= max training concurrency");
  for (int i = 0; i < max_training; ++i) workers_.emplace_back([this] { worker(); });
}

JobManager::~JobManager() { shutdown(); }

void JobManager::shutdown() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_)
    if (t.joinable()) t.join();
}

std::string JobManager::submit(const TrainConfig& config, const std::vector<std::string>& references) {
  std::lock_guard lock(mutex_);
  if (stopping_) throw ApiError(503, "service is shutting down");
  const auto active = std::count_if(jobs_.begin(), jobs_.end(), [](const auto& kv) {
    return kv.second.state == JobState::Queued || kv.second.state == JobState::Running;
  });
  if (active >= max_queue_)
    throw ApiError(409, "training queue is full (" + std::to_string(active) + " jobs pending)");
  TrainingJob job;
  job.id = "job" + std::to_string(next_++);
  job.config = config;
  job.references = references;
  jobs_[job.id] = job;
  queue_.push_back(job.id);
  cv_.notify_all();
  return job.id;
}

TrainingJob JobManager::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw ApiError(404, "unknown job '" + id + "'");
  return it->second;
}

std::vector<TrainingJob> JobManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<TrainingJob> out;
  for (const auto& [_, j] : jobs_) out.push_back(j);
  return out;
}

bool JobManager::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] {
    const auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.state == JobState::Done || it->second.state == JobState::Failed;
  });
}

void JobManager::worker() {
  for (;;) {
    TrainingJob snapshot;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      auto& job = jobs_.at(queue_.front());
      queue_.pop_front();
      job.state = JobState::Running;
      snapshot = job;
    }
    const auto id = snapshot.id;
    auto progress = [&](int iteration, double loss) {
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      job.iteration = std::max(job.iteration, iteration);
      job.loss_trace.push_back(loss);
      if (stopping_) throw Cancelled();
    };
    std::string mapper_id, error;
    try {
      mapper_id = runner_(snapshot, progress);
    } catch (const std::exception& e) {
      error = e.what();
      if (error.empty()) error = "training failed";
    }
    {
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      job.state = error.empty() ? JobState::Done : JobState::Failed;
      job.mapper_id = mapper_id;
      job.error = error;
      if (!error.empty()) log_warn("job ", id, " failed: ", error);
    }
    cv_.notify_all();
  }
}

// ---------------------------------------------------------------- service

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ApiError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const InvalidInput& e) {
      send_json(res, 422, {{"error", e.what()}});
    } catch (const json::exception& e) {
      send_json(res, 422, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed JSON body: ") + e.what());
  }
}

bool is_png_body(const httplib::Request& req) {
  const auto type = req.get_header_value("Content-Type");
  return type.rfind("image/png", 0) == 0 || type.rfind("application/octet-stream", 0) == 0;
}

double parse_alpha(const json& j, const httplib::Request& req) {
  double alpha = 1.0;
  if (req.has_param("alpha")) {
    try {
      alpha = std::stod(req.get_param_value("alpha"));
    } catch (const std::exception&) {
      throw InvalidInput("alpha is not a number");
    }
  } else if (j.contains("alpha")) {
    if (!j.at("alpha").is_number()) throw InvalidInput("alpha must be a number");
    alpha = j.at("alpha").get<double>();
  }
  if (!std::isfinite(alpha) || alpha < 0 || alpha > 1) throw InvalidInput("alpha must lie in [0, 1]");
  return alpha;
}

}  // namespace

Service::Service(const ServiceConfig& config, BaseModel base, EncoderParams encoder)
    : config_(config),
      base_(std::move(base)),
      encoder_(std::move(encoder)),
      embedding_(base_.identity_embedding()),
      references_(config.data_dir / "references"),
      mappers_(config.data_dir / "mappers"),
      server_(std::make_unique<httplib::Server>()) {
  require(encoder_.config.resolution == base_.generator.config.resolution &&
              encoder_.config.w_dim == base_.generator.config.w_dim,
          "service: encoder does not match the base generator");
  jobs_ = std::make_unique<JobManager>(config.max_training, config.max_queue,
                                       [this](TrainingJob& job, const std::function<void(int, double)>& progress) {
                                         return train(job, progress);
                                       });
  routes();
}

Service::~Service() { stop(); }

std::string Service::train(TrainingJob& job, const std::function<void(int, double)>& progress) {
  std::vector<torch::Tensor> refs;
  for (const auto& id : job.references) refs.push_back(references_.get(id));
  FinetuneHooks hooks;
  hooks.on_step = [&](const FinetuneStep& s) { progress(s.iteration + 1, s.loss); };
  const auto mapper = finetune(base_.generator, base_.critic, encoder_, refs, job.config, &embedding_, hooks);
  return mappers_.put(mapper);
}

void Service::routes() {
  auto& s = *server_;
  const auto& gen = base_.generator;
  const int L = gen.config.num_layers();
  const auto base_hash = gen.hash();

  // Input image for stylize/reconstruct: raw PNG body, multipart field
  // "image", or JSON with base64 "image" or a stored "reference" id.
  auto input_image = [this](const httplib::Request& req, const json& body) {
    if (is_png_body(req)) return decode_png(req.body);
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) throw InvalidInput("multipart body needs an 'image' part");
      return decode_png(req.get_file_value("image").content);
    }
    if (body.contains("image")) return decode_png(base64_decode(body.at("image").get<std::string>()));
    if (body.contains("reference")) return references_.get(body.at("reference").get<std::string>());
    throw InvalidInput("request needs an image (PNG body, multipart 'image', base64 'image' or 'reference' id)");
  };

  s.Get("/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  }));

  s.Get("/v1/model", guarded([this, L, base_hash](const httplib::Request&, httplib::Response& res) {
    const auto& c = base_.generator.config;
    send_json(res, 200,
              {{"resolution", c.resolution},
               {"num_layers", L},
               {"base_hash", base_hash},
               {"mask_presets", mask_preset_names()},
               {"default_config", TrainConfig{}.to_json()},
               {"identity_weight", {{"recommended", kDefaultIdentityWeight}, {"max", kMaxIdentityWeight}}},
               {"max_training", config_.max_training},
               {"max_queue", config_.max_queue}});
  }));

  s.Post("/v1/references", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::string png;
    if (is_png_body(req)) {
      png = req.body;
    } else if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) throw InvalidInput("multipart body needs an 'image' part");
      png = req.get_file_value("image").content;
    } else {
      const auto body = parse_body(req);
      if (!body.contains("image")) throw InvalidInput("body needs a base64 'image'");
      png = base64_decode(body.at("image").get<std::string>());
    }
    const auto id = references_.put(png);
    const auto image = references_.get(id);
    send_json(res, 201, {{"id", id}, {"width", image.size(-1)}, {"height", image.size(-2)}});
  }));

  s.Get(R"(/v1/references/([A-Za-z0-9]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(encode_png(references_.get(req.matches[1])), "image/png");
  }));

  s.Post("/v1/mappers", guarded([this, L](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    if (!body.contains("references") || !body.at("references").is_array() || body.at("references").empty())
      throw InvalidInput("body needs a non-empty 'references' array");
    const auto refs = body.at("references").get<std::vector<std::string>>();
    auto cfg_json = body.value("config", json::object());
    std::optional<LayerMask> mask;
    std::optional<BlendSpec> blend;
    if (cfg_json.contains("mask") && cfg_json.at("mask").is_string()) {
      mask = parse_mask(cfg_json.at("mask").get<std::string>(), L);
      cfg_json.erase("mask");
    }
    if (cfg_json.contains("blend") && cfg_json.at("blend").is_string()) {
      blend = BlendSpec{parse_mask(cfg_json.at("blend").get<std::string>(), L), BlendSource::Mean};
      cfg_json.erase("blend");
    }
    auto cfg = TrainConfig::from_json(cfg_json);
    if (mask) cfg.mask = mask;
    if (blend) cfg.blend = blend;
    cfg.validate(base_.generator.config, base_.critic.config);
    for (const auto& r : refs)
      if (!references_.contains(r)) throw ApiError(404, "unknown reference '" + r + "'");
    const auto id = jobs_->submit(cfg, refs);
    res.set_header("Location", "/v1/jobs/" + id);
    send_json(res, 202, {{"job", id}});
  }));

  s.Post("/v1/mappers/import", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto id = mappers_.put_bytes(req.body);
    send_json(res, 201, mappers_.describe(id));
  }));

  s.Get("/v1/mappers", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, mappers_.list());
  }));

  s.Get(R"(/v1/mappers/([A-Za-z0-9]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, mappers_.describe(req.matches[1]));
  }));

  s.Post(R"(/v1/mappers/([A-Za-z0-9]+)/stylize)",
         guarded([this, input_image, base_hash](const httplib::Request& req, httplib::Response& res) {
           const auto mapper = mappers_.get(req.matches[1]);
           const auto body = is_png_body(req) || req.is_multipart_form_data() ? json::object() : parse_body(req);
           const double alpha = parse_alpha(body, req);
           if (mapper->base_hash != base_hash) throw ApiError(409, "mapper was trained on a different base model");
           const auto image = input_image(req, body);
           torch::NoGradGuard no_grad;
           const auto out = stylize(image.to(base_.generator.dtype()), base_.generator, *mapper, encoder_, alpha);
           res.set_content(encode_png(out[0]), "image/png");
         }));

  s.Post("/v1/reconstruct", guarded([this, input_image](const httplib::Request& req, httplib::Response& res) {
    const auto body = is_png_body(req) || req.is_multipart_form_data() ? json::object() : parse_body(req);
    const auto image = input_image(req, body);
    torch::NoGradGuard no_grad;
    const auto out = reconstruct(image.to(base_.generator.dtype()), base_.generator, encoder_);
    res.set_content(encode_png(out[0]), "image/png");
  }));

  s.Get("/v1/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& j : jobs_->list()) out.push_back(j.to_json(j.loss_trace.size()));
    send_json(res, 200, out);
  }));

  s.Get(R"(/v1/jobs/([A-Za-z0-9]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::size_t since = 0;
    if (req.has_param("since")) {
      try {
        since = std::stoul(req.get_param_value("since"));
      } catch (const std::exception&) {
        throw InvalidInput("since must be a non-negative integer");
      }
    }
    send_json(res, 200, jobs_->get(req.matches[1]).to_json(since));
  }));

  if (!config_.static_dir.empty()) s.set_mount_point("/", config_.static_dir.string());
}

int Service::start() {
  port_ = config_.port == 0 ? server_->bind_to_any_port(config_.host) : config_.port;
  if (config_.port != 0 && !server_->bind_to_port(config_.host, config_.port))
    throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  if (port_ < 0) throw std::runtime_error("cannot bind " + config_.host);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  log_info("serving on http://", config_.host, ":", port_, "/v1");
  return port_;
}

void Service::run() {
  log_info("serving on http://", config_.host, ":", config_.port, "/v1");
  if (!server_->listen(config_.host, config_.port))
    throw std::runtime_error("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  if (jobs_) jobs_->shutdown();
}

int run_service(const ServiceConfig& config) {
  if (config.base_path.empty() || config.encoder_path.empty())
    throw InvalidInput("serve needs a base and an encoder checkpoint");
  Service service(config, BaseModel::load(config.base_path), load_encoder(config.encoder_path));
  service.run();
  return 0;
}

}  // namespace jojo
