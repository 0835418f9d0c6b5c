#include <gtest/gtest.h>

#include "helpers.hpp"
#include "jojo/image.hpp"
#include "jojo/service.hpp"
#include "jojo/stylizer.hpp"

#include <httplib.h>

#include <future>

using namespace jojo;
using nlohmann::json;

namespace {

int status_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ApiError& e) {
    return e.status();
  }
  return 0;
}

TrainConfig iterations(int n) {
  TrainConfig c;
  c.iterations = n;
  return c;
}

MapperCheckpoint tiny_mapper(const GeneratorParams& base, int trace) {
  MapperCheckpoint m;
  m.params = base.clone();
  m.params.tensors["torgb.0.bias"] = m.params.tensors["torgb.0.bias"] + 0.1;
  m.base_hash = base.hash();
  m.config = iterations(trace);
  for (int i = 0; i < trace; ++i) m.loss_trace.push_back(1.0 / (i + 1));
  return m;
}

}  // namespace

TEST(Base64, KnownVectors) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, coded] : cases) {
    EXPECT_EQ(base64_encode(plain), coded);
    EXPECT_EQ(base64_decode(coded), plain);
  }
  EXPECT_EQ(base64_decode("data:image/png;base64,Zm9v\nYmFy"), "foobar");
  const std::string binary("\x00\xff\x10\x80", 4);
  EXPECT_EQ(base64_decode(base64_encode(binary)), binary);
  EXPECT_THROW(base64_decode("Zm9"), InvalidInput);
  EXPECT_THROW(base64_decode("Zm9*"), InvalidInput);
}

TEST(ServiceConfig, EnvironmentOverrides) {
  ::setenv("JOJO_PORT", "9123", 1);
  ::setenv("JOJO_MAX_QUEUE", "3", 1);
  auto c = ServiceConfig::from_env();
  EXPECT_EQ(c.port, 9123);
  EXPECT_EQ(c.max_queue, 3);
  EXPECT_EQ(c.host, "127.0.0.1");
  ::setenv("JOJO_PORT", "nope", 1);
  EXPECT_THROW(ServiceConfig::from_env(), InvalidInput);
  ::unsetenv("JOJO_PORT");
  ::unsetenv("JOJO_MAX_QUEUE");
}

TEST(JobManager, RunsJobsToCompletionWithProgress) {
  JobManager jobs(1, 4, [](TrainingJob& job, const std::function<void(int, double)>& progress) {
    for (int i = 1; i <= job.config.iterations; ++i) progress(i, 1.0 / i);
    return "mapper-" + job.id;
  });
  const auto id = jobs.submit(iterations(7), {"r1"});
  EXPECT_EQ(id, "job1");
  ASSERT_TRUE(jobs.wait(id, std::chrono::seconds(10)));
  const auto job = jobs.get(id);
  EXPECT_EQ(job.state, JobState::Done);
  EXPECT_EQ(job.iteration, 7);
  EXPECT_EQ(job.loss_trace.size(), 7u);
  EXPECT_EQ(job.mapper_id, "mapper-job1");
  const auto j = job.to_json(5);
  EXPECT_EQ(j["state"], "done");
  EXPECT_EQ(j["loss_offset"], 5);
  EXPECT_EQ(j["loss_trace"].size(), 2u);
  EXPECT_EQ(job.to_json(100)["loss_trace"].size(), 0u);
  EXPECT_TRUE(j["error"].is_null());
}

TEST(JobManager, QueueLimitAndUnknownIds) {
  std::promise<void> gate;
  auto released = gate.get_future().share();
  JobManager jobs(1, 2, [released](TrainingJob&, const std::function<void(int, double)>&) {
    released.wait();
    return std::string("m");
  });
  const auto a = jobs.submit(iterations(1), {});
  const auto b = jobs.submit(iterations(1), {});
  EXPECT_EQ(status_of([&] { jobs.submit(iterations(1), {}); }), 409);
  EXPECT_EQ(status_of([&] { jobs.get("job99"); }), 404);
  EXPECT_EQ(jobs.get(b).state, JobState::Queued);
  gate.set_value();
  ASSERT_TRUE(jobs.wait(a, std::chrono::seconds(10)));
  ASSERT_TRUE(jobs.wait(b, std::chrono::seconds(10)));
  EXPECT_EQ(jobs.get(b).state, JobState::Done);
  EXPECT_NO_THROW(jobs.submit(iterations(1), {}));
  EXPECT_EQ(jobs.list().size(), 3u);
}

TEST(JobManager, FifoOrderAndFailures) {
  std::mutex m;
  std::vector<std::string> order;
  JobManager jobs(1, 8, [&](TrainingJob& job, const std::function<void(int, double)>&) {
    {
      std::lock_guard lock(m);
      order.push_back(job.id);
    }
    if (job.references.empty()) throw TrainingError("no references");
    return std::string("ok");
  });
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(jobs.submit(iterations(1), i == 2 ? std::vector<std::string>{} : std::vector<std::string>{"r"}));
  for (const auto& id : ids) ASSERT_TRUE(jobs.wait(id, std::chrono::seconds(10)));
  EXPECT_EQ(order, ids);
  EXPECT_EQ(jobs.get(ids[2]).state, JobState::Failed);
  EXPECT_EQ(jobs.get(ids[2]).error, "no references");
  EXPECT_EQ(jobs.get(ids[3]).state, JobState::Done);
}

TEST(JobManager, ShutdownCancelsRunningJob) {
  std::promise<void> started;
  auto jobs = std::make_unique<JobManager>(1, 2, [&](TrainingJob&, const std::function<void(int, double)>& progress) {
    started.set_value();
    for (int i = 1;; ++i) {
      progress(i, 0.0);
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return std::string();
  });
  jobs->submit(iterations(1), {});
  started.get_future().wait();
  jobs->shutdown();
  EXPECT_EQ(jobs->get("job1").state, JobState::Failed);
  EXPECT_EQ(status_of([&] { jobs->submit(iterations(1), {}); }), 503);
  EXPECT_THROW(JobManager(2, 1, {}), InvalidInput);
}

TEST(MapperStore, ContentAddressedAndPersistent) {
  const auto m = testkit::tiny_models(torch::kFloat32);
  const auto dir = testkit::temp_dir("mapper_store");
  std::string id;
  {
    MapperStore store(dir);
    id = store.put(tiny_mapper(m.gen, 3));
    EXPECT_EQ(id.size(), 16u);
    EXPECT_EQ(store.put(tiny_mapper(m.gen, 3)), id);
    EXPECT_NE(store.put(tiny_mapper(m.gen, 4)), id);
    EXPECT_EQ(id, sha256_hex(tiny_mapper(m.gen, 3).to_archive().to_bytes()).substr(0, 16));
    EXPECT_EQ(store.list().size(), 2u);
    EXPECT_EQ(store.describe(id)["iterations"], 3);
    EXPECT_EQ(status_of([&] { store.get("0123456789abcdef"); }), 404);
    EXPECT_EQ(status_of([&] { store.describe("../etc"); }), 404);
    EXPECT_THROW(store.put_bytes("not an archive"), InvalidInput);
  }
  std::filesystem::remove(dir / "index.json");
  MapperStore reopened(dir);
  EXPECT_EQ(reopened.list().size(), 2u);
  EXPECT_TRUE(bit_equal(reopened.get(id)->params.tensors, tiny_mapper(m.gen, 3).params.tensors));
}

TEST(ReferenceStore, KeysByNormalizedPixels) {
  const auto dir = testkit::temp_dir("ref_store");
  ReferenceStore store(dir);
  const auto img = testkit::random_images(1, 16, 1)[0];
  const auto id = store.put(encode_png(img));
  EXPECT_EQ(store.put(encode_png(img)), id);
  EXPECT_TRUE(store.contains(id));
  EXPECT_FALSE(store.contains("nothere"));
  EXPECT_FALSE(store.contains("../x"));
  EXPECT_EQ(store.get(id).sizes(), (std::vector<std::int64_t>{3, 16, 16}));
  EXPECT_EQ(status_of([&] { store.get("nothere"); }), 404);
  EXPECT_THROW(store.put("garbage"), InvalidInput);
}

class ServiceHttp : public ::testing::Test {
 protected:
  void SetUp() override {
    models = testkit::tiny_models(torch::kFloat32);
    ServiceConfig cfg;
    cfg.data_dir = testkit::temp_dir("service");
    cfg.port = 0;
    service = std::make_unique<Service>(cfg, BaseModel{models.gen, models.critic, std::nullopt}, models.enc);
    port = service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(120, 0);
  }
  void TearDown() override { service->stop(); }

  std::string upload(std::uint64_t seed) {
    const auto res = client->Post("/v1/references", encode_png(testkit::random_images(1, 16, seed)[0]), "image/png");
    EXPECT_EQ(res->status, 201);
    return json::parse(res->body)["id"];
  }

  testkit::TinyModels models;
  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;
  int port = 0;
};

TEST_F(ServiceHttp, HealthAndModel) {
  EXPECT_EQ(client->Get("/v1/health")->status, 200);
  const auto res = client->Get("/v1/model");
  ASSERT_EQ(res->status, 200);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["num_layers"], 6);
  EXPECT_EQ(j["resolution"], 16);
  EXPECT_EQ(j["base_hash"], models.gen.hash());
  EXPECT_EQ(j["mask_presets"].size(), 4u);
  EXPECT_EQ(j["identity_weight"]["max"], kMaxIdentityWeight);
}

TEST_F(ServiceHttp, ReferenceUploadForms) {
  const auto img = testkit::random_images(1, 16, 4)[0];
  const auto png = encode_png(img);
  const auto raw = client->Post("/v1/references", png, "image/png");
  ASSERT_EQ(raw->status, 201);
  const std::string id = json::parse(raw->body)["id"];
  const auto b64 = client->Post("/v1/references", json{{"image", base64_encode(png)}}.dump(), "application/json");
  EXPECT_EQ(json::parse(b64->body)["id"], id);
  httplib::MultipartFormDataItems items = {{"image", png, "ref.png", "image/png"}};
  const auto multi = client->Post("/v1/references", items);
  EXPECT_EQ(json::parse(multi->body)["id"], id);
  const auto back = client->Get("/v1/references/" + id);
  ASSERT_EQ(back->status, 200);
  EXPECT_EQ(back->body, png);
  EXPECT_EQ(client->Get("/v1/references/ffff")->status, 404);
  EXPECT_EQ(client->Post("/v1/references", "junk", "image/png")->status, 422);
  EXPECT_EQ(client->Post("/v1/references", "{", "application/json")->status, 422);
}

TEST_F(ServiceHttp, TrainPollStylize) {
  const auto ref = upload(1);
  const json body = {{"references", {ref}}, {"config", {{"iterations", 3}, {"batch", 2}, {"mask", "all_ones"}}}};
  const auto sub = client->Post("/v1/mappers", body.dump(), "application/json");
  ASSERT_EQ(sub->status, 202) << sub->body;
  const std::string job = json::parse(sub->body)["job"];
  EXPECT_EQ(sub->get_header_value("Location"), "/v1/jobs/" + job);
  ASSERT_TRUE(service->jobs().wait(job, std::chrono::seconds(120)));

  const auto status = json::parse(client->Get("/v1/jobs/" + job)->body);
  ASSERT_EQ(status["state"], "done") << status.dump();
  EXPECT_EQ(status["iteration"], 3);
  EXPECT_EQ(status["loss_trace"].size(), 3u);
  EXPECT_EQ(status["config"]["mask"]["layers"], json(std::vector<double>(6, 1.0)));
  EXPECT_EQ(json::parse(client->Get("/v1/jobs/" + job + "?since=2")->body)["loss_trace"].size(), 1u);
  EXPECT_EQ(json::parse(client->Get("/v1/jobs")->body).size(), 1u);
  const std::string mapper = status["mapper"];
  const auto desc = json::parse(client->Get("/v1/mappers/" + mapper)->body);
  EXPECT_EQ(desc["base_hash"], models.gen.hash());
  EXPECT_EQ(json::parse(client->Get("/v1/mappers")->body).size(), 1u);

  const auto input = encode_png(testkit::random_images(1, 16, 2)[0]);
  const auto recon = client->Post("/v1/reconstruct", input, "image/png");
  const auto at0 = client->Post("/v1/mappers/" + mapper + "/stylize?alpha=0", input, "image/png");
  ASSERT_EQ(at0->status, 200) << at0->body;
  EXPECT_EQ(at0->body, recon->body);
  const auto at1 = client->Post("/v1/mappers/" + mapper + "/stylize", input, "image/png");
  const auto expect = stylize(decode_png(input), models.gen, *service->mappers().get(mapper), models.enc, 1.0);
  EXPECT_EQ(at1->body, encode_png(expect[0]));
  const auto by_ref = client->Post("/v1/mappers/" + mapper + "/stylize",
                                   json{{"reference", ref}, {"alpha", 1.0}}.dump(), "application/json");
  EXPECT_EQ(by_ref->status, 200);

  EXPECT_EQ(client->Post("/v1/mappers/" + mapper + "/stylize?alpha=2", input, "image/png")->status, 422);
  EXPECT_EQ(client->Post("/v1/mappers/" + mapper + "/stylize?alpha=x", input, "image/png")->status, 422);
  EXPECT_EQ(client->Post("/v1/mappers/ffff/stylize", input, "image/png")->status, 404);
  EXPECT_EQ(client->Post("/v1/mappers/" + mapper + "/stylize", "{}", "application/json")->status, 422);
}

TEST_F(ServiceHttp, SubmissionErrors) {
  const auto ref = upload(1);
  auto post = [&](const json& body) { return client->Post("/v1/mappers", body.dump(), "application/json")->status; };
  EXPECT_EQ(post({{"references", {"ffff"}}}), 404);
  EXPECT_EQ(post({{"references", json::array()}}), 422);
  EXPECT_EQ(post({{"references", {ref}}, {"config", {{"mask", "10"}}}}), 422);
  EXPECT_EQ(post({{"references", {ref}}, {"config", {{"iterations", 0}}}}), 422);
  EXPECT_EQ(post({{"references", {ref}}, {"config", {{"id_weight", 1e5}}}}), 422);
  EXPECT_EQ(post({{"references", {ref}}, {"config", {{"iterations", "many"}}}}), 422);
  EXPECT_EQ(client->Post("/v1/mappers", "{oops", "application/json")->status, 422);
  EXPECT_EQ(client->Get("/v1/jobs/job42")->status, 404);
}

TEST_F(ServiceHttp, ImportAndBaseMismatch) {
  const auto other = testkit::tiny_models(torch::kFloat32, 16, 11);
  const auto foreign = tiny_mapper(other.gen, 2).to_archive().to_bytes();
  const auto imported = client->Post("/v1/mappers/import", foreign, "application/octet-stream");
  ASSERT_EQ(imported->status, 201);
  const std::string id = json::parse(imported->body)["id"];
  const auto input = encode_png(testkit::random_images(1, 16, 2)[0]);
  EXPECT_EQ(client->Post("/v1/mappers/" + id + "/stylize", input, "image/png")->status, 409);
  EXPECT_EQ(client->Post("/v1/mappers/import", "JOJOCKPT garbage", "application/octet-stream")->status, 422);
  const auto own = client->Post("/v1/mappers/import", tiny_mapper(models.gen, 1).to_archive().to_bytes(),
                                "application/octet-stream");
  const std::string own_id = json::parse(own->body)["id"];
  EXPECT_EQ(client->Post("/v1/mappers/" + own_id + "/stylize", input, "image/png")->status, 200);
}
