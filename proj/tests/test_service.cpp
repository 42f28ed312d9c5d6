#include <gtest/gtest.h>

#include <atomic>
#include <condition_variable>
#include <thread>

#include "tabncd/service.hpp"
#include "support.hpp"

using namespace tabncd;
using namespace tabncd::test_support;
using namespace std::chrono_literals;

namespace {

struct Reply {
  int status = 0;
  Json body;
};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    service_.mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  static Reply unpack(const httplib::Result& r) {
    if (!r) return {0, nullptr};
    return {r->status, r->body.empty() ? Json(nullptr) : Json::parse(r->body)};
  }

  Reply get(const std::string& path) { return unpack(client_->Get(path)); }
  Reply del(const std::string& path) { return unpack(client_->Delete(path)); }
  Reply post(const std::string& path, const Json& body) { return unpack(client_->Post(path, body.dump(), "application/json")); }
  Reply post_raw(const std::string& path, const std::string& body, const std::string& type = "text/csv") {
    return unpack(client_->Post(path, body, type));
  }

  std::string upload_fixture(std::size_t per_class = 200) {
    const Reply r = post_raw("/datasets", synthetic::four_gaussians_csv(per_class, 10.0, 7));
    EXPECT_EQ(r.status, 200);
    return r.body["dataset_id"];
  }

  static Json selection(const std::string& id) {
    return {{"dataset_id", id},
            {"selected_features", {"f0", "f1", "f2"}},
            {"target_column", "class"},
            {"class_status", {{"A", "known"}, {"B", "known"}, {"C", "unknown"}, {"D", "unknown"}}}};
  }

  // Polls until the job is terminal, returning every snapshot seen.
  std::vector<Json> poll(const std::string& job_id, std::chrono::milliseconds every = 2ms) {
    std::vector<Json> seen;
    const auto deadline = std::chrono::steady_clock::now() + 2min;
    while (std::chrono::steady_clock::now() < deadline) {
      const Reply r = get("/jobs/" + job_id);
      EXPECT_EQ(r.status, 200);
      seen.push_back(r.body);
      const std::string s = r.body["status"];
      if (s == "Succeeded" || s == "Failed" || s == "Cancelled") break;
      std::this_thread::sleep_for(every);
    }
    return seen;
  }

  std::string train(const std::string& kind, const Json& body) {
    const Reply r = post("/models/" + kind + "/train", body);
    EXPECT_EQ(r.status, 202) << r.body.dump();
    return r.body.value("job_id", "");
  }

  std::string train_to_result(const std::string& kind, const Json& body) {
    const auto seen = poll(train(kind, body));
    EXPECT_EQ(seen.back()["status"], "Succeeded") << seen.back().dump();
    return seen.back()["result_id"].is_string() ? seen.back()["result_id"].get<std::string>() : "";
  }

  Service service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

void expect_error(const Reply& r, int status, const std::string& code) {
  EXPECT_EQ(r.status, status) << r.body.dump();
  EXPECT_EQ(r.body.value("code", ""), code) << r.body.dump();
  EXPECT_TRUE(r.body.contains("message"));
  EXPECT_TRUE(r.body.contains("detail"));
}

// Blocks a job body until the test opens it.
class Gate {
 public:
  void open() {
    {
      std::lock_guard lock(m_);
      open_ = true;
    }
    cv_.notify_all();
  }
  void wait() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return open_; });
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  bool open_ = false;
};

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 10s) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(1ms);
  }
  return pred();
}

}  // namespace

TEST_F(ServiceTest, HealthAndDatasetUpload) {
  EXPECT_EQ(get("/health").body["status"], "ok");
  const Reply r = post_raw("/datasets", "a,b\n1,x\n2,y\n3,z\n");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["schema"]["columns"].size(), 2u);
  EXPECT_EQ(r.body["schema"]["row_count"], 3);
  const std::string id = r.body["dataset_id"];
  EXPECT_EQ(get("/datasets/" + id).body["dataset_id"], id);
  const Reply again = post_raw("/datasets", "a,b\n1,x\n2,y\n3,z\n");
  EXPECT_NE(again.body["dataset_id"], id);
}

TEST_F(ServiceTest, UploadErrors) {
  expect_error(post_raw("/datasets", ""), 400, "EmptyInput");
  expect_error(post_raw("/datasets", "a,b\n1\n"), 400, "RaggedInput");
  expect_error(get("/datasets/nope"), 404, "UnknownDataset");
  const Reply headerless = unpack(client_->Post("/datasets?has_header=false", "1,2\n3,4\n", "text/csv"));
  EXPECT_EQ(headerless.body["schema"]["row_count"], 2);
}

TEST_F(ServiceTest, ClassesAndViews) {
  const std::string id = upload_fixture(20);
  const Reply classes = get("/datasets/" + id + "/classes?target=class");
  ASSERT_EQ(classes.status, 200);
  EXPECT_EQ(classes.body["classes"].size(), 4u);
  expect_error(get("/datasets/" + id + "/classes"), 400, "BadConfig");
  expect_error(get("/datasets/" + id + "/classes?target=nope"), 400, "UnknownColumn");

  const Reply view = post("/views", selection(id));
  ASSERT_EQ(view.status, 200);
  const DataView v = materialize_view(gaussian_dataset(20), gaussian_selection());
  EXPECT_EQ(view.body["n_known"], v.n_known());
  EXPECT_EQ(view.body["n_unknown"], v.n_unknown());
  EXPECT_EQ(view.body["C"], 2);

  Json excluded = selection(id);
  for (auto& [k, s] : excluded["class_status"].items()) s = "excluded";
  expect_error(post("/views", excluded), 400, "InvalidPartition");
  Json target_in_features = selection(id);
  target_in_features["selected_features"].push_back("class");
  EXPECT_EQ(post("/views", target_in_features).status, 400);
  Json missing = selection("nope");
  expect_error(post("/views", missing), 404, "UnknownDataset");
  expect_error(post_raw("/views", "{not json", "application/json"), 400, "BadConfig");
}

TEST_F(ServiceTest, TrainingJobProgressAndResult) {
  const std::string id = upload_fixture();
  const std::string job = train("tabular_ncd", {{"selection", selection(id)}, {"model", {{"k", 2}}}, {"seed", 1}});
  const auto seen = poll(job, 1ms);
  double prev = 0.0;
  for (const auto& s : seen) {
    const double p = s["progress"];
    EXPECT_GE(p, prev);
    prev = p;
    if (p < kEtaMinProgress) {
      EXPECT_TRUE(s["eta_seconds"].is_null()) << s.dump();
    } else if (s["status"] == "Running") {
      EXPECT_TRUE(s["eta_seconds"].is_number()) << s.dump();
    }
  }
  const Json last = seen.back();
  ASSERT_EQ(last["status"], "Succeeded");
  EXPECT_EQ(last["progress"], 1.0);
  EXPECT_EQ(last["kind"], "TrainTabularNcd");
  const Reply result = get("/results/" + last["result_id"].get<std::string>());
  ASSERT_EQ(result.status, 200);
  EXPECT_EQ(result.body["unknown_labels"].size(), 400u);
  EXPECT_GE(result.body["metrics"]["acc"].get<double>(), 0.9);
  EXPECT_EQ(result.body["provenance"]["seed"], 1);
  EXPECT_EQ(result.body["provenance"]["selection"]["dataset_id"], id);
}

TEST_F(ServiceTest, TrainingValidatedBeforeEnqueue) {
  const std::string id = upload_fixture(20);
  expect_error(post("/models/bogus/train", {{"selection", selection(id)}, {"model", {{"k", 2}}}}), 400, "BadConfig");
  expect_error(post("/models/kmeans/train", {{"selection", selection(id)}}), 400, "BadConfig");
  expect_error(post("/models/kmeans/train", {{"selection", selection(id)}, {"model", {{"k", 2}, {"kind", "spectral"}}}}),
               400, "BadConfig");
  expect_error(post("/models/baseline/train", {{"selection", selection(id)}, {"model", {{"k", 2}, {"train", {{"epochs", 0}}}}}}),
               400, "BadConfig");
  expect_error(post("/models/kmeans/train", {{"selection", selection(id)}, {"model", {{"k", 500}}}}), 400, "TooFewRows");
  expect_error(post("/models/kmeans/train", {{"selection", selection(id)}, {"model", {{"k", 2}, {"extra", 1}}}}), 400,
               "BadConfig");
  expect_error(get("/jobs/job-999"), 404, "UnknownJob");
  expect_error(del("/jobs/job-999"), 404, "UnknownJob");
}

TEST_F(ServiceTest, IdenticalRunsGiveIdenticalLabels) {
  const std::string id = upload_fixture(50);
  const Json body = {{"selection", selection(id)}, {"model", {{"k", 2}, {"train", {{"epochs", 5}}}}}, {"seed", 11}};
  const std::string a = train_to_result("baseline", body);
  const std::string b = train_to_result("baseline", body);
  ASSERT_NE(a, b);
  EXPECT_EQ(get("/results/" + a).body["unknown_labels"], get("/results/" + b).body["unknown_labels"]);
  EXPECT_EQ(get("/results/" + a).body["history"], get("/results/" + b).body["history"]);
}

TEST_F(ServiceTest, ClusteringModelsRunAsJobs) {
  const std::string id = upload_fixture(20);
  for (const std::string kind : {"kmeans", "spectral"}) {
    const std::string res = train_to_result(kind, {{"selection", selection(id)}, {"model", {{"k", 2}}}});
    const Reply r = get("/results/" + res);
    EXPECT_EQ(r.body["kind"], kind);
    EXPECT_EQ(r.body["metrics"]["acc"], 1.0);
  }
}

TEST_F(ServiceTest, CancelRunningJobWithinOneEpoch) {
  const std::string id = upload_fixture();
  const std::size_t epochs = 400;
  const std::string job = train(
      "tabular_ncd",
      {{"selection", selection(id)}, {"model", {{"k", 2}, {"ssl", {{"epochs", 0}}}, {"joint", {{"epochs", epochs}}}}}});
  ASSERT_TRUE(eventually([&] { return get("/jobs/" + job).body["progress"].get<double>() >= 0.01; }));
  const auto t0 = std::chrono::steady_clock::now();
  const Reply cancel = del("/jobs/" + job);
  ASSERT_EQ(cancel.status, 200);
  const JobSnapshot done = service_.jobs().wait(job, 30s);
  const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(done.status, JobStatus::Cancelled);
  // The worker stops at the first checkpoint after the request: no further
  // epoch is recorded.
  EXPECT_EQ(done.progress, cancel.body["progress"].get<double>());
  const double per_epoch = (*done.finished_at - *done.started_at) / (done.progress * static_cast<double>(epochs));
  EXPECT_LT(waited, 2.0 * per_epoch + 0.05);
  EXPECT_FALSE(done.result_id.has_value());
}

TEST_F(ServiceTest, TsneCacheAndRecolor) {
  const std::string id = upload_fixture(20);
  const Json body = {{"selection", selection(id)}, {"perplexity", 10}, {"n_iter", 250}, {"seed", 3}};
  const Reply first = post("/tsne", body);
  ASSERT_EQ(first.status, 200) << first.body.dump();
  EXPECT_FALSE(first.body["cache_hit"].get<bool>());
  EXPECT_EQ(first.body["points"].size(), 80u);
  const Reply second = post("/tsne", body);
  EXPECT_TRUE(second.body["cache_hit"].get<bool>());
  EXPECT_EQ(first.body["points"], second.body["points"]);

  const std::string res = train_to_result("kmeans", {{"selection", selection(id)}, {"model", {{"k", 2}}}});
  Json recolor = body;
  recolor["color_by"] = res;
  const Reply third = post("/tsne", recolor);
  EXPECT_TRUE(third.body["cache_hit"].get<bool>());
  for (std::size_t i = 0; i < 80; ++i) {
    EXPECT_EQ(third.body["points"][i]["x"], first.body["points"][i]["x"]);
    EXPECT_EQ(third.body["points"][i]["y"], first.body["points"][i]["y"]);
  }
  EXPECT_EQ(third.body["legend"], (Json{"A", "B", "cluster_0", "cluster_1"}));

  Json other = body;
  other["perplexity"] = 12;
  EXPECT_FALSE(post("/tsne", other).body["cache_hit"].get<bool>());
  Json unknown_only = body;
  unknown_only["row_filter"] = "unknown";
  EXPECT_EQ(post("/tsne", unknown_only).body["points"].size(), 40u);
}

TEST_F(ServiceTest, TsneErrors) {
  const std::string id = upload_fixture(20);
  expect_error(post("/tsne", {{"selection", selection(id)}, {"perplexity", 500}}), 400, "BadPerplexity");
  expect_error(post("/tsne", {{"source", "latent"}, {"model_id", "res-404"}}), 404, "StaleResult");
  expect_error(post("/tsne", {{"selection", selection(id)}, {"perplexity", 10}, {"color_by", "res-404"}}), 404, "StaleResult");
}

TEST_F(ServiceTest, LatentTsneAsJob) {
  const std::string id = upload_fixture(20);
  const std::string res =
      train_to_result("baseline", {{"selection", selection(id)}, {"model", {{"k", 2}, {"train", {{"epochs", 3}}}}}});
  const Reply r = post("/tsne", {{"source", "latent"}, {"model_id", res}, {"row_filter", "unknown"}, {"n_iter", 250},
                                 {"perplexity", 5}, {"color_by", res}, {"async", true}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const auto seen = poll(r.body["job_id"]);
  ASSERT_EQ(seen.back()["status"], "Succeeded");
  EXPECT_EQ(seen.back()["kind"], "Tsne");
  const Reply stored = get("/results/" + seen.back()["result_id"].get<std::string>());
  EXPECT_EQ(stored.body["plot"]["points"].size(), 40u);
  EXPECT_EQ(stored.body["kl_history"].size(), 250u);
}

TEST_F(ServiceTest, RulesForResults) {
  const std::string id = upload_fixture(20);
  const std::string res = train_to_result("kmeans", {{"selection", selection(id)}, {"model", {{"k", 2}}}});
  const Reply r = post("/rules", {{"result_id", res}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["labels"], (Json{"A", "B", "cluster_0", "cluster_1"}));
  EXPECT_EQ(r.body["fidelity"], 1.0);
  const Reply ovr = post("/rules", {{"result_id", res}, {"mode", "one_vs_rest"}, {"max_depth", nullptr}});
  EXPECT_EQ(ovr.body["documents"].size(), 4u);
  expect_error(post("/rules", {{"result_id", "res-404"}}), 404, "StaleResult");
  expect_error(post("/rules", {{"result_id", res}, {"max_depth", 0}}), 400, "BadConfig");
}

TEST_F(ServiceTest, FailedJobHasNoRules) {
  const std::string id = upload_fixture(20);
  // A huge learning rate drives the loss to non-finite values.
  const std::string job = train("baseline", {{"selection", selection(id)},
                                             {"model", {{"k", 2}, {"train", {{"learning_rate", 1e300}, {"epochs", 3}}}}}});
  const auto seen = poll(job);
  ASSERT_EQ(seen.back()["status"], "Failed") << seen.back().dump();
  EXPECT_EQ(seen.back()["error_code"], "DivergedError");
  EXPECT_TRUE(seen.back()["result_id"].is_null());
  expect_error(post("/rules", {{"result_id", "res-1"}}), 404, "StaleResult");
}

TEST_F(ServiceTest, PointLookup) {
  const std::string id = upload_fixture(20);
  const Reply r = get("/points/" + id + "/3");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["columns"], (Json{"f0", "f1", "f2", "class"}));
  const Dataset ds = gaussian_dataset(20);
  for (const std::string c : {"f0", "f1", "f2", "class"}) EXPECT_EQ(r.body["values"][c], ds.column_text(c)[3]);
  expect_error(get("/points/" + id + "/x"), 400, "BadConfig");
  expect_error(get("/points/" + id + "/80"), 400, "ShapeError");
  expect_error(get("/points/nope/0"), 404, "UnknownDataset");
}

TEST(Jobs, CancelQueuedNeverRuns) {
  JobManager jobs(1);
  Gate gate;
  std::atomic<bool> ran{false};
  const std::string blocker = jobs.submit(JobKind::Kmeans, [&](ProgressSink&) {
    gate.wait();
    return std::string("r1");
  });
  const std::string queued = jobs.submit(JobKind::Kmeans, [&](ProgressSink&) {
    ran = true;
    return std::string("r2");
  });
  EXPECT_EQ(jobs.get(queued).status, JobStatus::Queued);
  EXPECT_EQ(jobs.cancel(queued).status, JobStatus::Cancelled);
  gate.open();
  EXPECT_EQ(jobs.wait(blocker).status, JobStatus::Succeeded);
  const JobSnapshot s = jobs.wait(queued);
  EXPECT_EQ(s.status, JobStatus::Cancelled);
  EXPECT_FALSE(s.started_at.has_value());
  EXPECT_FALSE(ran);
}

TEST(Jobs, EtaAppearsOncePastThreshold) {
  JobManager jobs(1);
  Gate step1, step2, done;
  std::atomic<int> phase{0};
  const std::string id = jobs.submit(JobKind::TrainBaseline, [&](ProgressSink& sink) {
    sink.report(0.0, 5.0);
    phase = 1;
    step1.wait();
    sink.report(0.01, 5.0);
    phase = 2;
    step2.wait();
    sink.report(0.02, 5.0);
    phase = 3;
    done.wait();
    return std::string("r");
  });
  ASSERT_TRUE(eventually([&] { return phase == 1; }));
  EXPECT_FALSE(jobs.get(id).eta_seconds.has_value());
  step1.open();
  ASSERT_TRUE(eventually([&] { return phase == 2; }));
  EXPECT_FALSE(jobs.get(id).eta_seconds.has_value());
  step2.open();
  ASSERT_TRUE(eventually([&] { return phase == 3; }));
  EXPECT_EQ(jobs.get(id).eta_seconds, 5.0);
  done.open();
  const JobSnapshot s = jobs.wait(id);
  EXPECT_EQ(s.status, JobStatus::Succeeded);
  EXPECT_EQ(s.result_id, "r");
}

TEST(Jobs, ProgressNeverDecreases) {
  JobManager jobs(1);
  Gate gate;
  std::atomic<bool> reported{false};
  const std::string id = jobs.submit(JobKind::Kmeans, [&](ProgressSink& sink) {
    sink.report(0.5, std::nullopt);
    sink.report(0.2, std::nullopt);
    reported = true;
    gate.wait();
    return std::string("r");
  });
  ASSERT_TRUE(eventually([&] { return reported.load(); }));
  EXPECT_EQ(jobs.get(id).progress, 0.5);
  gate.open();
  jobs.wait(id);
}

TEST(Jobs, WorkerBoundAndFifo) {
  JobManager jobs(2);
  std::atomic<int> running{0}, peak{0};
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i)
    ids.push_back(jobs.submit(JobKind::Kmeans, [&](ProgressSink&) {
      const int now = ++running;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(10ms);
      --running;
      return std::string("r");
    }));
  std::vector<double> starts;
  for (const auto& id : ids) starts.push_back(*jobs.wait(id).started_at);
  EXPECT_TRUE(std::is_sorted(starts.begin(), starts.end()));
  EXPECT_LE(peak.load(), 2);
  EXPECT_EQ(jobs.peak_running(), 2u);
  EXPECT_EQ(jobs.worker_count(), 2u);
}

TEST(Jobs, FailureRecordsCode) {
  JobManager jobs(1);
  const std::string a = jobs.submit(JobKind::Kmeans, [](ProgressSink&) -> std::string { fail(ErrorCode::TooFewRows, "x"); });
  const std::string b = jobs.submit(JobKind::Kmeans, [](ProgressSink&) -> std::string { throw std::runtime_error("y"); });
  EXPECT_EQ(jobs.wait(a).error_code, "TooFewRows");
  EXPECT_EQ(jobs.wait(b).error_code, "Internal");
  EXPECT_EQ(jobs.wait(b).error, "y");
  EXPECT_EQ(code_of([&] { jobs.get("job-99"); }), ErrorCode::UnknownJob);
}

TEST(Results, LruStoreEvicts) {
  LruStore<int> store(2);
  store.put("a", std::make_shared<const int>(1));
  store.put("b", std::make_shared<const int>(2));
  store.find("a");
  store.put("c", std::make_shared<const int>(3));
  EXPECT_EQ(store.size(), 2u);
  EXPECT_NE(store.find("a"), nullptr);
  EXPECT_EQ(store.find("b"), nullptr);
}

TEST(Results, PersistenceWritesProvenance) {
  const auto dir = std::filesystem::temp_directory_path() / ("tabncd-persist-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  {
    ServiceOptions opts;
    opts.persist_dir = dir;
    Service svc(opts);
    const std::string id = svc.upload_dataset(synthetic::four_gaussians_csv(20, 10.0, 7), true)["dataset_id"];
    Json sel = {{"dataset_id", id},
                {"selected_features", {"f0", "f1", "f2"}},
                {"target_column", "class"},
                {"class_status", {{"A", "known"}, {"B", "known"}, {"C", "unknown"}, {"D", "unknown"}}}};
    const std::string job = svc.submit_training("baseline", {{"selection", sel}, {"model", {{"k", 2}, {"train", {{"epochs", 2}}}}}})["job_id"];
    const JobSnapshot s = svc.jobs().wait(job);
    ASSERT_EQ(s.status, JobStatus::Succeeded);
    const auto json_path = dir / (*s.result_id + ".json");
    ASSERT_TRUE(std::filesystem::exists(json_path));
    ASSERT_TRUE(std::filesystem::exists(dir / (*s.result_id + ".mlp")));
    std::ifstream in(json_path);
    const Json saved = Json::parse(in);
    EXPECT_EQ(saved["provenance"]["config"]["kind"], "baseline");
    EXPECT_EQ(saved["unknown_labels"], svc.result(*s.result_id)["unknown_labels"]);
  }
  std::filesystem::remove_all(dir);
}
