#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tabncd/error.hpp"
#include "tabncd/progress.hpp"

namespace tabncd {

enum class JobKind { TrainBaseline, TrainTabularNcd, Kmeans, Spectral, Tsne };
enum class JobStatus { Queued, Running, Succeeded, Failed, Cancelled };

inline std::string_view to_string(JobKind k) {
  switch (k) {
    case JobKind::TrainBaseline: return "TrainBaseline";
    case JobKind::TrainTabularNcd: return "TrainTabularNcd";
    case JobKind::Kmeans: return "Kmeans";
    case JobKind::Spectral: return "Spectral";
    case JobKind::Tsne: return "Tsne";
  }
  return "?";
}

inline std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "Queued";
    case JobStatus::Running: return "Running";
    case JobStatus::Succeeded: return "Succeeded";
    case JobStatus::Failed: return "Failed";
    case JobStatus::Cancelled: return "Cancelled";
  }
  return "?";
}

inline bool is_terminal(JobStatus s) {
  return s == JobStatus::Succeeded || s == JobStatus::Failed || s == JobStatus::Cancelled;
}

struct JobSnapshot {
  std::string id;
  JobKind kind = JobKind::Kmeans;
  JobStatus status = JobStatus::Queued;
  double progress = 0.0;
  std::optional<double> eta_seconds;
  std::optional<double> started_at;  // unix seconds
  std::optional<double> finished_at;
  std::optional<std::string> result_id;
  std::optional<std::string> error;
  std::optional<std::string> error_code;
};

// Runs a job body and returns the id of the stored result.
using JobWork = std::function<std::string(ProgressSink&)>;

// FIFO queue drained by a fixed pool of workers. Cancellation of a running
// job is cooperative: the next progress report throws Cancelled.
class JobManager {
 public:
  explicit JobManager(std::size_t workers = 2) {
    for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) threads_.emplace_back([this] { loop(); });
  }

  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  ~JobManager() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
      for (auto& [_, job] : jobs_) job->cancel_requested = true;
    }
    work_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::string submit(JobKind kind, JobWork work) {
    std::string id;
    {
      std::lock_guard lock(mutex_);
      id = "job-" + std::to_string(++counter_);
      auto job = std::make_shared<Job>();
      job->snap.id = id;
      job->snap.kind = kind;
      job->work = std::move(work);
      jobs_[id] = job;
      queue_.push_back(job);
    }
    work_cv_.notify_one();
    return id;
  }

  JobSnapshot get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return find_locked(id)->snap;
  }

  // Queued jobs are cancelled immediately; running ones at their next
  // progress checkpoint. Terminal jobs are left unchanged.
  JobSnapshot cancel(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto job = find_locked(id);
    if (job->snap.status == JobStatus::Queued) {
      job->snap.status = JobStatus::Cancelled;
      job->snap.finished_at = now();
      job->snap.eta_seconds.reset();
      done_cv_.notify_all();
    } else if (job->snap.status == JobStatus::Running) {
      job->cancel_requested = true;
    }
    return job->snap;
  }

  JobSnapshot wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(10)) const {
    std::unique_lock lock(mutex_);
    auto job = find_locked(id);
    done_cv_.wait_for(lock, timeout, [&] { return is_terminal(job->snap.status); });
    return job->snap;
  }

  std::size_t worker_count() const { return threads_.size(); }

  std::size_t peak_running() const {
    std::lock_guard lock(mutex_);
    return peak_running_;
  }

 private:
  struct Job {
    JobSnapshot snap;
    JobWork work;
    bool cancel_requested = false;
  };

  class Sink final : public ProgressSink {
   public:
    Sink(JobManager& m, Job& j) : m_(m), j_(j) {}
    void report(double fraction, std::optional<double> eta) override {
      std::lock_guard lock(m_.mutex_);
      if (j_.cancel_requested) fail(ErrorCode::Cancelled, "job cancelled");
      j_.snap.progress = std::max(j_.snap.progress, std::clamp(fraction, 0.0, 1.0));
      j_.snap.eta_seconds = j_.snap.progress >= kEtaMinProgress ? eta : std::nullopt;
    }

   private:
    JobManager& m_;
    Job& j_;
  };

  static double now() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  }

  std::shared_ptr<Job> find_locked(const std::string& id) const {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorCode::UnknownJob, "no job '" + id + "'");
    return it->second;
  }

  void loop() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mutex_);
        work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = queue_.front();
        queue_.pop_front();
        if (job->snap.status != JobStatus::Queued) continue;
        job->snap.status = JobStatus::Running;
        job->snap.started_at = now();
        peak_running_ = std::max(peak_running_, ++running_);
      }
      Sink sink(*this, *job);
      std::optional<std::string> result;
      std::optional<Error> error;
      std::optional<std::string> internal;
      try {
        result = job->work(sink);
      } catch (const Error& e) {
        error = e;
      } catch (const std::exception& e) {
        internal = e.what();
      }
      std::lock_guard lock(mutex_);
      --running_;
      job->work = nullptr;
      job->snap.finished_at = now();
      job->snap.eta_seconds.reset();
      if (result) {
        job->snap.status = JobStatus::Succeeded;
        job->snap.progress = 1.0;
        job->snap.eta_seconds = 0.0;
        job->snap.result_id = *result;
      } else if (error && error->code() == ErrorCode::Cancelled) {
        job->snap.status = JobStatus::Cancelled;
      } else {
        job->snap.status = JobStatus::Failed;
        job->snap.error = error ? error->message() : *internal;
        job->snap.error_code = error ? std::string(to_string(error->code())) : "Internal";
      }
      done_cv_.notify_all();
    }
  }

  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  mutable std::condition_variable done_cv_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::unordered_map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> threads_;
  std::size_t counter_ = 0;
  std::size_t running_ = 0;
  std::size_t peak_running_ = 0;
  bool stopping_ = false;
};

// Bounded LRU of immutable entries keyed by id.
template <typename T>
class LruStore {
 public:
  explicit LruStore(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void put(const std::string& id, std::shared_ptr<const T> value) {
    std::lock_guard lock(mutex_);
    if (auto it = index_.find(id); it != index_.end()) order_.erase(it->second);
    order_.emplace_front(id, std::move(value));
    index_[id] = order_.begin();
    while (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

  std::shared_ptr<const T> find(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return order_.size();
  }

 private:
  using Item = std::pair<std::string, std::shared_ptr<const T>>;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Item> order_;
  std::unordered_map<std::string, typename std::list<Item>::iterator> index_;
};

}  // namespace tabncd
