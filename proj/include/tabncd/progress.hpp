#pragma once

#include <algorithm>
#include <chrono>
#include <optional>

namespace tabncd {

// Receives training progress. `fraction` is monotone non-decreasing in
// [0, 1]. Implementations may throw to abort the run (cancellation).
class ProgressSink {
 public:
  virtual ~ProgressSink() = default;
  virtual void report(double fraction, std::optional<double> eta_seconds) = 0;
};

class NullProgress final : public ProgressSink {
 public:
  void report(double, std::optional<double>) override {}
};

inline constexpr double kEtaMinProgress = 0.02;

// elapsed * (1 - p) / p once p >= 0.02.
inline std::optional<double> proportional_eta(double elapsed_seconds, double fraction) {
  if (fraction < kEtaMinProgress) return std::nullopt;
  return std::max(0.0, elapsed_seconds * (1.0 - fraction) / fraction);
}

// Clamps, enforces monotonicity and attaches the proportional ETA.
class ProgressReporter {
 public:
  explicit ProgressReporter(ProgressSink& sink)
      : sink_(sink), start_(std::chrono::steady_clock::now()) {}

  void update(double fraction) {
    last_ = std::max(last_, std::clamp(fraction, 0.0, 1.0));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    sink_.report(last_, proportional_eta(elapsed.count(), last_));
  }

  double last() const { return last_; }

 private:
  ProgressSink& sink_;
  std::chrono::steady_clock::time_point start_;
  double last_ = 0.0;
};

}  // namespace tabncd
