#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <set>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/ncd.hpp"
#include "tabncd/nn.hpp"
#include "tabncd/random.hpp"

namespace tabncd {

struct TsneParams {
  double perplexity = 30.0;
  std::size_t n_iter = 1000;
  std::uint64_t seed = 0;
};

inline constexpr double kEarlyExaggeration = 12.0;
inline constexpr std::size_t kExaggerationIters = 250;
inline constexpr double kEntropyTolerance = 1e-4;  // bits
inline constexpr std::size_t kBandwidthSearchIters = 64;
inline constexpr double kMaxStepNorm = 5.0;  // per-point update clip

struct Affinities {
  Matrix conditional;  // row i: p_{j|i}
  Matrix joint;        // (P_cond + P_cond^T) / 2n
};

inline void check_perplexity(std::size_t n, double perplexity) {
  if (n < 4) fail(ErrorCode::BadPerplexity, "t-SNE needs at least 4 rows, got " + std::to_string(n));
  if (!(perplexity > 0.0) || !(perplexity < (static_cast<double>(n) - 1.0) / 3.0))
    fail(ErrorCode::BadPerplexity, "perplexity must lie in (0, (n-1)/3) for n=" + std::to_string(n));
}

// Entropy (bits) of the row distribution p_j ∝ exp(-beta * d_j), written
// into `p` (normalized).
inline double row_entropy_bits(const std::vector<double>& d, double beta, std::vector<double>& p) {
  double dmin = std::numeric_limits<double>::infinity();
  for (double v : d) dmin = std::min(dmin, v);
  double sum = 0.0, weighted = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    p[j] = std::exp(-beta * (d[j] - dmin));
    sum += p[j];
    weighted += (d[j] - dmin) * p[j];
  }
  for (double& v : p) v /= sum;
  return (std::log(sum) + beta * weighted / sum) / std::log(2.0);
}

inline Affinities conditional_affinities(const Matrix& x, double perplexity) {
  const auto n = static_cast<std::size_t>(x.rows());
  check_perplexity(n, perplexity);
  const Matrix d2 = pairwise_sq_distances(x);
  const double target = std::log2(perplexity);

  Affinities a;
  a.conditional = Matrix::Zero(x.rows(), x.rows());
  std::vector<double> d(n - 1), p(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, t = 0; j < n; ++j)
      if (j != i) d[t++] = d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < kBandwidthSearchIters; ++it) {
      const double h = row_entropy_bits(d, beta, p);
      if (std::abs(h - target) < kEntropyTolerance) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    row_entropy_bits(d, beta, p);
    for (std::size_t j = 0, t = 0; j < n; ++j)
      if (j != i) a.conditional(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p[t++];
  }
  a.joint = (a.conditional + a.conditional.transpose()) / (2.0 * static_cast<double>(n));
  return a;
}

struct TsneEmbedding {
  Matrix coords;                   // n x 2
  std::vector<std::size_t> rows;   // dataset row of each coordinate row
  std::string request_key;
  std::vector<double> kl_history;  // KL(P || Q) per iteration, unexaggerated P
};

// Exact O(n^2) t-SNE. Gradient descent with momentum and per-coordinate
// gains; early exaggeration for the first 250 iterations. Each point's
// update is clipped to norm 5.
inline TsneEmbedding tsne_fit(const Matrix& x, const TsneParams& params) {
  const auto n = static_cast<std::size_t>(x.rows());
  const Matrix joint = conditional_affinities(x, params.perplexity).joint;
  std::vector<double> p(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      p[i * n + j] = joint(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));

  Rng rng = make_rng(params.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  std::vector<double> y(2 * n);
  for (double& v : y) v = normal(rng);

  const double lr = std::max(50.0, static_cast<double>(n) / 12.0);
  std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), attract(2 * n), repulse(2 * n);
  std::vector<double> ys0(n), ys1(n);

  // KL terms with P below this are dropped; their total contribution is
  // bounded by n^2 * 1e-12 * |log q|.
  constexpr double kKlFloor = 1e-12;
  double p_log_p = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> kl_pairs;
  std::vector<double> kl_weights;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (const double v = p[i * n + j]; v > kKlFloor) {
        p_log_p += 2.0 * v * std::log(v);
        kl_pairs.emplace_back(i, j);
        kl_weights.push_back(2.0 * v);
      }

  TsneEmbedding out;
  out.kl_history.reserve(params.n_iter);
  for (std::size_t it = 0; it < params.n_iter; ++it) {
    const double exaggeration = it < kExaggerationIters ? kEarlyExaggeration : 1.0;
    const double momentum = it < kExaggerationIters ? 0.5 : 0.8;

    // grad_i = 4 [ sum_j e p_ij q_ij (y_i - y_j) - (1/Z) sum_j q_ij^2 (y_i - y_j) ],
    // q_ij = 1 / (1 + |y_i - y_j|^2), Z = sum_{i != j} q_ij. p_ii = 0 and
    // the j = i term has zero offset, so it needs no special case except in Z.
    for (std::size_t i = 0; i < n; ++i) {
      ys0[i] = y[2 * i];
      ys1[i] = y[2 * i + 1];
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double yi0 = ys0[i], yi1 = ys1[i];
      const double* prow = &p[i * n];
      double a0 = 0.0, a1 = 0.0, r0 = 0.0, r1 = 0.0, zi = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d0 = yi0 - ys0[j], d1 = yi1 - ys1[j];
        const double q = 1.0 / (1.0 + d0 * d0 + d1 * d1);
        zi += q;
        const double pq = prow[j] * q;
        a0 += pq * d0;
        a1 += pq * d1;
        const double qq = q * q;
        r0 += qq * d0;
        r1 += qq * d1;
      }
      z += zi - 1.0;
      attract[2 * i] = a0;
      attract[2 * i + 1] = a1;
      repulse[2 * i] = r0;
      repulse[2 * i + 1] = r1;
    }

    // KL = sum P log P - sum P log q + log Z (P sums to one).
    double p_log_q = 0.0;
    for (std::size_t t = 0; t < kl_pairs.size(); ++t) {
      const auto [i, j] = kl_pairs[t];
      const double d0 = y[2 * i] - y[2 * j], d1 = y[2 * i + 1] - y[2 * j + 1];
      p_log_q -= kl_weights[t] * std::log1p(d0 * d0 + d1 * d1);
    }
    out.kl_history.push_back(p_log_p - p_log_q + std::log(z));

    for (std::size_t i = 0; i < n; ++i) {
      double step[2];
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t k = 2 * i + c;
        const double g = 4.0 * (exaggeration * attract[k] - repulse[k] / z);
        if (!std::isfinite(g)) fail(ErrorCode::DivergedError, "t-SNE gradient became non-finite");
        const bool same_sign = (g > 0.0) == (update[k] > 0.0);
        gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
        step[c] = momentum * update[k] - lr * gains[k] * g;
      }
      const double norm = std::hypot(step[0], step[1]);
      const double scale = norm > kMaxStepNorm ? kMaxStepNorm / norm : 1.0;
      for (std::size_t c = 0; c < 2; ++c) {
        update[2 * i + c] = step[c] * scale;
        y[2 * i + c] += update[2 * i + c];
      }
    }
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m0 += y[2 * i];
      m1 += y[2 * i + 1];
    }
    m0 /= static_cast<double>(n);
    m1 /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= m0;
      y[2 * i + 1] -= m1;
    }
  }
  out.coords.resize(x.rows(), 2);
  for (std::size_t i = 0; i < n; ++i) {
    out.coords(static_cast<Eigen::Index>(i), 0) = y[2 * i];
    out.coords(static_cast<Eigen::Index>(i), 1) = y[2 * i + 1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Requests, cache keys and the embedding cache

enum class RowFilter { AllIncluded, UnknownOnly };

struct TsneRequest {
  std::string dataset_id;
  std::optional<std::string> latent_model;  // unset: raw features
  std::vector<std::string> features;
  RowFilter row_filter = RowFilter::AllIncluded;
  TsneParams params;
};

namespace detail {

inline void append_field(std::string& key, std::string_view s) {
  key += std::to_string(s.size());
  key += ':';
  key += s;
  key += ';';
}

// "0-3,7,9-12" style encoding of sorted row indices.
inline std::string encode_rows(const std::vector<std::size_t>& rows) {
  std::string out;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j + 1 < rows.size() && rows[j + 1] == rows[j] + 1) ++j;
    if (!out.empty()) out += ',';
    out += std::to_string(rows[i]);
    if (j > i) out += '-' + std::to_string(rows[j]);
    i = j + 1;
  }
  return out;
}

}  // namespace detail

// Canonical key of everything that determines the coordinates: the data
// source, projected rows and t-SNE parameters. Coloring is not part of it.
inline std::string request_key(const TsneRequest& req, const std::vector<std::size_t>& rows) {
  std::string key = "tsne/v1;";
  detail::append_field(key, req.dataset_id);
  detail::append_field(key, req.latent_model ? "latent" : "raw");
  detail::append_field(key, req.latent_model.value_or(""));
  key += std::to_string(req.features.size()) + ';';
  for (const auto& f : req.features) detail::append_field(key, f);
  detail::append_field(key, req.row_filter == RowFilter::UnknownOnly ? "unknown" : "all");
  detail::append_field(key, detail::encode_rows(rows));
  detail::append_field(key, detail::format_real(req.params.perplexity));
  detail::append_field(key, std::to_string(req.params.n_iter));
  detail::append_field(key, std::to_string(req.params.seed));
  return key;
}

// Bounded LRU map from request key to embedding. Concurrent misses on the
// same key share one computation.
class TsneCache {
 public:
  using Value = std::shared_ptr<const TsneEmbedding>;

  explicit TsneCache(std::size_t capacity = 16) : capacity_(std::max<std::size_t>(1, capacity)) {}

  template <typename Compute>
  std::pair<Value, bool> get_or_compute(const std::string& key, Compute&& compute) {
    std::unique_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.lru);
      auto future = it->second.future;
      lock.unlock();
      return {future.get(), true};
    }
    std::promise<Value> promise;
    Entry entry{promise.get_future().share(), {}, false};
    lru_.push_front(key);
    entry.lru = lru_.begin();
    entries_.emplace(key, std::move(entry));
    evict_locked();
    lock.unlock();

    try {
      Value v = std::make_shared<const TsneEmbedding>(compute());
      promise.set_value(v);
      lock.lock();
      if (auto it = entries_.find(key); it != entries_.end()) it->second.ready = true;
      evict_locked();
      return {v, false};
    } catch (...) {
      promise.set_exception(std::current_exception());
      lock.lock();
      if (auto it = entries_.find(key); it != entries_.end()) {
        lru_.erase(it->second.lru);
        entries_.erase(it);
      }
      throw;
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  std::size_t capacity() const { return capacity_; }

  bool contains(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return entries_.count(key) != 0;
  }

  // Most recently used first.
  std::vector<std::string> keys() const {
    std::lock_guard lock(mutex_);
    return {lru_.begin(), lru_.end()};
  }

 private:
  struct Entry {
    std::shared_future<Value> future;
    std::list<std::string>::iterator lru;
    bool ready = false;
  };

  // Drops least-recently-used finished entries until within capacity.
  void evict_locked() {
    auto it = lru_.end();
    while (entries_.size() > capacity_ && it != lru_.begin()) {
      --it;
      auto e = entries_.find(*it);
      if (e != entries_.end() && e->second.ready) {
        entries_.erase(e);
        it = lru_.erase(it);
      }
    }
  }

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<std::string> lru_;
  std::unordered_map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Projection inputs and plot payloads

struct ProjectionInput {
  Matrix x;
  std::vector<std::size_t> rows;  // dataset order
};

// Selected features of the included (or unknown-only) rows, z-scored over
// those rows.
inline ProjectionInput raw_projection_input(const Dataset& ds, const SelectionState& sel, RowFilter filter) {
  validate_selection(ds, sel);
  if (sel.selected_features.empty()) fail(ErrorCode::InvalidPartition, "no features selected");
  const auto& target = ds.column_text(sel.target_column);
  ProjectionInput in;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const ClassStatus s = sel.class_status.at(target[r]);
    if (s == ClassStatus::Unknown || (s == ClassStatus::Known && filter == RowFilter::AllIncluded))
      in.rows.push_back(r);
  }
  std::vector<std::size_t> columns;
  for (const auto& f : sel.selected_features) columns.push_back(ds.schema.index_of(f));
  in.x = gather_rows(ds, in.rows, columns);
  standardize_in_place(in.x);
  return in;
}

// Latent rows of a trained result, reordered into dataset order.
inline ProjectionInput latent_projection_input(const DataView& view, const NcdResult& result, RowFilter filter) {
  std::vector<std::pair<std::size_t, Eigen::RowVectorXd>> rows;
  if (filter == RowFilter::AllIncluded)
    for (std::size_t i = 0; i < view.n_known(); ++i)
      rows.emplace_back(view.row_origin[i], result.latent_known.row(static_cast<Eigen::Index>(i)));
  for (std::size_t i = 0; i < view.n_unknown(); ++i)
    rows.emplace_back(view.origin_of_unknown(i), result.latent_unknown.row(static_cast<Eigen::Index>(i)));
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  ProjectionInput in;
  in.x.resize(static_cast<Eigen::Index>(rows.size()), result.latent_unknown.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    in.rows.push_back(rows[i].first);
    in.x.row(static_cast<Eigen::Index>(i)) = rows[i].second;
  }
  return in;
}

inline std::pair<TsneCache::Value, bool> get_or_compute(TsneCache& cache, const TsneRequest& req,
                                                        const ProjectionInput& input) {
  const std::string key = request_key(req, input.rows);
  check_perplexity(input.rows.size(), req.params.perplexity);
  return cache.get_or_compute(key, [&] {
    TsneEmbedding e = tsne_fit(input.x, req.params);
    e.rows = input.rows;
    e.request_key = key;
    return e;
  });
}

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  std::size_t row = 0;
};

struct PlotPayload {
  std::vector<PlotPoint> points;
  std::vector<std::string> legend;  // distinct labels, sorted
};

struct ColoringResult {
  const DataView* view = nullptr;
  const NcdResult* result = nullptr;
};

// Labels each point by its class value, or by its cluster when a result is
// supplied and the row is one of the result's unknown rows.
inline PlotPayload color_points(const TsneEmbedding& emb, const Dataset& ds, const SelectionState& sel,
                                std::optional<ColoringResult> coloring = std::nullopt) {
  const auto& target = ds.column_text(sel.target_column);
  std::unordered_map<std::size_t, int> cluster_of;
  if (coloring) {
    const DataView& v = *coloring->view;
    const NcdResult& r = *coloring->result;
    if (r.unknown_labels.size() != v.n_unknown())
      fail(ErrorCode::StaleResult, "result does not match its view");
    for (std::size_t i = 0; i < v.n_unknown(); ++i) cluster_of[v.origin_of_unknown(i)] = r.unknown_labels[i];
  }
  PlotPayload out;
  std::set<std::string> legend;
  for (std::size_t i = 0; i < emb.rows.size(); ++i) {
    const std::size_t row = emb.rows[i];
    if (row >= ds.rows()) fail(ErrorCode::StaleResult, "embedding row outside the dataset");
    PlotPoint pt{emb.coords(static_cast<Eigen::Index>(i), 0), emb.coords(static_cast<Eigen::Index>(i), 1), {}, row};
    auto status = sel.class_status.find(target[row]);
    if (status == sel.class_status.end()) fail(ErrorCode::StaleResult, "row class not in selection");
    if (coloring && status->second == ClassStatus::Unknown) {
      auto it = cluster_of.find(row);
      if (it == cluster_of.end()) fail(ErrorCode::StaleResult, "unknown row missing from result");
      pt.label = cluster_name(it->second);
    } else {
      pt.label = target[row];
    }
    legend.insert(pt.label);
    out.points.push_back(std::move(pt));
  }
  out.legend.assign(legend.begin(), legend.end());
  return out;
}

}  // namespace tabncd
