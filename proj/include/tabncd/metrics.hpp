#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "tabncd/error.hpp"

namespace tabncd {

// Maximum-weight assignment of rows to columns of a (possibly rectangular)
// non-negative weight matrix. Returns, per row, the chosen column or -1.
// Shortest augmenting path Hungarian method, O(n^3) on the padded square.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  std::size_t cols = 0;
  for (const auto& r : weight) cols = std::max(cols, r.size());
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};

  double wmax = 0.0;
  for (const auto& r : weight)
    for (double w : r) wmax = std::max(wmax, w);
  auto cost = [&](std::size_t i, std::size_t j) {
    // 1-based indices inside the solver.
    if (i > rows || j > weight[i - 1].size()) return wmax;
    return wmax - weight[i - 1][j - 1];
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> assignment(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= weight[i - 1].size()) assignment[i - 1] = static_cast<int>(j - 1);
  }
  return assignment;
}

struct LabelMatch {
  std::map<int, int> mapping;  // predicted label -> truth label, -1 when unmatched
  std::size_t matched_count = 0;
};

namespace detail {

struct Contingency {
  std::vector<int> pred_labels;
  std::vector<int> truth_labels;
  std::vector<std::vector<double>> table;  // [pred][truth]
};

inline Contingency contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    fail(ErrorCode::ShapeError, "label vectors differ in length (" + std::to_string(pred.size()) + " vs " +
                                    std::to_string(truth.size()) + ")");
  Contingency c;
  std::map<int, std::size_t> pi, ti;
  for (int p : pred) pi.emplace(p, 0);
  for (int t : truth) ti.emplace(t, 0);
  for (auto& [label, idx] : pi) {
    idx = c.pred_labels.size();
    c.pred_labels.push_back(label);
  }
  for (auto& [label, idx] : ti) {
    idx = c.truth_labels.size();
    c.truth_labels.push_back(label);
  }
  c.table.assign(c.pred_labels.size(), std::vector<double>(c.truth_labels.size(), 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) c.table[pi[pred[i]]][ti[truth[i]]] += 1.0;
  return c;
}

inline double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace detail

inline LabelMatch hungarian_match(const std::vector<int>& pred, const std::vector<int>& truth) {
  const auto c = detail::contingency(pred, truth);
  const auto assignment = max_weight_assignment(c.table);
  LabelMatch m;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int j = assignment[i];
    m.mapping[c.pred_labels[i]] = j < 0 ? -1 : c.truth_labels[static_cast<std::size_t>(j)];
    if (j >= 0) m.matched_count += static_cast<std::size_t>(c.table[i][static_cast<std::size_t>(j)]);
  }
  return m;
}

inline double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty()) fail(ErrorCode::ShapeError, "accuracy of an empty labeling");
  return static_cast<double>(hungarian_match(pred, truth).matched_count) / static_cast<double>(pred.size());
}

// Normalized mutual information with arithmetic-mean normalization.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty()) fail(ErrorCode::ShapeError, "NMI of an empty labeling");
  const auto c = detail::contingency(pred, truth);
  const auto n = static_cast<double>(pred.size());
  std::vector<double> a(c.pred_labels.size(), 0.0), b(c.truth_labels.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      a[i] += c.table[i][j];
      b[j] += c.table[i][j];
    }
  auto entropy = [n](const std::vector<double>& counts) {
    double h = 0.0;
    for (double x : counts)
      if (x > 0) h -= x / n * std::log(x / n);
    return h;
  };
  const double ha = entropy(a), hb = entropy(b);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double nij = c.table[i][j];
      if (nij > 0) mi += nij / n * std::log(n * nij / (a[i] * b[j]));
    }
  return std::clamp(mi / ((ha + hb) / 2.0), 0.0, 1.0);
}

// Adjusted Rand index (pair counting).
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty()) fail(ErrorCode::ShapeError, "ARI of an empty labeling");
  const auto c = detail::contingency(pred, truth);
  double sum_cells = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> b(c.truth_labels.size(), 0.0);
  for (std::size_t i = 0; i < c.table.size(); ++i) {
    double a = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      sum_cells += detail::choose2(c.table[i][j]);
      a += c.table[i][j];
      b[j] += c.table[i][j];
    }
    sum_a += detail::choose2(a);
  }
  for (double x : b) sum_b += detail::choose2(x);
  const double total = detail::choose2(static_cast<double>(pred.size()));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = (sum_a + sum_b) / 2.0;
  if (max_index == expected) return 1.0;
  return (sum_cells - expected) / (max_index - expected);
}

}  // namespace tabncd
