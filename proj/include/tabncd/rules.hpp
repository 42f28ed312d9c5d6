#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/ncd.hpp"
#include "tabncd/nn.hpp"

namespace tabncd {

enum class RuleMode { MultiClass, OneVsRest };

struct RuleTreeConfig {
  std::optional<std::size_t> max_depth = 4;  // unset: unlimited
  std::size_t min_samples_leaf = 1;
  RuleMode mode = RuleMode::MultiClass;

  void validate() const {
    if (max_depth && *max_depth < 1) fail(ErrorCode::BadConfig, "max_depth must be >= 1");
    if (min_samples_leaf < 1) fail(ErrorCode::BadConfig, "min_samples_leaf must be >= 1");
  }
};

// A leaf when `children` is empty; otherwise rows with
// x[feature] <= threshold go to children[0], the rest to children[1].
struct TreeNode {
  std::size_t feature = 0;
  double threshold = 0.0;
  std::vector<TreeNode> children;
  std::vector<std::size_t> class_counts;  // indexed like RuleTree::labels
  std::size_t majority = 0;

  bool is_leaf() const { return children.empty(); }
  std::size_t size() const { return std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0}); }
};

struct RuleTree {
  std::vector<std::string> labels;  // sorted; ties in majority go to the smaller label
  std::vector<std::string> feature_names;
  TreeNode root;

  const std::string& majority_label(const TreeNode& n) const { return labels[n.majority]; }
};

namespace detail {

inline double gini(const std::vector<std::size_t>& counts, std::size_t n) {
  if (n == 0) return 0.0;
  double s = 0.0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    s += p * p;
  }
  return 1.0 - s;
}

inline std::size_t argmax_count(const std::vector<std::size_t>& counts) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  return best;
}

struct SplitChoice {
  std::size_t feature = 0;
  double threshold = 0.0;
  double impurity = std::numeric_limits<double>::infinity();
};

// Lowest weighted Gini over midpoints of consecutive distinct values; ties
// keep the earlier (feature, threshold).
inline std::optional<SplitChoice> best_split(const Matrix& x, const std::vector<int>& y, std::size_t classes,
                                             const std::vector<std::size_t>& rows, std::size_t min_leaf) {
  std::optional<SplitChoice> best;
  const std::size_t n = rows.size();
  std::vector<std::size_t> order(rows);
  std::vector<std::size_t> total(classes, 0);
  for (auto r : rows) ++total[static_cast<std::size_t>(y[r])];
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::copy(rows.begin(), rows.end(), order.begin());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f);
    });
    std::vector<std::size_t> left(classes, 0), right(total);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto label = static_cast<std::size_t>(y[order[i]]);
      ++left[label];
      --right[label];
      const double a = x(static_cast<Eigen::Index>(order[i]), f);
      const double b = x(static_cast<Eigen::Index>(order[i + 1]), f);
      if (!(a < b)) continue;
      const std::size_t nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double imp = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                         static_cast<double>(n);
      if (!best || imp < best->impurity - 1e-12) best = SplitChoice{static_cast<std::size_t>(f), a + (b - a) / 2.0, imp};
    }
  }
  return best;
}

inline TreeNode grow(const Matrix& x, const std::vector<int>& y, std::size_t classes,
                     const std::vector<std::size_t>& rows, std::size_t depth, const RuleTreeConfig& cfg) {
  TreeNode node;
  node.class_counts.assign(classes, 0);
  for (auto r : rows) ++node.class_counts[static_cast<std::size_t>(y[r])];
  node.majority = argmax_count(node.class_counts);
  const bool pure = node.class_counts[node.majority] == rows.size();
  if (pure || (cfg.max_depth && depth >= *cfg.max_depth) || rows.size() < 2 * cfg.min_samples_leaf) return node;

  const auto split = best_split(x, y, classes, rows, cfg.min_samples_leaf);
  if (!split) return node;
  std::vector<std::size_t> left, right;
  for (auto r : rows)
    (x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(split->feature)) <= split->threshold ? left : right)
        .push_back(r);
  node.feature = split->feature;
  node.threshold = split->threshold;
  node.children.push_back(grow(x, y, classes, left, depth + 1, cfg));
  node.children.push_back(grow(x, y, classes, right, depth + 1, cfg));
  return node;
}

}  // namespace detail

inline RuleTree fit_cart(const Matrix& x, const std::vector<std::string>& labels,
                         const std::vector<std::string>& feature_names, const RuleTreeConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    fail(ErrorCode::ShapeError, "feature rows and labels differ in length");
  if (static_cast<std::size_t>(x.cols()) != feature_names.size())
    fail(ErrorCode::ShapeError, "feature names do not match feature columns");
  if (labels.empty()) fail(ErrorCode::TooFewRows, "cannot fit a tree on zero rows");
  RuleTree tree;
  std::set<std::string> distinct(labels.begin(), labels.end());
  tree.labels.assign(distinct.begin(), distinct.end());
  tree.feature_names = feature_names;
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[i] = static_cast<int>(std::lower_bound(tree.labels.begin(), tree.labels.end(), labels[i]) - tree.labels.begin());
  std::vector<std::size_t> rows(labels.size());
  std::iota(rows.begin(), rows.end(), 0);
  tree.root = detail::grow(x, y, tree.labels.size(), rows, 0, cfg);
  return tree;
}

inline std::string rest_label(const std::string& label) { return "NOT " + label; }

// One binary tree per distinct label (label vs. NOT label), in label order.
inline std::map<std::string, RuleTree> fit_one_vs_rest(const Matrix& x, const std::vector<std::string>& labels,
                                                       const std::vector<std::string>& feature_names,
                                                       const RuleTreeConfig& cfg) {
  std::set<std::string> distinct(labels.begin(), labels.end());
  std::map<std::string, RuleTree> trees;
  for (const auto& target : distinct) {
    std::vector<std::string> binary(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) binary[i] = labels[i] == target ? target : rest_label(target);
    trees.emplace(target, fit_cart(x, binary, feature_names, cfg));
  }
  return trees;
}

inline const std::string& predict(const RuleTree& tree, const Eigen::RowVectorXd& row) {
  const TreeNode* n = &tree.root;
  while (!n->is_leaf())
    n = &n->children[row(static_cast<Eigen::Index>(n->feature)) <= n->threshold ? 0 : 1];
  return tree.majority_label(*n);
}

struct Condition {
  std::string feature;
  std::size_t feature_index = 0;
  bool less_equal = true;  // false: strictly greater
  double threshold = 0.0;

  bool holds(const Eigen::RowVectorXd& row) const {
    const double v = row(static_cast<Eigen::Index>(feature_index));
    return less_equal ? v <= threshold : v > threshold;
  }
};

struct Rule {
  std::vector<Condition> conditions;
  std::string label;
  std::size_t coverage = 0;
  double purity = 0.0;
  std::map<std::string, std::size_t> counts;

  bool matches(const Eigen::RowVectorXd& row) const {
    return std::all_of(conditions.begin(), conditions.end(), [&](const Condition& c) { return c.holds(row); });
  }
};

// Root-to-leaf paths, left before right.
struct RuleSet {
  std::vector<Rule> rules;

  // First matching rule; the rules partition the feature space.
  const Rule* match(const Eigen::RowVectorXd& row) const {
    for (const auto& r : rules)
      if (r.matches(row)) return &r;
    return nullptr;
  }

  std::map<std::string, std::vector<const Rule*>> by_label() const {
    std::map<std::string, std::vector<const Rule*>> out;
    for (const auto& r : rules) out[r.label].push_back(&r);
    return out;
  }
};

inline RuleSet extract_rules(const RuleTree& tree) {
  RuleSet set;
  std::vector<Condition> path;
  auto walk = [&](auto&& self, const TreeNode& n) -> void {
    if (n.is_leaf()) {
      Rule r;
      r.conditions = path;
      r.label = tree.majority_label(n);
      r.coverage = n.size();
      r.purity = r.coverage ? static_cast<double>(n.class_counts[n.majority]) / static_cast<double>(r.coverage) : 0.0;
      for (std::size_t i = 0; i < n.class_counts.size(); ++i)
        if (n.class_counts[i]) r.counts[tree.labels[i]] = n.class_counts[i];
      set.rules.push_back(std::move(r));
      return;
    }
    const std::string& name = tree.feature_names[n.feature];
    path.push_back({name, n.feature, true, n.threshold});
    self(self, n.children[0]);
    path.back().less_equal = false;
    self(self, n.children[1]);
    path.pop_back();
  };
  walk(walk, tree.root);
  return set;
}

inline std::size_t tree_depth(const TreeNode& n) {
  if (n.is_leaf()) return 0;
  return 1 + std::max(tree_depth(n.children[0]), tree_depth(n.children[1]));
}

inline std::size_t leaf_count(const TreeNode& n) {
  if (n.is_leaf()) return 1;
  return leaf_count(n.children[0]) + leaf_count(n.children[1]);
}

// One line per rule: IF f1 ≤ t1 AND f2 > t2 THEN label (n=.., purity=..)
// Thresholds are shown to 6 significant digits; structured output keeps
// them exact.
inline std::string render_text(const RuleSet& set) {
  std::string out;
  char num[32];
  for (const auto& r : set.rules) {
    out += "IF ";
    if (r.conditions.empty()) out += "TRUE";
    for (std::size_t i = 0; i < r.conditions.size(); ++i) {
      const auto& c = r.conditions[i];
      if (i) out += " AND ";
      std::snprintf(num, sizeof(num), "%.6g", c.threshold);
      out += c.feature + (c.less_equal ? " ≤ " : " > ") + num;
    }
    char tail[64];
    std::snprintf(tail, sizeof(tail), " (n=%zu, purity=%.3f)", r.coverage, r.purity);
    out += " THEN " + r.label + tail + "\n";
  }
  return out;
}

struct RuleTargets {
  Matrix x;  // raw (unstandardized) selected features
  std::vector<std::string> labels;
  std::vector<std::string> feature_names;
};

// Known rows keep their class names, unknown rows take cluster_<i>.
inline RuleTargets build_rule_targets(const DataView& view, const NcdResult& result) {
  if (result.unknown_labels.size() != view.n_unknown())
    fail(ErrorCode::StaleResult, "result has " + std::to_string(result.unknown_labels.size()) +
                                     " unknown labels, view has " + std::to_string(view.n_unknown()) + " rows");
  RuleTargets t;
  t.feature_names = view.feature_names;
  t.x.resize(view.raw_known.rows() + view.raw_unknown.rows(), view.raw_known.cols());
  t.x << view.raw_known, view.raw_unknown;
  for (int y : view.y_known) t.labels.push_back(view.label_names[static_cast<std::size_t>(y)]);
  for (int c : result.unknown_labels) t.labels.push_back(cluster_name(c));
  return t;
}

}  // namespace tabncd
