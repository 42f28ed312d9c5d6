#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tabncd/clustering.hpp"
#include "tabncd/dataset.hpp"
#include "tabncd/json_io.hpp"
#include "tabncd/metrics.hpp"
#include "tabncd/ncd.hpp"
#include "tabncd/progress.hpp"
#include "tabncd/rules.hpp"
#include "tabncd/tsne.hpp"

namespace tabncd {

// Plain clustering runs have no latent space of their own; the standardized
// features stand in for it so latent t-SNE and rules work uniformly.
inline NcdResult wrap_clustering(const DataView& view, const ClusterAssignment& a, std::size_t k) {
  NcdResult r;
  r.unknown_labels = a.labels;
  r.latent_known = view.x_known;
  r.latent_unknown = view.x_unknown;
  r.history = a.inertia_history;
  r.k = k;
  return r;
}

inline NcdResult run_model(const DataView& view, const ModelConfig& cfg, ProgressSink& sink) {
  switch (cfg.kind) {
    case ModelKind::Baseline: return run_baseline(view, cfg.baseline, sink);
    case ModelKind::TabularNcd: return run_tabular_ncd(view, cfg.tabular, sink);
    case ModelKind::Kmeans: {
      ProgressReporter progress(sink);
      progress.update(0.0);
      auto a = kmeans_fit(view.x_unknown, cfg.kmeans);
      progress.update(1.0);
      return wrap_clustering(view, a, cfg.kmeans.k);
    }
    case ModelKind::Spectral: {
      ProgressReporter progress(sink);
      progress.update(0.0);
      auto a = spectral_fit(view.x_unknown, cfg.spectral);
      progress.update(1.0);
      return wrap_clustering(view, a, cfg.spectral.k);
    }
  }
  fail(ErrorCode::BadConfig, "unsupported model kind");
}

struct UnknownMetrics {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
};

// Scores the cluster labels of unknown rows against their true class values.
inline UnknownMetrics evaluate_unknown(const DataView& view, const NcdResult& result) {
  if (result.unknown_labels.size() != view.unknown_truth.size())
    fail(ErrorCode::StaleResult, "result does not match the view");
  std::map<std::string, int> code;
  for (const auto& v : view.unknown_truth) code.emplace(v, 0);
  int next = 0;
  for (auto& [_, c] : code) c = next++;
  std::vector<int> truth;
  truth.reserve(view.unknown_truth.size());
  for (const auto& v : view.unknown_truth) truth.push_back(code.at(v));
  return {clustering_accuracy(result.unknown_labels, truth), nmi(result.unknown_labels, truth),
          ari(result.unknown_labels, truth)};
}

inline Json to_json(const UnknownMetrics& m) { return {{"acc", m.acc}, {"nmi", m.nmi}, {"ari", m.ari}}; }

inline double rule_fidelity(const RuleTree& tree, const RuleTargets& targets) {
  if (targets.labels.empty()) return 1.0;
  std::size_t agree = 0;
  for (Eigen::Index i = 0; i < targets.x.rows(); ++i) {
    agree += predict(tree, targets.x.row(i)) == targets.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(agree) / static_cast<double>(targets.labels.size());
}

// Multi-class: one tree document. One-vs-rest: one document per label.
inline Json rules_document(const RuleTargets& targets, const RuleTreeConfig& cfg) {
  if (cfg.mode == RuleMode::MultiClass) {
    const RuleTree tree = fit_cart(targets.x, targets.labels, targets.feature_names, cfg);
    Json doc = tree_document(tree);
    doc["mode"] = "multiclass";
    doc["fidelity"] = rule_fidelity(tree, targets);
    return doc;
  }
  Json docs = Json::object();
  std::vector<std::string> labels;
  for (const auto& [label, tree] : fit_one_vs_rest(targets.x, targets.labels, targets.feature_names, cfg)) {
    labels.push_back(label);
    docs[label] = tree_document(tree);
  }
  return {{"mode", "one_vs_rest"}, {"labels", labels}, {"documents", docs}};
}

struct TsneOptions {
  std::optional<std::string> latent_model;  // unset: raw features
  RowFilter row_filter = RowFilter::AllIncluded;
  TsneParams params;
};

// Reads source / model_id / row_filter / perplexity / n_iter from a request
// body; the seed is supplied separately.
inline TsneOptions parse_tsne_options(const Json& j) {
  TsneOptions o;
  std::string source = "raw";
  detail::read(j, "source", source);
  if (source == "latent") {
    o.latent_model = detail::required<std::string>(j, "model_id");
  } else if (source != "raw") {
    fail(ErrorCode::BadConfig, "source must be raw or latent");
  }
  std::string filter = "all";
  detail::read(j, "row_filter", filter);
  o.row_filter = parse_row_filter(filter);
  detail::read(j, "perplexity", o.params.perplexity);
  detail::read(j, "n_iter", o.params.n_iter);
  if (o.params.n_iter < 1) fail(ErrorCode::BadConfig, "n_iter must be >= 1");
  return o;
}

inline std::uint64_t read_seed(const Json& j) {
  std::uint64_t seed = 0;
  detail::read(j, "seed", seed);
  return seed;
}

}  // namespace tabncd
