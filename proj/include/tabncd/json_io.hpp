#pragma once

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tabncd/clustering.hpp"
#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/ncd.hpp"
#include "tabncd/nn.hpp"
#include "tabncd/rules.hpp"
#include "tabncd/tsne.hpp"

// JSON schema shared by HTTP bodies and CLI config files.
namespace tabncd {

using Json = nlohmann::json;

namespace detail {

inline void require_object(const Json& j, std::string_view what) {
  if (!j.is_object()) fail(ErrorCode::BadConfig, std::string(what) + " must be an object");
}

// Rejects keys outside `allowed` so typos surface as BadConfig.
inline void check_keys(const Json& j, std::string_view what, std::initializer_list<std::string_view> allowed) {
  require_object(j, what);
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::BadConfig, "unknown key '" + key + "' in " + std::string(what));
  }
}

template <typename T>
void read(const Json& j, std::string_view key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadConfig, "field '" + std::string(key) + "': " + e.what());
  }
}

template <typename T>
T required(const Json& j, std::string_view key) {
  if (!j.contains(key)) fail(ErrorCode::BadConfig, "missing field '" + std::string(key) + "'");
  T out{};
  read(j, key, out);
  return out;
}

}  // namespace detail

inline ClassStatus parse_class_status(const std::string& s) {
  if (s == "known") return ClassStatus::Known;
  if (s == "unknown") return ClassStatus::Unknown;
  if (s == "excluded") return ClassStatus::Excluded;
  fail(ErrorCode::BadConfig, "class status must be known, unknown or excluded, got '" + s + "'");
}

inline SelectionState parse_selection(const Json& j) {
  detail::check_keys(j, "selection", {"dataset_id", "selected_features", "target_column", "class_status"});
  SelectionState sel;
  detail::read(j, "dataset_id", sel.dataset_id);
  sel.selected_features = detail::required<std::vector<std::string>>(j, "selected_features");
  sel.target_column = detail::required<std::string>(j, "target_column");
  const auto statuses = detail::required<std::map<std::string, std::string>>(j, "class_status");
  for (const auto& [v, s] : statuses) sel.class_status[v] = parse_class_status(s);
  return sel;
}

inline Json to_json(const SelectionState& sel) {
  Json classes = Json::object();
  for (const auto& [v, s] : sel.class_status) classes[v] = std::string(to_string(s));
  return {{"dataset_id", sel.dataset_id},
          {"selected_features", sel.selected_features},
          {"target_column", sel.target_column},
          {"class_status", classes}};
}

inline ArchitectureSpec parse_architecture(const Json& j, ArchitectureSpec base) {
  detail::check_keys(j, "architecture", {"hidden"});
  if (!j.contains("hidden")) return base;
  if (!j["hidden"].is_array()) fail(ErrorCode::BadConfig, "architecture.hidden must be an array");
  base.hidden.clear();
  for (const auto& layer : j["hidden"]) {
    detail::check_keys(layer, "hidden layer", {"width", "activation", "dropout"});
    LayerSpec ls;
    ls.width = detail::required<std::size_t>(layer, "width");
    std::string act = "relu";
    detail::read(layer, "activation", act);
    ls.activation = parse_activation(act);
    detail::read(layer, "dropout", ls.dropout_rate);
    base.hidden.push_back(ls);
  }
  base.validate();
  return base;
}

inline Json to_json(const ArchitectureSpec& a) {
  Json hidden = Json::array();
  for (const auto& l : a.hidden)
    hidden.push_back({{"width", l.width}, {"activation", std::string(to_string(l.activation))}, {"dropout", l.dropout_rate}});
  return {{"hidden", hidden}};
}

inline TrainConfig parse_train(const Json& j, TrainConfig base) {
  detail::check_keys(j, "train", {"epochs", "batch_size", "learning_rate", "optimizer"});
  detail::read(j, "epochs", base.epochs);
  detail::read(j, "batch_size", base.batch_size);
  detail::read(j, "learning_rate", base.learning_rate);
  if (j.contains("optimizer")) {
    const Json& o = j["optimizer"];
    detail::check_keys(o, "optimizer", {"type", "momentum", "beta1", "beta2", "epsilon"});
    std::string type = base.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd";
    detail::read(o, "type", type);
    if (type == "adam")
      base.optimizer.kind = OptimizerKind::Adam;
    else if (type == "sgd")
      base.optimizer.kind = OptimizerKind::Sgd;
    else
      fail(ErrorCode::BadConfig, "optimizer type must be adam or sgd");
    detail::read(o, "momentum", base.optimizer.momentum);
    detail::read(o, "beta1", base.optimizer.beta1);
    detail::read(o, "beta2", base.optimizer.beta2);
    detail::read(o, "epsilon", base.optimizer.epsilon);
  }
  base.validate();
  return base;
}

inline Json to_json(const TrainConfig& t) {
  Json opt = {{"type", t.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"}};
  if (t.optimizer.kind == OptimizerKind::Adam) {
    opt["beta1"] = t.optimizer.beta1;
    opt["beta2"] = t.optimizer.beta2;
    opt["epsilon"] = t.optimizer.epsilon;
  } else {
    opt["momentum"] = t.optimizer.momentum;
  }
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate}, {"optimizer", opt}};
}

enum class ModelKind { Baseline, TabularNcd, Kmeans, Spectral };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Baseline: return "baseline";
    case ModelKind::TabularNcd: return "tabular_ncd";
    case ModelKind::Kmeans: return "kmeans";
    case ModelKind::Spectral: return "spectral";
  }
  return "baseline";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "baseline") return ModelKind::Baseline;
  if (s == "tabular_ncd" || s == "tabularncd") return ModelKind::TabularNcd;
  if (s == "kmeans") return ModelKind::Kmeans;
  if (s == "spectral") return ModelKind::Spectral;
  fail(ErrorCode::BadConfig, "unknown model kind '" + s + "' (expected baseline, tabular_ncd, kmeans or spectral)");
}

// Every engine setting for one run; only the block matching `kind` is used.
struct ModelConfig {
  ModelKind kind = ModelKind::Kmeans;
  BaselineNcdConfig baseline;
  TabularNcdConfig tabular;
  KmeansConfig kmeans;
  SpectralConfig spectral;

  void apply_seed(std::uint64_t seed) {
    baseline.train.seed = seed;
    tabular.train.seed = seed;
    kmeans.seed = seed;
    spectral.seed = seed;
  }

  std::size_t k() const {
    switch (kind) {
      case ModelKind::Baseline: return baseline.k;
      case ModelKind::TabularNcd: return tabular.k;
      case ModelKind::Kmeans: return kmeans.k;
      case ModelKind::Spectral: return spectral.k;
    }
    return 0;
  }
};

// `kind_hint` comes from the URL on HTTP; a "kind" field must agree with it.
inline ModelConfig parse_model_config(const Json& j, std::optional<ModelKind> kind_hint = std::nullopt) {
  detail::check_keys(j, "model", {"kind", "k", "architecture", "train", "ssl", "joint", "kmeans", "affinity"});
  ModelConfig m;
  if (j.contains("kind")) {
    m.kind = parse_model_kind(detail::required<std::string>(j, "kind"));
    if (kind_hint && *kind_hint != m.kind) fail(ErrorCode::BadConfig, "model kind in body does not match the URL");
  } else if (kind_hint) {
    m.kind = *kind_hint;
  } else {
    fail(ErrorCode::BadConfig, "missing field 'kind'");
  }
  const auto k = detail::required<std::size_t>(j, "k");
  if (k < 1) fail(ErrorCode::BadConfig, "k must be >= 1");
  m.baseline.k = m.tabular.k = m.kmeans.k = m.spectral.k = k;

  if (j.contains("architecture")) {
    m.baseline.arch = parse_architecture(j["architecture"], m.baseline.arch);
    m.tabular.arch = parse_architecture(j["architecture"], m.tabular.arch);
  }
  if (j.contains("train")) {
    m.baseline.train = parse_train(j["train"], m.baseline.train);
    m.tabular.train = parse_train(j["train"], m.tabular.train);
  }
  if (j.contains("ssl")) {
    const Json& s = j["ssl"];
    detail::check_keys(s, "ssl", {"corruption_rate", "epochs", "recon_weight"});
    detail::read(s, "corruption_rate", m.tabular.ssl.corruption_rate);
    detail::read(s, "epochs", m.tabular.ssl.epochs);
    detail::read(s, "recon_weight", m.tabular.ssl.recon_weight);
  }
  if (j.contains("joint")) {
    const Json& s = j["joint"];
    detail::check_keys(s, "joint", {"epochs", "top_k_fraction", "consistency_weight", "pseudo_weight"});
    detail::read(s, "epochs", m.tabular.joint.epochs);
    detail::read(s, "top_k_fraction", m.tabular.joint.top_k_fraction);
    detail::read(s, "consistency_weight", m.tabular.joint.consistency_weight);
    detail::read(s, "pseudo_weight", m.tabular.joint.pseudo_weight);
  }
  if (j.contains("kmeans")) {
    const Json& s = j["kmeans"];
    detail::check_keys(s, "kmeans", {"n_init", "max_iter", "tol"});
    detail::read(s, "n_init", m.kmeans.n_init);
    detail::read(s, "max_iter", m.kmeans.max_iter);
    detail::read(s, "tol", m.kmeans.tol);
  }
  if (j.contains("affinity")) {
    const Json& s = j["affinity"];
    detail::check_keys(s, "affinity", {"type", "gamma", "n_neighbors", "mutual"});
    const auto type = detail::required<std::string>(s, "type");
    if (type == "rbf") {
      RbfAffinity rbf;
      if (s.contains("gamma") && !s["gamma"].is_null()) rbf.gamma = detail::required<double>(s, "gamma");
      m.spectral.affinity = rbf;
    } else if (type == "knn") {
      KnnAffinity knn;
      detail::read(s, "n_neighbors", knn.n_neighbors);
      detail::read(s, "mutual", knn.mutual);
      m.spectral.affinity = knn;
    } else {
      fail(ErrorCode::BadConfig, "affinity type must be rbf or knn");
    }
  }
  switch (m.kind) {
    case ModelKind::Baseline: m.baseline.arch.validate(); break;
    case ModelKind::TabularNcd: m.tabular.validate(); break;
    case ModelKind::Kmeans: m.kmeans.validate(); break;
    case ModelKind::Spectral: m.spectral.validate(); break;
  }
  return m;
}

inline Json to_json(const ModelConfig& m) {
  Json j = {{"kind", std::string(to_string(m.kind))}, {"k", m.k()}};
  switch (m.kind) {
    case ModelKind::Baseline:
      j["architecture"] = to_json(m.baseline.arch);
      j["train"] = to_json(m.baseline.train);
      break;
    case ModelKind::TabularNcd:
      j["architecture"] = to_json(m.tabular.arch);
      j["train"] = to_json(m.tabular.train);
      j["ssl"] = {{"corruption_rate", m.tabular.ssl.corruption_rate},
                  {"epochs", m.tabular.ssl.epochs},
                  {"recon_weight", m.tabular.ssl.recon_weight}};
      j["joint"] = {{"epochs", m.tabular.joint.epochs},
                    {"top_k_fraction", m.tabular.joint.top_k_fraction},
                    {"consistency_weight", m.tabular.joint.consistency_weight},
                    {"pseudo_weight", m.tabular.joint.pseudo_weight}};
      break;
    case ModelKind::Kmeans:
      j["kmeans"] = {{"n_init", m.kmeans.n_init}, {"max_iter", m.kmeans.max_iter}, {"tol", m.kmeans.tol}};
      break;
    case ModelKind::Spectral:
      if (const auto* knn = std::get_if<KnnAffinity>(&m.spectral.affinity))
        j["affinity"] = {{"type", "knn"}, {"n_neighbors", knn->n_neighbors}, {"mutual", knn->mutual}};
      else if (const auto& rbf = std::get<RbfAffinity>(m.spectral.affinity); rbf.gamma)
        j["affinity"] = {{"type", "rbf"}, {"gamma", *rbf.gamma}};
      else
        j["affinity"] = {{"type", "rbf"}};
      break;
  }
  return j;
}

inline RuleTreeConfig parse_rule_config(const Json& j) {
  RuleTreeConfig cfg;
  if (j.contains("max_depth")) {
    if (j["max_depth"].is_null())
      cfg.max_depth.reset();
    else
      cfg.max_depth = detail::required<std::size_t>(j, "max_depth");
  }
  detail::read(j, "min_samples_leaf", cfg.min_samples_leaf);
  std::string mode = "multiclass";
  detail::read(j, "mode", mode);
  if (mode == "multiclass")
    cfg.mode = RuleMode::MultiClass;
  else if (mode == "one_vs_rest")
    cfg.mode = RuleMode::OneVsRest;
  else
    fail(ErrorCode::BadConfig, "mode must be multiclass or one_vs_rest");
  cfg.validate();
  return cfg;
}

inline RowFilter parse_row_filter(const std::string& s) {
  if (s == "all") return RowFilter::AllIncluded;
  if (s == "unknown") return RowFilter::UnknownOnly;
  fail(ErrorCode::BadConfig, "row_filter must be all or unknown");
}

inline Json to_json(const DatasetSchema& s) {
  Json cols = Json::array();
  for (const auto& c : s.columns) cols.push_back({{"name", c.name}, {"kind", std::string(to_string(c.kind))}});
  return {{"columns", cols}, {"row_count", s.row_count}};
}

inline Json to_json(const std::vector<ClassCount>& counts) {
  Json out = Json::array();
  for (const auto& c : counts) out.push_back({{"value", c.value}, {"count", c.count}});
  return out;
}

// Nested {feature, threshold, left, right, counts, majority}; leaves carry
// only counts and majority.
inline Json to_json(const RuleTree& tree, const TreeNode& node) {
  Json counts = Json::object();
  for (std::size_t i = 0; i < node.class_counts.size(); ++i)
    if (node.class_counts[i]) counts[tree.labels[i]] = node.class_counts[i];
  Json j = {{"counts", counts}, {"majority", tree.majority_label(node)}};
  if (!node.is_leaf()) {
    j["feature"] = tree.feature_names[node.feature];
    j["threshold"] = node.threshold;
    j["left"] = to_json(tree, node.children[0]);
    j["right"] = to_json(tree, node.children[1]);
  }
  return j;
}

inline Json to_json(const RuleTree& tree) { return to_json(tree, tree.root); }

inline Json to_json(const RuleSet& set) {
  Json rules = Json::array();
  for (const auto& r : set.rules) {
    Json conds = Json::array();
    for (const auto& c : r.conditions)
      conds.push_back({{"feature", c.feature}, {"op", c.less_equal ? "<=" : ">"}, {"threshold", c.threshold}});
    rules.push_back({{"conditions", conds}, {"label", r.label}, {"coverage", r.coverage}, {"purity", r.purity},
                     {"counts", r.counts}});
  }
  return rules;
}

// Tree document: structured tree, flat rules, text rendering and size stats.
inline Json tree_document(const RuleTree& tree) {
  const RuleSet set = extract_rules(tree);
  return {{"tree", to_json(tree)},
          {"rules", to_json(set)},
          {"text", render_text(set)},
          {"labels", tree.labels},
          {"depth", tree_depth(tree.root)},
          {"leaves", leaf_count(tree.root)}};
}

inline Json to_json(const PlotPayload& p) {
  Json points = Json::array();
  for (const auto& pt : p.points) points.push_back({{"x", pt.x}, {"y", pt.y}, {"label", pt.label}, {"row", pt.row}});
  return {{"points", points}, {"legend", p.legend}};
}

}  // namespace tabncd
