#pragma once

#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include "tabncd/dataset.hpp"
#include "tabncd/jobs.hpp"
#include "tabncd/json_io.hpp"
#include "tabncd/pipeline.hpp"
#include "tabncd/tsne.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen internals.
#include <httplib.h>

namespace tabncd {

// One stored outcome with the provenance needed to re-run it.
struct StoredResult {
  std::string id;
  std::string kind;  // model kind, or "tsne"
  std::shared_ptr<const Dataset> dataset;
  SelectionState selection;
  Json config;
  std::uint64_t seed = 0;
  std::shared_ptr<const DataView> view;
  std::shared_ptr<const NcdResult> ncd;
  std::shared_ptr<const TsneEmbedding> embedding;
  PlotPayload plot;
};

inline Json to_json(const JobSnapshot& j) {
  auto opt = [](const auto& v) { return v ? Json(*v) : Json(nullptr); };
  return {{"id", j.id},
          {"kind", std::string(to_string(j.kind))},
          {"status", std::string(to_string(j.status))},
          {"progress", j.progress},
          {"eta_seconds", opt(j.eta_seconds)},
          {"started_at", opt(j.started_at)},
          {"finished_at", opt(j.finished_at)},
          {"result_id", opt(j.result_id)},
          {"error", opt(j.error)},
          {"error_code", opt(j.error_code)}};
}

inline Json to_json(const StoredResult& r) {
  Json j = {{"result_id", r.id},
            {"kind", r.kind},
            {"dataset_id", r.dataset->id},
            {"provenance", {{"selection", to_json(r.selection)}, {"config", r.config}, {"seed", r.seed}}}};
  if (r.ncd) {
    const DataView& v = *r.view;
    std::vector<std::size_t> unknown_rows, known_rows(v.row_origin.begin(), v.row_origin.begin() + v.n_known());
    for (std::size_t i = 0; i < v.n_unknown(); ++i) unknown_rows.push_back(v.origin_of_unknown(i));
    std::vector<std::string> known_predictions;
    for (int p : r.ncd->known_predictions) known_predictions.push_back(v.label_names[static_cast<std::size_t>(p)]);
    j["k"] = r.ncd->k;
    j["unknown_rows"] = unknown_rows;
    j["unknown_labels"] = r.ncd->unknown_labels;
    j["known_rows"] = known_rows;
    j["known_predictions"] = known_predictions;
    j["metrics"] = to_json(evaluate_unknown(v, *r.ncd));
    j["history"] = r.ncd->history;
    j["ssl_history"] = r.ncd->ssl_history;
  }
  if (r.embedding) {
    j["request_key"] = r.embedding->request_key;
    j["plot"] = to_json(r.plot);
    j["kl_history"] = r.embedding->kl_history;
  }
  return j;
}

struct ServiceOptions {
  std::size_t workers = 2;
  std::size_t result_capacity = 64;
  std::size_t tsne_cache_capacity = 16;
  std::optional<std::filesystem::path> persist_dir;  // write-through copy of results
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownDataset:
    case ErrorCode::UnknownJob:
    case ErrorCode::StaleResult: return 404;
    default: return 400;
  }
}

inline Json error_body(std::string_view code, std::string_view message, Json detail = nullptr) {
  return {{"code", code}, {"message", message}, {"detail", std::move(detail)}};
}

// Endpoint logic on JSON values; `mount` binds it to HTTP routes.
class Service {
 public:
  explicit Service(ServiceOptions opts = {})
      : opts_(std::move(opts)), results_(opts_.result_capacity), cache_(opts_.tsne_cache_capacity), jobs_(opts_.workers) {
    if (opts_.persist_dir) std::filesystem::create_directories(*opts_.persist_dir);
  }

  JobManager& jobs() { return jobs_; }
  TsneCache& tsne_cache() { return cache_; }
  DatasetRegistry& datasets() { return datasets_; }

  Json upload_dataset(std::string_view csv, bool has_header) {
    auto ds = datasets_.add(load_csv(csv, has_header));
    return {{"dataset_id", ds->id}, {"schema", to_json(ds->schema)}};
  }

  Json dataset_info(const std::string& id) {
    auto ds = datasets_.get(id);
    return {{"dataset_id", ds->id}, {"schema", to_json(ds->schema)}};
  }

  Json classes(const std::string& id, const std::string& target) {
    auto ds = datasets_.get(id);
    return {{"dataset_id", id}, {"target", target}, {"classes", to_json(list_class_values(*ds, target))}};
  }

  Json view_summary(const Json& body) {
    const SelectionState sel = parse_selection(body);
    auto ds = datasets_.get(sel.dataset_id);
    const DataView v = materialize_view(*ds, sel);
    std::vector<std::string> unknown;
    for (const auto& [value, s] : sel.class_status)
      if (s == ClassStatus::Unknown) unknown.push_back(value);
    return {{"n_known", v.n_known()},   {"n_unknown", v.n_unknown()},      {"C", v.n_classes()},
            {"n_features", v.n_features()}, {"known_classes", v.label_names}, {"unknown_classes", unknown}};
  }

  // Everything is validated here so bad requests fail before enqueue.
  Json submit_training(const std::string& kind_name, const Json& body) {
    const ModelKind kind = parse_model_kind(kind_name);
    detail::check_keys(body, "train request", {"selection", "model", "seed"});
    if (!body.contains("selection")) fail(ErrorCode::BadConfig, "missing field 'selection'");
    if (!body.contains("model")) fail(ErrorCode::BadConfig, "missing field 'model'");
    const SelectionState sel = parse_selection(body["selection"]);
    auto ds = datasets_.get(sel.dataset_id);
    ModelConfig cfg = parse_model_config(body["model"], kind);
    const std::uint64_t seed = read_seed(body);
    cfg.apply_seed(seed);
    auto view = std::make_shared<const DataView>(materialize_view(*ds, sel));
    if (view->n_unknown() < cfg.k())
      fail(ErrorCode::TooFewRows, "k=" + std::to_string(cfg.k()) + " exceeds the " +
                                      std::to_string(view->n_unknown()) + " unknown rows");
    if ((kind == ModelKind::Baseline || kind == ModelKind::TabularNcd) && view->n_known() < 2)
      fail(ErrorCode::TooFewRows, "need at least 2 known rows");

    const Json provenance = to_json(cfg);
    const std::string id = jobs_.submit(job_kind(kind), [=, this](ProgressSink& sink) {
      auto entry = std::make_shared<StoredResult>();
      entry->ncd = std::make_shared<const NcdResult>(run_model(*view, cfg, sink));
      entry->id = next_result_id();
      entry->kind = std::string(to_string(kind));
      entry->dataset = ds;
      entry->selection = sel;
      entry->config = provenance;
      entry->seed = seed;
      entry->view = view;
      store(entry);
      return entry->id;
    });
    return {{"job_id", id}};
  }

  Json job(const std::string& id) { return to_json(jobs_.get(id)); }
  Json cancel_job(const std::string& id) { return to_json(jobs_.cancel(id)); }

  Json result(const std::string& id) { return to_json(*stored(id)); }

  std::shared_ptr<const StoredResult> stored(const std::string& id) {
    auto r = results_.find(id);
    if (!r) fail(ErrorCode::StaleResult, "no result '" + id + "'");
    return r;
  }

  Json tsne(const Json& body) {
    detail::check_keys(body, "tsne request",
                       {"selection", "source", "model_id", "row_filter", "perplexity", "n_iter", "seed", "color_by", "async"});
    TsneOptions opts = parse_tsne_options(body);
    opts.params.seed = read_seed(body);

    TsneRequest req;
    req.latent_model = opts.latent_model;
    req.row_filter = opts.row_filter;
    req.params = opts.params;
    std::shared_ptr<const Dataset> ds;
    SelectionState sel;
    ProjectionInput input;
    if (opts.latent_model) {
      auto model = stored(*opts.latent_model);
      if (!model->ncd) fail(ErrorCode::StaleResult, "result '" + *opts.latent_model + "' has no latent space");
      ds = model->dataset;
      sel = body.contains("selection") ? parse_selection(body["selection"]) : model->selection;
      if (sel.dataset_id != ds->id) fail(ErrorCode::StaleResult, "model was trained on another dataset");
      validate_selection(*ds, sel);
      input = latent_projection_input(*model->view, *model->ncd, opts.row_filter);
      req.features = model->view->feature_names;
    } else {
      if (!body.contains("selection")) fail(ErrorCode::BadConfig, "missing field 'selection'");
      sel = parse_selection(body["selection"]);
      ds = datasets_.get(sel.dataset_id);
      input = raw_projection_input(*ds, sel, opts.row_filter);
      req.features = sel.selected_features;
    }
    req.dataset_id = ds->id;
    check_perplexity(input.rows.size(), req.params.perplexity);

    std::shared_ptr<const StoredResult> coloring;
    if (body.contains("color_by") && !body["color_by"].is_null()) {
      coloring = stored(detail::required<std::string>(body, "color_by"));
      if (!coloring->ncd || coloring->dataset->id != ds->id)
        fail(ErrorCode::StaleResult, "coloring result does not belong to this dataset");
    }
    auto color = [ds, sel, coloring](const TsneEmbedding& emb) {
      std::optional<ColoringResult> c;
      if (coloring) c = ColoringResult{coloring->view.get(), coloring->ncd.get()};
      return color_points(emb, *ds, sel, c);
    };

    bool async = false;
    detail::read(body, "async", async);
    if (async) {
      const Json config = body;
      const std::string id = jobs_.submit(JobKind::Tsne, [=, this](ProgressSink& sink) {
        ProgressReporter progress(sink);
        progress.update(0.0);
        auto [emb, hit] = get_or_compute(cache_, req, input);
        auto entry = std::make_shared<StoredResult>();
        entry->plot = color(*emb);
        progress.update(1.0);
        entry->id = next_result_id();
        entry->kind = "tsne";
        entry->dataset = ds;
        entry->selection = sel;
        entry->config = config;
        entry->seed = req.params.seed;
        entry->embedding = emb;
        store(entry);
        return entry->id;
      });
      return {{"job_id", id}};
    }
    auto [emb, hit] = get_or_compute(cache_, req, input);
    Json out = to_json(color(*emb));
    out["cache_hit"] = hit;
    out["request_key"] = emb->request_key;
    out["kl_divergence"] = emb->kl_history.empty() ? Json(nullptr) : Json(emb->kl_history.back());
    return out;
  }

  Json rules(const Json& body) {
    detail::check_keys(body, "rules request", {"result_id", "max_depth", "min_samples_leaf", "mode"});
    auto r = stored(detail::required<std::string>(body, "result_id"));
    if (!r->ncd) fail(ErrorCode::BadConfig, "result '" + r->id + "' is not a clustering result");
    Json doc = rules_document(build_rule_targets(*r->view, *r->ncd), parse_rule_config(body));
    doc["result_id"] = r->id;
    return doc;
  }

  Json point(const std::string& dataset_id, const std::string& row_text) {
    auto ds = datasets_.get(dataset_id);
    std::size_t row = 0;
    const auto [ptr, ec] = std::from_chars(row_text.data(), row_text.data() + row_text.size(), row);
    if (ec != std::errc{} || ptr != row_text.data() + row_text.size())
      fail(ErrorCode::BadConfig, "row must be a non-negative integer");
    if (row >= ds->rows()) fail(ErrorCode::ShapeError, "row " + row_text + " outside 0.." + std::to_string(ds->rows() - 1));
    Json values = Json::object();
    std::vector<std::string> columns;
    for (std::size_t c = 0; c < ds->schema.columns.size(); ++c) {
      columns.push_back(ds->schema.columns[c].name);
      values[ds->schema.columns[c].name] = ds->text[c][row];
    }
    return {{"dataset_id", dataset_id}, {"row", row}, {"columns", columns}, {"values", values}};
  }

  void mount(httplib::Server& server) {
    server.Get("/health", wrap([](const httplib::Request&) { return Json{{"status", "ok"}}; }));
    server.Post("/datasets", wrap([this](const httplib::Request& req) {
      const bool has_header = !req.has_param("has_header") || req.get_param_value("has_header") != "false";
      return upload_dataset(req.body, has_header);
    }));
    server.Get("/datasets/:id", wrap([this](const httplib::Request& req) { return dataset_info(req.path_params.at("id")); }));
    server.Get("/datasets/:id/classes", wrap([this](const httplib::Request& req) {
      if (!req.has_param("target")) fail(ErrorCode::BadConfig, "query parameter 'target' is required");
      return classes(req.path_params.at("id"), req.get_param_value("target"));
    }));
    server.Post("/views", wrap([this](const httplib::Request& req) { return view_summary(parse_body(req)); }));
    server.Post("/models/:kind/train", wrap([this](const httplib::Request& req) {
      return submit_training(req.path_params.at("kind"), parse_body(req));
    }, 202));
    server.Get("/jobs/:id", wrap([this](const httplib::Request& req) { return job(req.path_params.at("id")); }));
    server.Delete("/jobs/:id", wrap([this](const httplib::Request& req) { return cancel_job(req.path_params.at("id")); }));
    server.Post("/tsne", wrap([this](const httplib::Request& req) { return tsne(parse_body(req)); }));
    server.Post("/rules", wrap([this](const httplib::Request& req) { return rules(parse_body(req)); }));
    server.Get("/points/:dataset/:row", wrap([this](const httplib::Request& req) {
      return point(req.path_params.at("dataset"), req.path_params.at("row"));
    }));
    server.Get("/results/:id", wrap([this](const httplib::Request& req) { return result(req.path_params.at("id")); }));
  }

 private:
  static JobKind job_kind(ModelKind k) {
    switch (k) {
      case ModelKind::Baseline: return JobKind::TrainBaseline;
      case ModelKind::TabularNcd: return JobKind::TrainTabularNcd;
      case ModelKind::Kmeans: return JobKind::Kmeans;
      case ModelKind::Spectral: return JobKind::Spectral;
    }
    return JobKind::Kmeans;
  }

  static Json parse_body(const httplib::Request& req) {
    try {
      return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::BadConfig, std::string("request body is not valid JSON: ") + e.what());
    }
  }

  template <typename Fn>
  static httplib::Server::Handler wrap(Fn fn, int ok_status = 200) {
    return [fn, ok_status](const httplib::Request& req, httplib::Response& res) {
      const Json where = {{"method", req.method}, {"path", req.path}};
      try {
        const Json out = fn(req);
        res.status = ok_status;
        res.set_content(out.dump(), "application/json");
      } catch (const Error& e) {
        res.status = http_status(e.code());
        res.set_content(error_body(to_string(e.code()), e.message(), where).dump(), "application/json");
      } catch (const Json::exception& e) {
        res.status = 400;
        res.set_content(error_body("BadConfig", e.what(), where).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(error_body("Internal", e.what(), where).dump(), "application/json");
      }
    };
  }

  std::string next_result_id() { return "res-" + std::to_string(++result_counter_); }

  void store(const std::shared_ptr<const StoredResult>& r) {
    results_.put(r->id, r);
    if (!opts_.persist_dir) return;
    const auto base = *opts_.persist_dir / r->id;
    std::ofstream(base.string() + ".json") << to_json(*r).dump(2) << '\n';
    if (r->ncd && r->ncd->model) {
      std::ofstream(base.string() + ".mlp") << save_checkpoint(*r->ncd->model);
    }
  }

  ServiceOptions opts_;
  DatasetRegistry datasets_;
  LruStore<StoredResult> results_;
  TsneCache cache_;
  std::atomic<std::size_t> result_counter_{0};
  JobManager jobs_;  // last: workers must stop before the stores go away
};

}  // namespace tabncd
