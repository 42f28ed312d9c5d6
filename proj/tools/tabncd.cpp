#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tabncd/pipeline.hpp"
#include "tabncd/service.hpp"

namespace fs = std::filesystem;
using namespace tabncd;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::BadConfig, "cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorCode::BadConfig, "cannot write '" + p.string() + "'");
  out << text;
}

Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_file(p));
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::BadConfig, p.string() + ": " + e.what());
  }
}

// A run config: dataset location, selection, model, seed, output and t-SNE
// options. Relative paths resolve against the config file's directory.
struct RunConfig {
  fs::path dataset_path;
  bool has_header = true;
  SelectionState selection;
  std::optional<ModelConfig> model;
  Json model_json;
  std::uint64_t seed = 0;
  std::optional<fs::path> output;
  Json tsne = Json::object();
};

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed_override, bool need_model) {
  const Json j = read_json(path);
  detail::check_keys(j, "config", {"dataset", "selection", "model", "seed", "output", "tsne"});
  RunConfig c;
  const fs::path base = path.parent_path();
  if (!j.contains("dataset")) fail(ErrorCode::BadConfig, "missing field 'dataset'");
  const Json& d = j["dataset"];
  detail::check_keys(d, "dataset", {"path", "has_header"});
  c.dataset_path = base / detail::required<std::string>(d, "path");
  detail::read(d, "has_header", c.has_header);
  if (!j.contains("selection")) fail(ErrorCode::BadConfig, "missing field 'selection'");
  c.selection = parse_selection(j["selection"]);
  c.seed = seed_override.value_or(read_seed(j));
  if (j.contains("model")) {
    c.model = parse_model_config(j["model"]);
    c.model->apply_seed(c.seed);
    c.model_json = to_json(*c.model);
  } else if (need_model) {
    fail(ErrorCode::BadConfig, "missing field 'model'");
  }
  if (j.contains("output")) c.output = base / detail::required<std::string>(j, "output");
  if (j.contains("tsne")) c.tsne = j["tsne"];
  return c;
}

Dataset load_dataset(const fs::path& p, bool has_header) {
  return load_csv(read_file(p), has_header, p.filename().string());
}

std::string targets_csv(const RuleTargets& t) {
  std::string out;
  for (const auto& f : t.feature_names) out += f + ',';
  out += "label\n";
  for (Eigen::Index i = 0; i < t.x.rows(); ++i) {
    for (Eigen::Index c = 0; c < t.x.cols(); ++c) out += detail::format_real(t.x(i, c)) + ',';
    out += t.labels[static_cast<std::size_t>(i)] + '\n';
  }
  return out;
}

RuleTargets read_targets(const fs::path& p) {
  const Dataset ds = load_csv(read_file(p), true);
  const auto& cols = ds.schema.columns;
  if (cols.empty() || cols.back().name != "label") fail(ErrorCode::BadConfig, p.string() + " lacks a label column");
  RuleTargets t;
  std::vector<std::size_t> idx;
  for (std::size_t c = 0; c + 1 < cols.size(); ++c) {
    if (cols[c].kind != ColumnKind::Numeric) fail(ErrorCode::BadConfig, "feature '" + cols[c].name + "' is not numeric");
    t.feature_names.push_back(cols[c].name);
    idx.push_back(c);
  }
  std::vector<std::size_t> rows(ds.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  t.x = gather_rows(ds, rows, idx);
  t.labels = ds.text.back();
  return t;
}

int cmd_dataset_info(const std::string& path, const std::optional<std::string>& target, bool no_header,
                     const std::string& format) {
  const Dataset ds = load_dataset(path, !no_header);
  std::vector<ClassCount> classes;
  if (target) classes = list_class_values(ds, *target);
  if (format == "structured") {
    Json j = {{"path", path}, {"schema", to_json(ds.schema)}};
    if (target) j["classes"] = {{"target", *target}, {"values", to_json(classes)}};
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::cout << "rows: " << ds.rows() << "\ncolumns: " << ds.schema.columns.size() << '\n';
  for (const auto& c : ds.schema.columns) std::cout << "  " << c.name << '\t' << to_string(c.kind) << '\n';
  if (target) {
    std::cout << "classes of " << *target << ": " << classes.size() << '\n';
    for (const auto& c : classes) std::cout << "  " << c.value << '\t' << c.count << '\n';
  }
  return 0;
}

int cmd_run(const fs::path& config, const std::optional<fs::path>& output_flag, std::optional<std::uint64_t> seed) {
  RunConfig c = load_run_config(config, seed, true);
  const fs::path out = output_flag ? *output_flag : c.output.value_or(fs::path());
  if (out.empty()) fail(ErrorCode::BadConfig, "no output directory (set 'output' or pass --output)");
  Dataset ds = load_dataset(c.dataset_path, c.has_header);
  c.selection.dataset_id = ds.id;
  const DataView view = materialize_view(ds, c.selection);
  NullProgress quiet;
  const NcdResult result = run_model(view, *c.model, quiet);
  fs::create_directories(out);

  std::string labels = "row,cluster\n";
  for (std::size_t i = 0; i < view.n_unknown(); ++i)
    labels += std::to_string(view.origin_of_unknown(i)) + ',' + std::to_string(result.unknown_labels[i]) + '\n';
  write_file(out / "labels.csv", labels);

  const UnknownMetrics m = evaluate_unknown(view, result);
  Json metrics = to_json(m);
  metrics["n_unknown"] = view.n_unknown();
  metrics["k"] = result.k;
  write_file(out / "metrics.json", metrics.dump(2) + '\n');
  write_file(out / "history.json", Json{{"history", result.history}, {"ssl_history", result.ssl_history}}.dump(2) + '\n');
  write_file(out / "targets.csv", targets_csv(build_rule_targets(view, result)));
  const Json provenance = {{"dataset", c.dataset_path.string()},
                           {"selection", to_json(c.selection)},
                           {"model", c.model_json},
                           {"seed", c.seed}};
  write_file(out / "provenance.json", provenance.dump(2) + '\n');
  if (result.model) write_file(out / "model.mlp", save_checkpoint(*result.model));
  std::cout << "acc=" << m.acc << " nmi=" << m.nmi << " ari=" << m.ari << "\nwrote " << out.string() << '\n';
  return 0;
}

std::string safe_name(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

int cmd_rules(const fs::path& dir, std::size_t max_depth, std::size_t min_leaf, bool one_vs_rest,
              const std::string& format, const std::optional<fs::path>& output) {
  RuleTreeConfig cfg;
  cfg.max_depth = max_depth == 0 ? std::nullopt : std::optional<std::size_t>(max_depth);
  cfg.min_samples_leaf = min_leaf;
  cfg.mode = one_vs_rest ? RuleMode::OneVsRest : RuleMode::MultiClass;
  cfg.validate();
  const RuleTargets targets = read_targets(dir / "targets.csv");
  const Json doc = rules_document(targets, cfg);
  const bool text = format == "text";
  auto render = [&](const Json& d) { return text ? d["text"].get<std::string>() : d.dump(2) + '\n'; };

  if (!one_vs_rest) {
    if (output)
      write_file(*output, render(doc));
    else
      std::cout << render(doc);
    return 0;
  }
  // One document per label: files in the output directory, or sections on stdout.
  for (const auto& label : doc["labels"]) {
    const std::string name = label.get<std::string>();
    const Json& d = doc["documents"][name];
    if (output)
      write_file(*output / ("rules_" + safe_name(name) + (text ? ".txt" : ".json")), render(d));
    else
      std::cout << "# " << name << '\n' << render(d);
  }
  return 0;
}

int cmd_tsne(const fs::path& config, const std::optional<fs::path>& output, std::optional<std::uint64_t> seed) {
  RunConfig c = load_run_config(config, seed, false);
  Dataset ds = load_dataset(c.dataset_path, c.has_header);
  c.selection.dataset_id = ds.id;
  detail::check_keys(c.tsne, "tsne", {"source", "row_filter", "perplexity", "n_iter"});
  Json opts_json = c.tsne;
  const bool latent = c.tsne.value("source", std::string("raw")) == "latent";
  if (latent) opts_json["model_id"] = "config";
  TsneOptions opts = parse_tsne_options(opts_json);
  opts.params.seed = c.seed;

  TsneRequest req{ds.id, opts.latent_model, c.selection.selected_features, opts.row_filter, opts.params};
  ProjectionInput input;
  std::optional<DataView> view;
  std::optional<NcdResult> result;
  if (c.model) {
    view = materialize_view(ds, c.selection);
    NullProgress quiet;
    result = run_model(*view, *c.model, quiet);
  }
  if (latent) {
    if (!result) fail(ErrorCode::BadConfig, "latent source needs a 'model' block");
    input = latent_projection_input(*view, *result, opts.row_filter);
  } else {
    input = raw_projection_input(ds, c.selection, opts.row_filter);
  }
  check_perplexity(input.rows.size(), opts.params.perplexity);
  TsneEmbedding emb = tsne_fit(input.x, opts.params);
  emb.rows = input.rows;
  emb.request_key = request_key(req, input.rows);
  std::optional<ColoringResult> coloring;
  if (result) coloring = ColoringResult{&*view, &*result};
  Json payload = to_json(color_points(emb, ds, c.selection, coloring));
  payload["request_key"] = emb.request_key;
  payload["n_points"] = emb.rows.size();
  payload["kl_divergence"] = emb.kl_history.empty() ? Json(nullptr) : Json(emb.kl_history.back());
  if (output)
    write_file(*output, payload.dump(2) + '\n');
  else
    std::cout << payload.dump(2) << '\n';
  return 0;
}

int cmd_serve(const std::string& host, int port, std::size_t workers, const std::optional<fs::path>& persist) {
  ServiceOptions opts;
  opts.workers = workers;
  opts.persist_dir = persist;
  Service service(opts);
  httplib::Server server;
  service.mount(server);
  if (!server.bind_to_port(host, port)) fail(ErrorCode::BadConfig, "cannot bind " + host + ":" + std::to_string(port));
  std::cout << "listening on " << host << ':' << port << std::endl;
  server.listen_after_bind();
  return 0;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::DivergedError:
    case ErrorCode::Cancelled: return kExitRuntime;
    default: return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Novel class discovery on tabular data"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Inspect a CSV dataset");
  dataset->require_subcommand(1);
  auto* info = dataset->add_subcommand("info", "Print the schema and class modalities");
  std::string info_path;
  std::optional<std::string> target;
  bool no_header = false;
  std::string format = "text";
  info->add_option("path", info_path, "CSV file")->required();
  info->add_option("--target", target, "Class column whose modalities to list");
  info->add_flag("--no-header", no_header, "First line is data");
  info->add_option("--format", format)->check(CLI::IsMember({"text", "structured"}));

  auto* run = app.add_subcommand("run", "Train a model from a config file");
  fs::path config;
  std::optional<fs::path> output;
  std::optional<std::uint64_t> seed;
  run->add_option("config", config, "JSON config file")->required();
  run->add_option("--output", output, "Output directory (overrides the config)");
  run->add_option("--seed", seed, "Seed (overrides the config)");

  auto* rules = app.add_subcommand("rules", "Fit decision-tree rules to a run's labels");
  fs::path result_dir;
  std::size_t max_depth = 4;
  std::size_t min_leaf = 1;
  bool one_vs_rest = false;
  rules->add_option("result-dir", result_dir, "Directory written by 'run'")->required();
  rules->add_option("--max-depth", max_depth, "Maximum depth, 0 for unlimited")->capture_default_str();
  rules->add_option("--min-samples-leaf", min_leaf)->capture_default_str();
  rules->add_flag("--one-vs-rest", one_vs_rest, "One tree per label");
  rules->add_option("--format", format)->check(CLI::IsMember({"text", "structured"}));
  rules->add_option("--output", output, "Output file (directory with --one-vs-rest)");

  auto* tsne = app.add_subcommand("tsne", "Compute a 2-D t-SNE plot payload");
  tsne->add_option("config", config, "JSON config file")->required();
  tsne->add_option("--output", output, "Payload file (default stdout)");
  tsne->add_option("--seed", seed, "Seed (overrides the config)");

  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 2;
  std::optional<fs::path> persist;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->envname("TABNCD_PORT")->capture_default_str();
  serve->add_option("--workers", workers)->capture_default_str();
  serve->add_option("--persist", persist, "Directory for result copies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*info) return cmd_dataset_info(info_path, target, no_header, format);
    if (*run) return cmd_run(config, output, seed);
    if (*rules) return cmd_rules(result_dir, max_depth, min_leaf, one_vs_rest, format, output);
    if (*tsne) return cmd_tsne(config, output, seed);
    if (*serve) return cmd_serve(host, port, workers, persist);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.message() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
