#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tabncd/error.hpp"

namespace tabncd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ColumnKind { Numeric, Categorical };

inline std::string_view to_string(ColumnKind k) {
  return k == ColumnKind::Numeric ? "Numeric" : "Categorical";
}

struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::Categorical;
};

struct DatasetSchema {
  std::vector<ColumnInfo> columns;
  std::size_t row_count = 0;

  // Returns the column position or throws UnknownColumn.
  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == name) return i;
    fail(ErrorCode::UnknownColumn, "no column named '" + std::string(name) + "'");
  }

  bool has_column(std::string_view name) const {
    return std::any_of(columns.begin(), columns.end(),
                       [&](const ColumnInfo& c) { return c.name == name; });
  }
};

// An immutable loaded table. Every cell keeps its original text so class
// values can be compared as exact strings and point inspection can echo the
// file; Numeric columns are additionally available as reals.
struct Dataset {
  std::string id;
  DatasetSchema schema;
  Matrix numeric_data;                            // row_count x #numeric columns
  std::vector<std::size_t> numeric_slot;          // column -> numeric_data column (or npos)
  std::vector<std::vector<std::string>> text;     // per column, per row

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t rows() const { return schema.row_count; }

  const std::vector<std::string>& column_text(std::string_view name) const {
    return text[schema.index_of(name)];
  }

  double numeric(std::size_t row, std::size_t column) const {
    return numeric_data(static_cast<Eigen::Index>(row),
                        static_cast<Eigen::Index>(numeric_slot[column]));
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// Splits CSV text into records. Double quotes delimit fields; "" inside a
// quoted field is a literal quote. Blank lines are skipped.
inline std::vector<std::vector<std::string>> split_csv(std::string_view bytes) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool line_has_content = false;

  auto end_field = [&] {
    record.push_back(field);
    field.clear();
  };
  auto end_record = [&] {
    if (line_has_content) {
      end_field();
      records.push_back(std::move(record));
    }
    record.clear();
    field.clear();
    line_has_content = false;
  };

  for (std::size_t i = 0; i < bytes.size(); ++i) {
    char c = bytes[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        line_has_content = true;
        break;
      case ',':
        line_has_content = true;
        end_field();
        break;
      case '\n':
        end_record();
        break;
      case '\r':
        break;
      default:
        field.push_back(c);
        if (c != ' ' && c != '\t') line_has_content = true;
        break;
    }
  }
  end_record();
  return records;
}

}  // namespace detail

// Parses a real number; rejects partial parses and non-finite values.
inline bool parse_real(std::string_view s, double& out) {
  s = detail::trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline Dataset load_csv(std::string_view bytes, bool has_header, std::string id = {}) {
  auto records = detail::split_csv(bytes);
  if (records.empty()) fail(ErrorCode::EmptyInput, "input contains no rows");

  const std::size_t width = records.front().size();
  if (width == 0) fail(ErrorCode::EmptyInput, "input contains no columns");
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].size() != width)
      fail(ErrorCode::RaggedInput, "line " + std::to_string(r + 1) + " has " +
                                       std::to_string(records[r].size()) + " fields, expected " +
                                       std::to_string(width));
  }

  Dataset ds;
  ds.id = std::move(id);
  std::size_t first_data = 0;
  if (has_header) {
    first_data = 1;
    std::set<std::string> seen;
    for (auto& name : records.front()) {
      std::string n(detail::trim(name));
      if (n.empty()) fail(ErrorCode::EmptyInput, "empty column name in header");
      if (!seen.insert(n).second) fail(ErrorCode::DuplicateColumn, "duplicate column '" + n + "'");
      ds.schema.columns.push_back({n, ColumnKind::Categorical});
    }
  } else {
    for (std::size_t c = 0; c < width; ++c)
      ds.schema.columns.push_back({"c" + std::to_string(c), ColumnKind::Categorical});
  }

  const std::size_t n = records.size() - first_data;
  if (n == 0) fail(ErrorCode::EmptyInput, "input has a header but no data rows");
  ds.schema.row_count = n;

  ds.text.assign(width, std::vector<std::string>(n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      std::string cell(detail::trim(records[r + first_data][c]));
      if (cell.empty())
        fail(ErrorCode::MissingValue, "empty cell at row " + std::to_string(r) + ", column '" +
                                          ds.schema.columns[c].name + "'");
      ds.text[c][r] = std::move(cell);
    }
  }

  std::vector<std::vector<double>> numeric_columns;
  ds.numeric_slot.assign(width, Dataset::npos);
  for (std::size_t c = 0; c < width; ++c) {
    std::vector<double> values(n);
    bool numeric = true;
    for (std::size_t r = 0; r < n && numeric; ++r) numeric = parse_real(ds.text[c][r], values[r]);
    if (numeric) {
      ds.schema.columns[c].kind = ColumnKind::Numeric;
      ds.numeric_slot[c] = numeric_columns.size();
      numeric_columns.push_back(std::move(values));
    }
  }
  ds.numeric_data.resize(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(numeric_columns.size()));
  for (std::size_t j = 0; j < numeric_columns.size(); ++j)
    for (std::size_t r = 0; r < n; ++r)
      ds.numeric_data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          numeric_columns[j][r];
  return ds;
}

struct ClassCount {
  std::string value;
  std::size_t count = 0;
  bool operator==(const ClassCount&) const = default;
};

// Distinct target values, most frequent first, ties in lexicographic order.
inline std::vector<ClassCount> list_class_values(const Dataset& ds, std::string_view target) {
  const auto& col = ds.column_text(target);
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& v : col) ++counts[v];
  std::vector<ClassCount> out;
  out.reserve(counts.size());
  for (auto& [v, c] : counts) out.push_back({v, c});
  std::sort(out.begin(), out.end(), [](const ClassCount& a, const ClassCount& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.value < b.value;
  });
  return out;
}

enum class ClassStatus { Excluded, Known, Unknown };

inline std::string_view to_string(ClassStatus s) {
  switch (s) {
    case ClassStatus::Excluded: return "excluded";
    case ClassStatus::Known: return "known";
    case ClassStatus::Unknown: return "unknown";
  }
  return "excluded";
}

struct SelectionState {
  std::string dataset_id;
  std::vector<std::string> selected_features;  // order defines view columns
  std::string target_column;
  std::map<std::string, ClassStatus> class_status;
};

// Checks every SelectionState invariant against the dataset except the
// Known/Unknown partition requirement.
inline void validate_selection(const Dataset& ds, const SelectionState& sel) {
  const std::size_t target = ds.schema.index_of(sel.target_column);
  std::set<std::string> seen;
  for (const auto& f : sel.selected_features) {
    const std::size_t c = ds.schema.index_of(f);
    if (c == target)
      fail(ErrorCode::InvalidPartition, "target column '" + f + "' cannot be a selected feature");
    if (ds.schema.columns[c].kind != ColumnKind::Numeric)
      fail(ErrorCode::InvalidPartition, "feature '" + f + "' is not numeric");
    if (!seen.insert(f).second)
      fail(ErrorCode::InvalidPartition, "feature '" + f + "' selected twice");
  }
  std::set<std::string> values(ds.text[target].begin(), ds.text[target].end());
  for (const auto& v : values)
    if (!sel.class_status.count(v))
      fail(ErrorCode::InvalidPartition, "class '" + v + "' has no status");
  for (const auto& [v, s] : sel.class_status)
    if (!values.count(v))
      fail(ErrorCode::InvalidPartition, "class '" + v + "' does not occur in '" +
                                            sel.target_column + "'");
}

struct Standardization {
  Vector mean;
  Vector stddev;  // population stddev; 0 marks a constant column
};

struct DataView {
  std::vector<std::string> feature_names;
  Matrix x_known;
  std::vector<int> y_known;
  std::vector<std::string> label_names;  // dense label -> class value
  Matrix x_unknown;
  Matrix raw_known;    // unstandardized copies, for readable rules
  Matrix raw_unknown;
  std::vector<std::string> unknown_truth;  // class value per unknown row
  Standardization standardization;
  std::vector<std::size_t> row_origin;  // known rows first, then unknown rows

  std::size_t n_known() const { return static_cast<std::size_t>(x_known.rows()); }
  std::size_t n_unknown() const { return static_cast<std::size_t>(x_unknown.rows()); }
  std::size_t n_classes() const { return label_names.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  std::size_t origin_of_unknown(std::size_t i) const { return row_origin[n_known() + i]; }

  Matrix x_all() const {
    Matrix all(x_known.rows() + x_unknown.rows(), x_known.cols());
    all << x_known, x_unknown;
    return all;
  }
};

// Fits z-score standardization on the given rows (in place). Constant
// columns become exactly zero.
inline Standardization standardize_in_place(Matrix& x) {
  Standardization st;
  const auto n = static_cast<double>(x.rows());
  st.mean = x.colwise().sum().transpose() / n;
  st.stddev.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = st.mean(j);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) ss += (x(i, j) - m) * (x(i, j) - m);
    double sd = std::sqrt(ss / n);
    if (sd <= 1e-12 * std::max(1.0, std::abs(m))) sd = 0.0;
    st.stddev(j) = sd;
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = sd == 0.0 ? 0.0 : (x(i, j) - m) / sd;
  }
  return st;
}

inline Matrix gather_rows(const Dataset& ds, const std::vector<std::size_t>& rows,
                          const std::vector<std::size_t>& columns) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < columns.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.numeric(rows[i], columns[j]);
  return m;
}

inline DataView materialize_view(const Dataset& ds, const SelectionState& sel) {
  validate_selection(ds, sel);
  if (sel.selected_features.empty())
    fail(ErrorCode::InvalidPartition, "no features selected");

  std::vector<std::string> known_names;
  bool any_unknown = false;
  for (const auto& [v, s] : sel.class_status) {
    if (s == ClassStatus::Known) known_names.push_back(v);
    if (s == ClassStatus::Unknown) any_unknown = true;
  }
  if (known_names.empty()) fail(ErrorCode::InvalidPartition, "no class is marked known");
  if (!any_unknown) fail(ErrorCode::InvalidPartition, "no class is marked unknown");

  std::map<std::string, int> dense;
  for (std::size_t i = 0; i < known_names.size(); ++i) dense[known_names[i]] = static_cast<int>(i);

  const auto& target = ds.column_text(sel.target_column);
  std::vector<std::size_t> columns;
  for (const auto& f : sel.selected_features) columns.push_back(ds.schema.index_of(f));

  DataView view;
  view.feature_names = sel.selected_features;
  view.label_names = known_names;
  std::vector<std::size_t> known_rows, unknown_rows;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    switch (sel.class_status.at(target[r])) {
      case ClassStatus::Known:
        known_rows.push_back(r);
        view.y_known.push_back(dense.at(target[r]));
        break;
      case ClassStatus::Unknown:
        unknown_rows.push_back(r);
        view.unknown_truth.push_back(target[r]);
        break;
      case ClassStatus::Excluded:
        break;
    }
  }
  view.row_origin = known_rows;
  view.row_origin.insert(view.row_origin.end(), unknown_rows.begin(), unknown_rows.end());

  view.raw_known = gather_rows(ds, known_rows, columns);
  view.raw_unknown = gather_rows(ds, unknown_rows, columns);
  Matrix all(view.raw_known.rows() + view.raw_unknown.rows(), view.raw_known.cols());
  all << view.raw_known, view.raw_unknown;
  view.standardization = standardize_in_place(all);
  view.x_known = all.topRows(view.raw_known.rows());
  view.x_unknown = all.bottomRows(view.raw_unknown.rows());
  return view;
}

// Thread-safe id -> dataset map. Datasets are immutable once registered.
class DatasetRegistry {
 public:
  std::shared_ptr<const Dataset> add(Dataset ds) {
    std::unique_lock lock(mutex_);
    ds.id = "ds-" + std::to_string(++counter_);
    auto ptr = std::make_shared<const Dataset>(std::move(ds));
    datasets_[ptr->id] = ptr;
    return ptr;
  }

  std::shared_ptr<const Dataset> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = datasets_.find(id);
    if (it == datasets_.end()) fail(ErrorCode::UnknownDataset, "no dataset '" + id + "'");
    return it->second;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::size_t counter_ = 0;
  std::unordered_map<std::string, std::shared_ptr<const Dataset>> datasets_;
};

}  // namespace tabncd
