#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchors/csv.hpp"
#include "anchors/errors.hpp"
#include "anchors/estimate.hpp"
#include "anchors/rng.hpp"

namespace anchors {

using json = nlohmann::json;

enum class FeatureKind { categorical, numeric };

namespace detail {

// Shortest-exact decimal form; reloading with strtod gives the same bits.
inline std::string double_to_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back != v) return std::string(buf);
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return std::string(shorter);
  }
  return std::string(buf);
}

inline double decimal_to_double(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

inline std::string format_number(double v, int precision = 6) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return std::string(buf);
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Linear-interpolation empirical quantile (the numpy/R type-7 rule) on a
// sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  detail::require(!sorted.empty(), "quantile of empty sample");
  if (sorted.size() == 1) return sorted.front();
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  double frac = h - std::floor(h);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

struct FeatureSchema {
  std::string name;
  FeatureKind kind = FeatureKind::categorical;
  // Display labels, one per bin. Categorical: the distinct values. Numeric:
  // interval labels derived from `cuts` once the discretizer has been fit.
  std::vector<std::string> bins;
  // Numeric only: strictly increasing cut points; bins.size() == cuts.size()+1.
  std::vector<double> cuts;
  // Numeric only: train-median fill-in for missing values.
  double impute_value = 0.0;

  bool fitted() const { return !bins.empty(); }
  int n_bins() const { return static_cast<int>(bins.size()); }
  // Sentinel for values outside the vocabulary; no predicate may name it.
  int unknown_bin() const { return static_cast<int>(bins.size()); }
};

// A raw cell is a number for numeric features and text for categorical ones.
using RawCell = std::variant<double, std::string>;

struct Instance {
  std::vector<RawCell> raw;
  std::vector<int> disc;  // bin index per feature; -1 until discretized

  std::size_t n_features() const { return raw.size(); }
};

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split name: " + s);
}

// One equality constraint: instance's bin on `feature` equals `bin`.
struct Predicate {
  int feature = -1;
  int bin = -1;

  bool operator==(const Predicate&) const = default;
};

inline bool predicate_holds(const Predicate& p, const Instance& z) {
  return z.disc[static_cast<std::size_t>(p.feature)] == p.bin;
}

// A conjunction of predicates on distinct features, plus the label it pins
// down and the statistics attached during search/evaluation.
struct Anchor {
  std::vector<Predicate> predicates;  // kept sorted by feature index
  int anchored_label = -1;
  std::optional<PrecisionEstimate> precision;
  std::optional<double> coverage;

  std::size_t size() const { return predicates.size(); }

  bool holds_on(const Instance& z) const {
    for (const auto& p : predicates) {
      if (!predicate_holds(p, z)) return false;
    }
    return true;
  }

  void add(const Predicate& p) {
    auto pos = std::lower_bound(
        predicates.begin(), predicates.end(), p,
        [](const Predicate& a, const Predicate& b) { return a.feature < b.feature; });
    detail::require(pos == predicates.end() || pos->feature != p.feature,
                    "anchor already constrains this feature");
    predicates.insert(pos, p);
  }

  bool constrains(int feature) const {
    for (const auto& p : predicates) {
      if (p.feature == feature) return true;
    }
    return false;
  }
};

struct Dataset {
  std::vector<FeatureSchema> schema;
  std::vector<Instance> instances;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<Split> splits;
  std::string label_column;

  std::size_t n_features() const { return schema.size(); }
  std::size_t n_rows() const { return instances.size(); }
  int n_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      if (splits[i] == s) out.push_back(i);
    }
    return out;
  }

  std::vector<Instance> split_instances(Split s) const {
    std::vector<Instance> out;
    for (std::size_t i : split_indices(s)) out.push_back(instances[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline bool is_missing_cell(const std::string& cell) {
  return cell.empty() || cell == "?";
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads an RFC-4180 CSV with a header row. Column kinds are inferred (numeric
// iff every non-missing cell parses as a number) unless overridden through
// `schema_hints`. Missing categorical cells become the value "missing";
// missing numeric cells are stored as NaN and imputed when the discretizer is
// fit. Rows whose label cell is missing are dropped. All rows start in the
// train split.
inline Dataset load_csv(
    const std::string& path, const std::string& label_column,
    const std::map<std::string, FeatureKind>& schema_hints = {}) {
  auto records = read_csv_file(path);
  if (records.empty()) throw DataError(path + ": empty csv, expected a header row");

  std::vector<std::string> header;
  for (const auto& cell : records.front()) header.push_back(detail::trim(cell));

  int label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) {
      if (label_idx >= 0) throw ConfigError("duplicate label column: " + label_column);
      label_idx = static_cast<int>(i);
    }
  }
  if (label_idx < 0) {
    throw ConfigError(path + ": label column '" + label_column + "' not in header");
  }

  for (const auto& [name, kind] : schema_hints) {
    (void)kind;
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw ConfigError("schema hint names unknown column: " + name);
    }
  }

  std::vector<int> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) != label_idx) feature_cols.push_back(static_cast<int>(i));
  }

  // Keep only rows with a present label.
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> label_cells;
  for (std::size_t r = 1; r < records.size(); ++r) {
    std::vector<std::string> cells;
    for (const auto& cell : records[r]) cells.push_back(detail::trim(cell));
    if (detail::is_missing_cell(cells[static_cast<std::size_t>(label_idx)])) continue;
    label_cells.push_back(cells[static_cast<std::size_t>(label_idx)]);
    rows.push_back(std::move(cells));
  }

  Dataset ds;
  ds.label_column = label_column;

  // Infer or apply a kind per feature column.
  for (int col : feature_cols) {
    FeatureSchema fs;
    fs.name = header[static_cast<std::size_t>(col)];
    auto hint = schema_hints.find(fs.name);
    if (hint != schema_hints.end()) {
      fs.kind = hint->second;
      if (fs.kind == FeatureKind::numeric) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const std::string& cell = rows[r][static_cast<std::size_t>(col)];
          if (!detail::is_missing_cell(cell) && !detail::parse_double(cell)) {
            throw DataError(path + ": row " + std::to_string(r + 2) + ": cell '" +
                            cell + "' in numeric column '" + fs.name +
                            "' does not parse as a number");
          }
        }
      }
    } else {
      bool all_numeric = true;
      bool any_value = false;
      for (const auto& row : rows) {
        const std::string& cell = row[static_cast<std::size_t>(col)];
        if (detail::is_missing_cell(cell)) continue;
        any_value = true;
        if (!detail::parse_double(cell)) {
          all_numeric = false;
          break;
        }
      }
      fs.kind = (all_numeric && any_value) ? FeatureKind::numeric
                                           : FeatureKind::categorical;
    }
    ds.schema.push_back(std::move(fs));
  }

  // Categorical vocabularies come from the whole table; numeric bins wait for
  // the discretizer.
  for (std::size_t fi = 0; fi < ds.schema.size(); ++fi) {
    if (ds.schema[fi].kind != FeatureKind::categorical) continue;
    std::set<std::string> values;
    int col = feature_cols[fi];
    for (const auto& row : rows) {
      const std::string& cell = row[static_cast<std::size_t>(col)];
      values.insert(detail::is_missing_cell(cell) ? "missing" : cell);
    }
    ds.schema[fi].bins.assign(values.begin(), values.end());
  }

  std::set<std::string> label_values(label_cells.begin(), label_cells.end());
  ds.class_names.assign(label_values.begin(), label_values.end());

  for (std::size_t r = 0; r < rows.size(); ++r) {
    Instance inst;
    inst.raw.reserve(ds.schema.size());
    for (std::size_t fi = 0; fi < ds.schema.size(); ++fi) {
      const std::string& cell = rows[r][static_cast<std::size_t>(feature_cols[fi])];
      if (ds.schema[fi].kind == FeatureKind::numeric) {
        if (detail::is_missing_cell(cell)) {
          inst.raw.emplace_back(std::numeric_limits<double>::quiet_NaN());
        } else {
          inst.raw.emplace_back(*detail::parse_double(cell));
        }
      } else {
        inst.raw.emplace_back(detail::is_missing_cell(cell) ? std::string("missing")
                                                            : cell);
      }
    }
    inst.disc.assign(ds.schema.size(), -1);
    ds.instances.push_back(std::move(inst));
    auto it = std::lower_bound(ds.class_names.begin(), ds.class_names.end(),
                               label_cells[r]);
    ds.labels.push_back(static_cast<int>(it - ds.class_names.begin()));
  }
  ds.splits.assign(ds.instances.size(), Split::train);
  return ds;
}

// Seeded-shuffle split; fractions round to the nearest row.
inline void assign_splits(Dataset& ds, std::uint64_t seed, double train_frac = 0.8,
                          double validation_frac = 0.1) {
  if (!(train_frac > 0.0 && validation_frac >= 0.0 &&
        train_frac + validation_frac <= 1.0)) {
    throw ConfigError("invalid split fractions");
  }
  std::vector<std::size_t> order(ds.n_rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  auto n = static_cast<double>(order.size());
  auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
  auto n_train_val =
      static_cast<std::size_t>(std::llround((train_frac + validation_frac) * n));
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    Split s = pos < n_train ? Split::train
              : pos < n_train_val ? Split::validation
                                  : Split::test;
    ds.splits[order[pos]] = s;
  }
}

// ---------------------------------------------------------------------------
// Discretization

// Maps raw values to bin indices under a fitted schema. Unseen categorical
// values land in the unknown bin, which no predicate can name.
inline std::vector<int> discretize(const std::vector<RawCell>& raw,
                                   const std::vector<FeatureSchema>& schema) {
  detail::require(raw.size() == schema.size(), "discretize: arity mismatch");
  std::vector<int> disc(raw.size(), -1);
  for (std::size_t fi = 0; fi < schema.size(); ++fi) {
    const FeatureSchema& fs = schema[fi];
    detail::require(fs.fitted(), "discretize: schema not fitted for " + fs.name);
    if (fs.kind == FeatureKind::numeric) {
      double v = std::get<double>(raw[fi]);
      if (std::isnan(v)) v = fs.impute_value;
      auto it = std::lower_bound(fs.cuts.begin(), fs.cuts.end(), v);
      disc[fi] = static_cast<int>(it - fs.cuts.begin());
    } else {
      const std::string& v = std::get<std::string>(raw[fi]);
      auto it = std::lower_bound(fs.bins.begin(), fs.bins.end(), v);
      disc[fi] = (it != fs.bins.end() && *it == v)
                     ? static_cast<int>(it - fs.bins.begin())
                     : fs.unknown_bin();
    }
  }
  return disc;
}

namespace detail {

inline std::vector<std::string> interval_labels(const std::string& name,
                                                const std::vector<double>& cuts,
                                                int precision) {
  std::vector<std::string> labels;
  if (cuts.empty()) {
    labels.push_back(name + ": any");
    return labels;
  }
  labels.push_back(name + " <= " + format_number(cuts.front(), precision));
  for (std::size_t i = 1; i < cuts.size(); ++i) {
    labels.push_back(format_number(cuts[i - 1], precision) + " < " + name +
                     " <= " + format_number(cuts[i], precision));
  }
  labels.push_back(name + " > " + format_number(cuts.back(), precision));
  return labels;
}

}  // namespace detail

// Fits empirical-quantile cut points for every numeric feature on the train
// split, imputes missing numerics with the train median, and discretizes all
// rows. Duplicate cut points are merged, so low-cardinality columns may end
// up with fewer bins; a constant column gets a single bin.
inline void fit_discretizer(Dataset& ds, int quantiles) {
  if (quantiles < 2) throw ConfigError("fit_discretizer: quantiles must be >= 2");
  std::vector<std::size_t> train = ds.split_indices(Split::train);
  if (train.empty()) throw DataError("fit_discretizer: empty train split");

  for (std::size_t fi = 0; fi < ds.schema.size(); ++fi) {
    FeatureSchema& fs = ds.schema[fi];
    if (fs.kind != FeatureKind::numeric) continue;

    std::vector<double> values;
    values.reserve(train.size());
    for (std::size_t r : train) {
      double v = std::get<double>(ds.instances[r].raw[fi]);
      if (!std::isnan(v)) values.push_back(v);
    }
    std::sort(values.begin(), values.end());
    fs.impute_value = values.empty() ? 0.0 : detail::quantile_sorted(values, 0.5);

    for (auto& inst : ds.instances) {
      double& v = std::get<double>(inst.raw[fi]);
      if (std::isnan(v)) v = fs.impute_value;
    }
    if (values.empty()) values.push_back(fs.impute_value);

    fs.cuts.clear();
    for (int q = 1; q < quantiles; ++q) {
      fs.cuts.push_back(detail::quantile_sorted(
          values, static_cast<double>(q) / static_cast<double>(quantiles)));
    }
    fs.cuts.erase(std::unique(fs.cuts.begin(), fs.cuts.end()), fs.cuts.end());
    if (values.front() == values.back()) fs.cuts.clear();  // constant column

    fs.bins = detail::interval_labels(fs.name, fs.cuts, 6);
    for (int precision : {12, 17}) {
      std::set<std::string> unique(fs.bins.begin(), fs.bins.end());
      if (unique.size() == fs.bins.size()) break;
      fs.bins = detail::interval_labels(fs.name, fs.cuts, precision);
    }
  }

  for (auto& inst : ds.instances) inst.disc = discretize(inst.raw, ds.schema);
}

// ---------------------------------------------------------------------------
// Coverage

inline double coverage(const std::vector<Predicate>& predicates,
                       const std::vector<Instance>& reference) {
  if (reference.empty()) throw DataError("coverage: empty reference set");
  std::size_t hits = 0;
  for (const auto& z : reference) {
    bool all = true;
    for (const auto& p : predicates) {
      if (!predicate_holds(p, z)) {
        all = false;
        break;
      }
    }
    if (all) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(reference.size());
}

inline double coverage(const Anchor& anchor, const std::vector<Instance>& reference) {
  return coverage(anchor.predicates, reference);
}

// ---------------------------------------------------------------------------
// Persistence

inline json schema_to_json(const std::vector<FeatureSchema>& schema) {
  json arr = json::array();
  for (const auto& fs : schema) {
    json j;
    j["name"] = fs.name;
    j["kind"] = fs.kind == FeatureKind::numeric ? "numeric" : "categorical";
    j["bins"] = fs.bins;
    if (fs.kind == FeatureKind::numeric) {
      json cuts = json::array();
      for (double c : fs.cuts) cuts.push_back(detail::double_to_decimal(c));
      j["cuts"] = cuts;
      j["impute"] = detail::double_to_decimal(fs.impute_value);
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::vector<FeatureSchema> schema_from_json(const json& arr) {
  std::vector<FeatureSchema> schema;
  for (const auto& j : arr) {
    FeatureSchema fs;
    fs.name = j.at("name").get<std::string>();
    fs.kind = j.at("kind").get<std::string>() == "numeric" ? FeatureKind::numeric
                                                           : FeatureKind::categorical;
    fs.bins = j.at("bins").get<std::vector<std::string>>();
    if (fs.kind == FeatureKind::numeric) {
      for (const auto& c : j.at("cuts")) {
        fs.cuts.push_back(detail::decimal_to_double(c.get<std::string>()));
      }
      fs.impute_value = detail::decimal_to_double(j.at("impute").get<std::string>());
    }
    schema.push_back(std::move(fs));
  }
  return schema;
}

inline std::string schema_digest(const std::vector<FeatureSchema>& schema) {
  return detail::hex64(detail::fnv1a64(schema_to_json(schema).dump()));
}

inline json dataset_to_json(const Dataset& ds) {
  json j;
  j["format_version"] = 1;
  j["label_column"] = ds.label_column;
  j["class_names"] = ds.class_names;
  j["schema"] = schema_to_json(ds.schema);
  json rows = json::array();
  for (const auto& inst : ds.instances) {
    json row = json::array();
    for (std::size_t fi = 0; fi < ds.schema.size(); ++fi) {
      if (ds.schema[fi].kind == FeatureKind::numeric) {
        row.push_back(detail::double_to_decimal(std::get<double>(inst.raw[fi])));
      } else {
        row.push_back(std::get<std::string>(inst.raw[fi]));
      }
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  j["labels"] = ds.labels;
  json splits = json::array();
  for (Split s : ds.splits) splits.push_back(split_name(s));
  j["splits"] = std::move(splits);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  if (j.at("format_version").get<int>() != 1) {
    throw DataError("dataset file: unsupported format_version");
  }
  Dataset ds;
  ds.label_column = j.at("label_column").get<std::string>();
  ds.class_names = j.at("class_names").get<std::vector<std::string>>();
  ds.schema = schema_from_json(j.at("schema"));
  bool fitted = std::all_of(ds.schema.begin(), ds.schema.end(),
                            [](const FeatureSchema& fs) { return fs.fitted(); });
  for (const auto& row : j.at("rows")) {
    Instance inst;
    for (std::size_t fi = 0; fi < ds.schema.size(); ++fi) {
      if (ds.schema[fi].kind == FeatureKind::numeric) {
        inst.raw.emplace_back(
            detail::decimal_to_double(row.at(fi).get<std::string>()));
      } else {
        inst.raw.emplace_back(row.at(fi).get<std::string>());
      }
    }
    inst.disc = fitted ? discretize(inst.raw, ds.schema)
                       : std::vector<int>(ds.schema.size(), -1);
    ds.instances.push_back(std::move(inst));
  }
  ds.labels = j.at("labels").get<std::vector<int>>();
  for (const auto& s : j.at("splits")) {
    ds.splits.push_back(split_from_name(s.get<std::string>()));
  }
  if (ds.labels.size() != ds.instances.size() ||
      ds.splits.size() != ds.instances.size()) {
    throw DataError("dataset file: rows/labels/splits length mismatch");
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << dataset_to_json(ds).dump(1) << "\n";
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace anchors
