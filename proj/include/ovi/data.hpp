#pragma once

// Datasets: synthetic generators, CSV ingestion and stream preparation
// (permutation, subsampling, standardization).

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "ovi/errors.hpp"
#include "ovi/family.hpp"
#include "ovi/losses.hpp"
#include "ovi/rng.hpp"

namespace ovi {

enum class Task { Classification, Regression };

inline std::string task_name(Task t) { return t == Task::Classification ? "classification" : "regression"; }

struct Dataset {
  std::string name;
  Task task = Task::Classification;
  std::vector<DataExample> rows;
  std::string provenance;

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().x.size(); }

  void validate() const {
    if (rows.empty()) throw DataError("dataset '" + name + "' is empty");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.x.size() != d) throw DataError("dataset '" + name + "': ragged row " + std::to_string(i + 1));
      if (!std::isfinite(r.y) || !std::all_of(r.x.begin(), r.x.end(), [](double v) { return std::isfinite(v); })) {
        throw DataError("dataset '" + name + "': non-finite value in row " + std::to_string(i + 1));
      }
      if (task == Task::Classification && r.y != 1.0 && r.y != -1.0) {
        throw DataError("dataset '" + name + "': label must be +1/-1 in row " + std::to_string(i + 1));
      }
    }
  }
};

// Two-class Gaussian toy problem: y = +1 with probability 2/3,
// x | y=+1 ~ N((1,1), [[1,1],[1,3]]), x | y=-1 ~ N((-1,-1), I).
inline Dataset gen_toy_classification(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("gen_toy_classification: n must be >= 1");
  CounterRng rng(seed);
  Dataset ds;
  ds.name = "toy_classification";
  ds.task = Task::Classification;
  ds.provenance = "generated: toy two-class Gaussian, seed " + std::to_string(seed);
  ds.rows.reserve(n);
  // Cholesky factor of [[1,1],[1,3]] is [[1,0],[1,sqrt(2)]].
  const double l21 = 1.0;
  const double l22 = std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = rng.uniform() < 2.0 / 3.0;
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    DataExample ex;
    if (positive) {
      ex.x = {1.0 + z1, 1.0 + l21 * z1 + l22 * z2};
      ex.y = 1.0;
    } else {
      ex.x = {-1.0 + z1, -1.0 + z2};
      ex.y = -1.0;
    }
    ds.rows.push_back(std::move(ex));
  }
  return ds;
}

// x ~ N(0, I_d), y = theta_star'x + eps, eps ~ N(0, noise_sd^2).
inline Dataset gen_iid_regression(std::size_t n, const Vector& theta_star, double noise_sd, std::uint64_t seed) {
  if (n == 0) throw DomainError("gen_iid_regression: n must be >= 1");
  if (!(noise_sd >= 0.0)) throw DomainError("gen_iid_regression: noise_sd must be >= 0");
  CounterRng rng(seed);
  Dataset ds;
  ds.name = "iid_regression";
  ds.task = Task::Regression;
  ds.provenance = "generated: iid linear regression, seed " + std::to_string(seed);
  ds.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DataExample ex;
    ex.x.resize(theta_star.size());
    double mean = 0.0;
    for (std::size_t j = 0; j < theta_star.size(); ++j) {
      ex.x[j] = rng.normal();
      mean += theta_star[j] * ex.x[j];
    }
    const double noise = rng.normal();
    ex.y = noise_sd == 0.0 ? mean : mean + noise_sd * noise;
    ds.rows.push_back(std::move(ex));
  }
  return ds;
}

struct CsvSchema {
  std::string name;  // dataset name; checked against the known-shape table
  Task task = Task::Classification;
  std::string label_column;  // header name, or
  std::optional<std::size_t> label_index;  // 0-based column index
  std::string positive_label = "1";  // classification: this value maps to +1, everything else to -1
  char delimiter = ',';
  bool header = true;
  std::vector<std::string> ignore_columns;  // header names or 0-based indices
};

struct KnownShape {
  std::string_view name;
  std::size_t rows;
  std::size_t dim;
};

// Reference row counts and feature dimensions of the benchmark datasets.
inline constexpr KnownShape kKnownShapes[] = {
    {"toy_classification", 10000, 2}, {"breast_cancer", 569, 30},
    {"pima_indians", 768, 8},         {"cover_type", 581012, 54},
    {"boston_housing", 506, 13},      {"california_housing", 20640, 9},
};

inline std::optional<KnownShape> known_shape(std::string_view name) {
  for (const auto& k : kKnownShapes) {
    if (k.name == name) return k;
  }
  return std::nullopt;
}

namespace detail {

// RFC 4180 records: quoted fields may contain delimiters, doubled quotes and
// newlines.
inline std::vector<std::vector<std::string>> parse_csv_records(std::istream& in, char delim) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  char c;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == delim) {
      end_field();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      end_record();
    } else if (c == '\n') {
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (field_started || !record.empty()) end_record();
  return records;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  return s.empty() || s == "?" || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

inline std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline Dataset load_csv(std::istream& in, const CsvSchema& schema) {
  auto records = detail::parse_csv_records(in, schema.delimiter);
  if (records.empty()) throw DataError("csv: no records");
  std::vector<std::string> header;
  if (schema.header) {
    header = std::move(records.front());
    records.erase(records.begin());
    for (auto& h : header) h = std::string(detail::trim(h));
  }
  if (records.empty()) throw DataError("csv: no data rows");
  const std::size_t ncols = records.front().size();

  auto resolve = [&](const std::string& key) -> std::size_t {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == key) return c;
    }
    if (auto idx = detail::parse_number(key); idx && *idx >= 0 && std::floor(*idx) == *idx && *idx < ncols) {
      return static_cast<std::size_t>(*idx);
    }
    throw DataError("csv: column '" + key + "' not found");
  };

  std::size_t label_col = 0;
  if (schema.label_index) {
    label_col = *schema.label_index;
  } else if (!schema.label_column.empty()) {
    label_col = resolve(schema.label_column);
  } else {
    label_col = ncols - 1;
  }
  if (label_col >= ncols) throw DataError("csv: label column index out of range");
  std::vector<bool> skip(ncols, false);
  skip[label_col] = true;
  for (const auto& key : schema.ignore_columns) skip[resolve(key)] = true;

  const auto positive_numeric = detail::parse_number(detail::trim(schema.positive_label));
  Dataset ds;
  ds.name = schema.name.empty() ? "csv" : schema.name;
  ds.task = schema.task;
  ds.rows.reserve(records.size());
  const std::size_t first_line = schema.header ? 2 : 1;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t line = r + first_line;
    if (rec.size() != ncols) {
      throw DataError("csv: row " + std::to_string(line) + " has " + std::to_string(rec.size()) +
                      " fields, expected " + std::to_string(ncols));
    }
    DataExample ex;
    for (std::size_t c = 0; c < ncols; ++c) {
      const std::string_view cell = detail::trim(rec[c]);
      if (c != label_col && skip[c]) continue;
      if (detail::is_missing(cell)) {
        throw DataError("csv: missing value at row " + std::to_string(line) + ", column " + std::to_string(c + 1));
      }
      if (c == label_col) {
        if (schema.task == Task::Classification) {
          const auto v = detail::parse_number(cell);
          const bool pos = (positive_numeric && v) ? *v == *positive_numeric
                                                   : cell == detail::trim(schema.positive_label);
          ex.y = pos ? 1.0 : -1.0;
        } else {
          const auto v = detail::parse_number(cell);
          if (!v) {
            throw DataError("csv: unparseable value '" + std::string(cell) + "' at row " + std::to_string(line) +
                            ", column " + std::to_string(c + 1));
          }
          ex.y = *v;
        }
        continue;
      }
      const auto v = detail::parse_number(cell);
      if (!v) {
        throw DataError("csv: unparseable value '" + std::string(cell) + "' at row " + std::to_string(line) +
                        ", column " + std::to_string(c + 1));
      }
      ex.x.push_back(*v);
    }
    ds.rows.push_back(std::move(ex));
  }
  ds.validate();
  if (const auto shape = known_shape(ds.name)) {
    if (shape->rows != ds.size() || shape->dim != ds.dim()) {
      throw DataError("csv: dataset '" + ds.name + "' has shape " + std::to_string(ds.size()) + "x" +
                      std::to_string(ds.dim()) + ", expected " + std::to_string(shape->rows) + "x" +
                      std::to_string(shape->dim));
    }
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("csv: cannot open '" + path + "'");
  Dataset ds = load_csv(in, schema);
  ds.provenance = "csv: " + path;
  return ds;
}

struct StreamConfig {
  std::uint64_t seed = 0;
  bool permute = false;
  bool standardize = false;
  std::optional<std::size_t> subsample;
};

// Seeded Fisher-Yates permutation, then the first `subsample` rows, then
// z-scoring of every feature. Mean and sd come from the full dataset before
// subsampling; constant features are centered only.
inline Dataset prepare_stream(Dataset ds, const StreamConfig& cfg) {
  if (cfg.subsample && (*cfg.subsample == 0 || *cfg.subsample > ds.size())) {
    throw ConfigError("prepare_stream: subsample must be in [1, T]");
  }
  const std::size_t d = ds.dim();
  Vector mean(d, 0.0), sd(d, 0.0);
  if (cfg.standardize && !ds.rows.empty()) {
    const double n = static_cast<double>(ds.size());
    for (std::size_t j = 0; j < d; ++j) {
      for (const auto& r : ds.rows) mean[j] += r.x[j];
      mean[j] /= n;
      double ss = 0.0;
      for (const auto& r : ds.rows) ss += (r.x[j] - mean[j]) * (r.x[j] - mean[j]);
      sd[j] = std::sqrt(ss / n);
    }
  }
  if (cfg.permute) {
    CounterRng rng(derive_seed(cfg.seed, 0x9e47));
    for (std::size_t i = ds.rows.size(); i > 1; --i) {
      const std::size_t j = rng.below(i);
      std::swap(ds.rows[i - 1], ds.rows[j]);
    }
  }
  if (cfg.subsample) ds.rows.resize(*cfg.subsample);
  if (cfg.standardize) {
    for (auto& r : ds.rows) {
      for (std::size_t j = 0; j < d; ++j) r.x[j] = sd[j] > 0.0 ? (r.x[j] - mean[j]) / sd[j] : r.x[j] - mean[j];
    }
  }
  return ds;
}

// Last `fraction` of the rows become the holdout.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in [0, 1)");
  const auto n_hold = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ds.size())));
  Dataset train = ds;
  Dataset hold = ds;
  train.rows.assign(ds.rows.begin(), ds.rows.end() - static_cast<std::ptrdiff_t>(n_hold));
  hold.rows.assign(ds.rows.end() - static_cast<std::ptrdiff_t>(n_hold), ds.rows.end());
  hold.name = ds.name + "/holdout";
  return {std::move(train), std::move(hold)};
}

inline void write_toy_csv(std::ostream& out, const Dataset& ds) {
  out << "x1,x2,y\n";
  char buf[64];
  for (const auto& r : ds.rows) {
    for (double v : r.x) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out << buf;
    }
    out << (r.y > 0 ? "1" : "-1") << '\n';
  }
}

}  // namespace ovi
