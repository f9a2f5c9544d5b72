#pragma once

// Experiment configuration: a line-oriented `key = value` file with a
// [dataset] section and one [algorithm.<name>] section per learner.
//
//   # comment
//   name = toy
//   seed = 7
//   loss = hinge
//   [dataset]
//   source = toy
//   n = 10000
//   [algorithm.svb]
//   type = SVB
//   eta = inv_sigma2_sqrt_t

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ovi/errors.hpp"
#include "ovi/learners.hpp"

namespace ovi {

struct DatasetBinding {
  std::string source = "toy";  // toy | iid_regression | csv
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  // csv
  std::string path;
  std::string name;
  std::string label;
  std::optional<std::size_t> label_index;
  std::string positive_label = "1";
  char delimiter = ',';
  bool header = true;
  std::vector<std::string> ignore;
  std::string task = "classification";
  // iid_regression
  std::size_t d = 5;
  double noise_sd = 0.5;
  Vector theta_star;
  // stream preparation
  bool permute = true;
  bool standardize = false;
  std::optional<std::size_t> subsample;
};

struct AlgorithmEntry {
  std::string name;
  Algorithm type = Algorithm::SVA;
  // number | inv_sqrt_T | inv_sigma2_sqrt_t | svb_convex | svb_strong | ewa_optimal
  std::string eta = "inv_sqrt_T";
  std::optional<double> alpha;
  std::optional<bool> project;
  std::optional<double> H;
  std::size_t grid_resolution = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<std::uint64_t> seed;
  std::string loss = "hinge";
  std::size_t hidden_width = 16;
  std::size_t mc_samples = 32;
  std::optional<std::size_t> horizon;
  double holdout_fraction = 0.0;
  double prior_s = 1.0;
  double box_m = 20.0;
  double box_sigma_lo = 0.0;
  double box_sigma_hi = 1.0;
  DatasetBinding dataset;
  std::vector<AlgorithmEntry> algorithms;

  // Ordered key/value echo of the file as read.
  std::vector<std::pair<std::string, std::string>> echo;
};

namespace detail {

inline std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

template <typename T>
T parse_integer(const std::string& v, std::size_t line, const std::string& key) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(where(line) + key + ": expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v, std::size_t line, const std::string& key) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError(where(line) + key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& v, std::size_t line, const std::string& key) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(where(line) + key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim_copy(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline bool is_eta_keyword(const std::string& v) {
  static const std::set<std::string> k{"inv_sqrt_T", "inv_sigma2_sqrt_t", "svb_convex", "svb_strong",
                                       "ewa_optimal"};
  return k.contains(v);
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  using namespace detail;
  ExperimentConfig cfg;
  enum class Section { Top, Dataset, Algorithm } section = Section::Top;
  AlgorithmEntry* algo = nullptr;
  std::set<std::string> seen;  // section-qualified keys, for duplicate detection
  std::string prefix;
  std::set<std::string> algo_types_given;

  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string text = trim_copy(raw);
    if (text.empty()) continue;

    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(where(line) + "unterminated section header");
      const std::string sec = trim_copy(std::string_view(text).substr(1, text.size() - 2));
      if (sec == "dataset") {
        section = Section::Dataset;
        prefix = "dataset.";
      } else if (sec.starts_with("algorithm.") && sec.size() > 10) {
        section = Section::Algorithm;
        const std::string nm = sec.substr(10);
        for (const auto& a : cfg.algorithms) {
          if (a.name == nm) throw ConfigError(where(line) + "duplicate algorithm section '" + nm + "'");
        }
        cfg.algorithms.push_back({});
        algo = &cfg.algorithms.back();
        algo->name = nm;
        // The section name doubles as the type unless `type` overrides it.
        if (auto a = parse_algorithm(nm)) algo->type = *a;
        prefix = sec + ".";
      } else {
        throw ConfigError(where(line) + "unknown section [" + sec + "]");
      }
      continue;
    }

    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(where(line) + "expected 'key = value'");
    const std::string key = trim_copy(std::string_view(text).substr(0, eq));
    const std::string val = trim_copy(std::string_view(text).substr(eq + 1));
    if (key.empty()) throw ConfigError(where(line) + "empty key");
    if (!seen.insert(prefix + key).second) throw ConfigError(where(line) + "duplicate key '" + prefix + key + "'");
    cfg.echo.emplace_back(prefix + key, val);

    if (section == Section::Top) {
      if (key == "name") cfg.name = val;
      else if (key == "seed") cfg.seed = parse_integer<std::uint64_t>(val, line, key);
      else if (key == "loss") cfg.loss = val;
      else if (key == "hidden_width") cfg.hidden_width = parse_integer<std::size_t>(val, line, key);
      else if (key == "mc_samples") cfg.mc_samples = parse_integer<std::size_t>(val, line, key);
      else if (key == "horizon") cfg.horizon = parse_integer<std::size_t>(val, line, key);
      else if (key == "holdout_fraction") cfg.holdout_fraction = parse_real(val, line, key);
      else if (key == "prior_s") cfg.prior_s = parse_real(val, line, key);
      else if (key == "box_m") cfg.box_m = parse_real(val, line, key);
      else if (key == "box_sigma_lo") cfg.box_sigma_lo = parse_real(val, line, key);
      else if (key == "box_sigma_hi") cfg.box_sigma_hi = parse_real(val, line, key);
      else throw ConfigError(where(line) + "unknown key '" + key + "'");
    } else if (section == Section::Dataset) {
      auto& ds = cfg.dataset;
      if (key == "source") ds.source = val;
      else if (key == "n") ds.n = parse_integer<std::size_t>(val, line, key);
      else if (key == "seed") ds.seed = parse_integer<std::uint64_t>(val, line, key);
      else if (key == "path") ds.path = val;
      else if (key == "name") ds.name = val;
      else if (key == "label") ds.label = val;
      else if (key == "label_index") ds.label_index = parse_integer<std::size_t>(val, line, key);
      else if (key == "positive_label") ds.positive_label = val;
      else if (key == "delimiter") {
        if (val == "tab" || val == "\\t") ds.delimiter = '\t';
        else if (val.size() == 1) ds.delimiter = val[0];
        else throw ConfigError(where(line) + "delimiter must be one character or 'tab'");
      } else if (key == "header") ds.header = parse_bool(val, line, key);
      else if (key == "ignore") ds.ignore = split_list(val);
      else if (key == "task") ds.task = val;
      else if (key == "d") ds.d = parse_integer<std::size_t>(val, line, key);
      else if (key == "noise_sd") ds.noise_sd = parse_real(val, line, key);
      else if (key == "theta_star") {
        ds.theta_star.clear();
        for (const auto& item : split_list(val)) ds.theta_star.push_back(parse_real(item, line, key));
      } else if (key == "permute") ds.permute = parse_bool(val, line, key);
      else if (key == "standardize") ds.standardize = parse_bool(val, line, key);
      else if (key == "subsample") ds.subsample = parse_integer<std::size_t>(val, line, key);
      else throw ConfigError(where(line) + "unknown dataset key '" + key + "'");
    } else {
      if (key == "type") {
        const auto a = parse_algorithm(val);
        if (!a) throw ConfigError(where(line) + "unknown algorithm type '" + val + "'");
        algo->type = *a;
        algo_types_given.insert(algo->name);
      } else if (key == "eta") {
        if (!is_eta_keyword(val)) parse_real(val, line, key);
        algo->eta = val;
      } else if (key == "alpha") algo->alpha = parse_real(val, line, key);
      else if (key == "project") algo->project = parse_bool(val, line, key);
      else if (key == "H") algo->H = parse_real(val, line, key);
      else if (key == "grid_resolution") algo->grid_resolution = parse_integer<std::size_t>(val, line, key);
      else throw ConfigError(where(line) + "unknown algorithm key '" + key + "'");
    }
  }

  for (const auto& a : cfg.algorithms) {
    if (!algo_types_given.contains(a.name) && !parse_algorithm(a.name)) {
      throw ConfigError("algorithm '" + a.name + "': missing type");
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

// Checks that do not need the data.
inline void validate_config(const ExperimentConfig& cfg) {
  if (!cfg.seed) throw ConfigError("seed is required");
  if (cfg.horizon && *cfg.horizon == 0) throw ConfigError("horizon must be >= 1");
  if (cfg.algorithms.empty()) throw ConfigError("no [algorithm.<name>] sections");
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must be in [0, 1)");
  }
  if (!(cfg.prior_s > 0.0)) throw ConfigError("prior_s must be positive");
  if (!(cfg.box_m > 0.0)) throw ConfigError("box_m must be positive");
  if (!(cfg.box_sigma_lo >= 0.0 && cfg.box_sigma_lo <= cfg.box_sigma_hi && cfg.box_sigma_hi > 0.0)) {
    throw ConfigError("need 0 <= box_sigma_lo <= box_sigma_hi, box_sigma_hi > 0");
  }
  if (cfg.mc_samples == 0) throw ConfigError("mc_samples must be >= 1");
  if (cfg.hidden_width == 0) throw ConfigError("hidden_width must be >= 1");
  try {
    (void)parse_loss_kind(cfg.loss, cfg.hidden_width);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto& ds = cfg.dataset;
  if (ds.source != "toy" && ds.source != "iid_regression" && ds.source != "csv") {
    throw ConfigError("dataset.source must be toy, iid_regression or csv");
  }
  if (ds.source == "csv" && ds.path.empty()) throw ConfigError("dataset.path required for csv");
  if (ds.source == "csv" && ds.label.empty() && !ds.label_index) {
    throw ConfigError("dataset.label or dataset.label_index required for csv");
  }
  if (ds.task != "classification" && ds.task != "regression") {
    throw ConfigError("dataset.task must be classification or regression");
  }
  if (ds.source != "csv" && ds.n == 0) throw ConfigError("dataset.n must be >= 1");
  if (ds.subsample && *ds.subsample == 0) throw ConfigError("dataset.subsample must be >= 1");
  for (const auto& a : cfg.algorithms) {
    const std::string who = "algorithm '" + a.name + "': ";
    if (a.alpha && a.type != Algorithm::NGVI) throw ConfigError(who + "alpha applies to NGVI only");
    if (a.type == Algorithm::NGVI && !a.alpha) throw ConfigError(who + "NGVI needs alpha");
    if (a.H && a.eta != "svb_strong") throw ConfigError(who + "H applies to eta = svb_strong only");
    if (a.project && a.type != Algorithm::SVA) throw ConfigError(who + "project applies to SVA only");
    const bool sigma_sched = a.eta == "inv_sigma2_sqrt_t" || a.eta == "svb_convex" || a.eta == "svb_strong";
    if (sigma_sched && a.type != Algorithm::SVB) throw ConfigError(who + a.eta + " applies to SVB only");
    if (a.eta == "svb_strong" && !a.H) throw ConfigError(who + "svb_strong needs H");
    if (a.eta == "ewa_optimal" && a.type != Algorithm::EWAGrid) throw ConfigError(who + "ewa_optimal applies to EWAGrid only");
    if (a.type == Algorithm::EWAGrid && a.grid_resolution < 2) throw ConfigError(who + "EWAGrid needs grid_resolution >= 2");
    if (a.type != Algorithm::EWAGrid && a.grid_resolution != 0) throw ConfigError(who + "grid_resolution applies to EWAGrid only");
  }
}

}  // namespace ovi
