#pragma once

// Experiment driver behind the command-line verbs: builds the stream, runs
// every configured learner, writes the loss series, the comparator series and
// summary.json, and re-checks the regret bounds from those artifacts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovi/config.hpp"
#include "ovi/data.hpp"
#include "ovi/evaluation.hpp"
#include "ovi/learners.hpp"
#include "ovi/losses.hpp"

namespace ovi {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitRuntime = 3 };

// Comparator distribution width for the KL-regularized bound.
inline constexpr double kKlComparatorSigma = 0.01;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_series_csv(const fs::path& path, std::span<const double> losses) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "t,instant_loss,cum_loss,avg_cum_loss\n";
  const RegretLedger ledger = build_ledger(losses);
  for (std::size_t i = 0; i < ledger.horizon(); ++i) {
    out << (i + 1) << ',' << format_double(ledger.instantaneous[i]) << ',' << format_double(ledger.cumulative[i])
        << ',' << format_double(ledger.average[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

struct SeriesRow {
  double instant = 0.0;
  double cum = 0.0;
  double avg = 0.0;
};

inline std::vector<SeriesRow> read_series_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "t,instant_loss,cum_loss,avg_cum_loss") {
    throw DataError("'" + path.string() + "': unexpected header");
  }
  std::vector<SeriesRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell[4];
    for (auto& c : cell) std::getline(ss, c, ',');
    rows.push_back({std::stod(cell[1]), std::stod(cell[2]), std::stod(cell[3])});
  }
  return rows;
}

// Least-squares slope of v over its last `fraction` of entries.
inline double tail_slope(std::span<const double> v, double fraction = 0.1) {
  const std::size_t n = v.size();
  const std::size_t k = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  if (n < 2) return 0.0;
  const std::size_t start = n - std::min(n, k);
  const double m = static_cast<double>(n - start);
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = start; i < n; ++i) {
    sx += static_cast<double>(i);
    sy += v[i];
  }
  const double mx = sx / m, my = sy / m;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = start; i < n; ++i) {
    const double dx = static_cast<double>(i) - mx;
    sxy += dx * (v[i] - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Stream construction

struct PreparedData {
  Dataset train;
  Dataset holdout;
  LossKind kind;
  std::size_t horizon = 0;
};

inline Dataset build_dataset(const DatasetBinding& entry) {
  if (entry.source == "toy") return gen_toy_classification(entry.n, entry.seed);
  if (entry.source == "iid_regression") {
    Vector theta = entry.theta_star.empty() ? Vector(entry.d, 1.0) : entry.theta_star;
    return gen_iid_regression(entry.n, theta, entry.noise_sd, entry.seed);
  }
  CsvSchema schema;
  schema.name = entry.name;
  schema.task = entry.task == "regression" ? Task::Regression : Task::Classification;
  schema.label_column = entry.label;
  schema.label_index = entry.label_index;
  schema.positive_label = entry.positive_label;
  schema.delimiter = entry.delimiter;
  schema.header = entry.header;
  schema.ignore_columns = entry.ignore;
  return load_csv(entry.path, schema);
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData out;
  out.kind = parse_loss_kind(cfg.loss, cfg.hidden_width);
  Dataset ds = build_dataset(cfg.dataset);
  if (out.kind.tag == LossTag::Hinge && ds.task != Task::Classification) {
    throw ConfigError("hinge loss needs a classification dataset");
  }
  ds = prepare_stream(std::move(ds), {cfg.dataset.seed, cfg.dataset.permute, cfg.dataset.standardize,
                                      cfg.dataset.subsample});
  auto [train, hold] = split_holdout(ds, cfg.holdout_fraction);
  if (train.rows.empty()) throw ConfigError("no training rows left after the holdout split");
  out.horizon = cfg.horizon ? std::min(*cfg.horizon, train.size()) : train.size();
  train.rows.resize(out.horizon);
  out.train = std::move(train);
  out.holdout = std::move(hold);
  return out;
}

inline BoxConstraints experiment_box(const ExperimentConfig& cfg, std::size_t dim) {
  return BoxConstraints::uniform(dim, cfg.box_m, cfg.box_sigma_lo, cfg.box_sigma_hi);
}

// ---------------------------------------------------------------------------
// Bounds

struct BoundReport {
  std::string id;  // "1".."4"; empty when no bound applies
  bool deterministic = false;
  double bound = 0.0;
  double comparator_cumulative = 0.0;  // the comparator term subtracted from the learner's cumulative loss
  std::string comparator;
  json inputs = json::object();
};

struct Constants {
  std::optional<double> L;
  double D = 0.0;
  std::optional<double> alpha_hat;
};

// ---------------------------------------------------------------------------
// Run

struct AlgorithmOutcome {
  AlgorithmEntry entry;
  LearnerConfig learner;
  std::string eta_description;
  Trace trace;
  double wall_ms = 0.0;
  std::optional<BoundReport> bound;
  std::optional<double> expert_B;
};

inline LearnerConfig resolve_learner(const AlgorithmEntry& entry, const ExperimentConfig& cfg,
                                     const PreparedData& data, const BoxConstraints& box,
                                     const Constants& constants, std::optional<double>& expert_B,
                                     std::string& eta_description) {
  const double T = static_cast<double>(data.horizon);
  LearnerConfig lc;
  lc.algorithm = entry.type;
  lc.prior = GaussianPrior{cfg.prior_s, box.dim()};
  lc.box = box;
  lc.mc_samples = cfg.mc_samples;
  lc.alpha = entry.alpha;
  if (entry.project) lc.project_sva = *entry.project;
  if (entry.type == Algorithm::EWAGrid) {
    const double count = std::pow(static_cast<double>(entry.grid_resolution), static_cast<double>(box.dim()));
    if (count > 1e6) throw ConfigError("algorithm '" + entry.name + "': expert grid larger than 1e6 points");
    lc.experts = lattice_experts(box, entry.grid_resolution);
    expert_B = max_expert_loss(data.kind, lc.experts, data.train.rows);
  }
  if (entry.eta == "inv_sqrt_T") {
    lc.eta = StepSchedule::constant(1.0 / std::sqrt(T));
  } else if (entry.eta == "inv_sigma2_sqrt_t") {
    lc.eta = StepSchedule::inv_sigma2_sqrt_t();
  } else if (entry.eta == "svb_convex") {
    if (!constants.L) throw ConfigError("algorithm '" + entry.name + "': svb_convex needs a Lipschitz constant");
    lc.eta = StepSchedule::svb_convex(constants.D, *constants.L);
  } else if (entry.eta == "svb_strong") {
    lc.eta = StepSchedule::svb_strong(*entry.H);
  } else if (entry.eta == "ewa_optimal") {
    if (!(*expert_B > 0.0)) throw ConfigError("algorithm '" + entry.name + "': every expert has zero loss");
    lc.eta = StepSchedule::constant(
        ewa_optimal_eta(*expert_B, T, std::log(static_cast<double>(lc.experts.size()))));
  } else {
    lc.eta = StepSchedule::constant(std::stod(entry.eta));
  }
  eta_description = lc.eta.describe();
  lc.validate();
  return lc;
}

inline std::optional<BoundReport> bound_for(const AlgorithmOutcome& o, const PreparedData& data,
                                            const BoxConstraints& box, const Constants& constants,
                                            const ComparatorResult& comp, const GaussianPrior& prior) {
  const double T = static_cast<double>(data.horizon);
  const auto& rows = data.train.rows;
  const bool convex = data.kind.convex();
  BoundReport r;
  switch (o.entry.type) {
    case Algorithm::EWAGrid: {
      const double eta = o.learner.eta.value;
      const double K = static_cast<double>(o.learner.experts.size());
      double best = std::numeric_limits<double>::infinity();
      for (const auto& th : o.learner.experts) best = std::min(best, cumulative_loss(data.kind, th, rows));
      if (!(*o.expert_B > 0.0)) return std::nullopt;
      BoundInputs in{.eta = eta, .B = *o.expert_B, .T = T, .kl_term = std::log(K)};
      r.id = "1";
      r.deterministic = convex;
      r.bound = ewa_bound(in);
      r.comparator_cumulative = best;
      r.comparator = "best expert";
      r.inputs = {{"eta", eta}, {"B", in.B}, {"T", T}, {"kl_term", in.kl_term}, {"experts", K}};
      return r;
    }
    case Algorithm::SVA: {
      if (!constants.L || !constants.alpha_hat || !(*constants.L > 0.0) || !convex) return std::nullopt;
      const MeanFieldGaussian qc(comp.theta_star, Vector(box.dim(), kKlComparatorSigma));
      BoundInputs in{.eta = o.learner.eta.value, .L = *constants.L, .alpha = *constants.alpha_hat, .T = T,
                     .kl_term = kl_divergence(qc, prior.distribution())};
      r.id = "2";
      r.deterministic = false;
      r.bound = sva_bound(in);
      r.comparator_cumulative = expected_cumulative_loss(data.kind, qc, rows);
      r.comparator = "N(theta_star, 0.01^2 I)";
      r.inputs = {{"eta", in.eta}, {"L", in.L}, {"alpha", in.alpha}, {"T", T}, {"kl_term", in.kl_term}};
      return r;
    }
    case Algorithm::SVB: {
      const auto kind = o.learner.eta.kind;
      if (kind == ScheduleKind::SvbConvex) {
        BoundInputs in{.L = o.learner.eta.L, .D = o.learner.eta.D, .T = T};
        r.id = "3";
        r.deterministic = convex;
        r.bound = svb_bounds(in).convex;
        r.inputs = {{"D", in.D}, {"L", in.L}, {"T", T}, {"variant", "convex"}};
      } else if (kind == ScheduleKind::SvbStrong) {
        if (!constants.L) return std::nullopt;
        BoundInputs in{.L = *constants.L, .H = o.learner.eta.H, .D = constants.D, .T = T};
        r.id = "3";
        r.deterministic = false;  // strong convexity of the loss is assumed, not verified
        r.bound = svb_bounds(in).strongly_convex;
        r.inputs = {{"L", in.L}, {"H", in.H}, {"T", T}, {"variant", "strongly_convex"}};
      } else {
        return std::nullopt;
      }
      r.comparator_cumulative = comp.cumulative_loss_star;
      r.comparator = "theta_star";
      return r;
    }
    case Algorithm::OGAEL: {
      if (!constants.L || !(*constants.L > 0.0) || !convex) return std::nullopt;
      const MeanFieldGaussian qc(comp.theta_star, Vector(box.dim(), box.sigma_floor(0)));
      const MeanFieldGaussian q1 = prior.distribution();
      BoundInputs in{.eta = o.learner.eta.value, .L = *constants.L, .T = T, .kl_term = squared_distance(qc, q1)};
      r.id = "4";
      r.deterministic = true;
      r.bound = ogael_bound(in);
      r.comparator_cumulative = expected_cumulative_loss(data.kind, qc, rows);
      r.comparator = "N(theta_star, sigma_floor^2 I)";
      r.inputs = {{"eta", in.eta}, {"L", in.L}, {"T", T}, {"dist2", in.kl_term}};
      return r;
    }
    default: return std::nullopt;
  }
}

struct RunResult {
  json summary;
  fs::path out_dir;
};

inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, bool parallel = true) {
  validate_config(cfg);
  const PreparedData data = prepare_data(cfg);
  const std::size_t dim = data.kind.param_dim(data.train.dim());
  const BoxConstraints box = experiment_box(cfg, dim);
  const GaussianPrior prior{cfg.prior_s, dim};
  const auto& rows = data.train.rows;

  Constants constants;
  constants.D = box_diameter(box);
  if (data.kind.tag != LossTag::SquaredNN) constants.L = lipschitz_constant(data.kind, rows, box);
  {
    BoxConstraints floored = box;
    for (std::size_t j = 0; j < dim; ++j) floored.sigma_lo[j] = box.sigma_floor(j);
    if (dim <= 64) constants.alpha_hat = alpha_estimate(prior, floored, 11).value;
  }

  std::vector<AlgorithmOutcome> outcomes(cfg.algorithms.size());
  for (std::size_t i = 0; i < cfg.algorithms.size(); ++i) {
    auto& o = outcomes[i];
    o.entry = cfg.algorithms[i];
    o.learner = resolve_learner(o.entry, cfg, data, box, constants, o.expert_B, o.eta_description);
  }

  fs::create_directories(out_dir);
  const RunOptions options{*cfg.seed, data.horizon, false};
  auto run_one = [&](AlgorithmOutcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    o.trace = run_online(o.learner, rows, data.kind, options);
    o.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_series_csv(out_dir / (o.entry.name + ".csv"), o.trace.losses());
  };
  auto comparator_job = [&] {
    ComparatorOptions co;
    co.seed = derive_seed(*cfg.seed, 0xc0);
    return best_in_hindsight(rows, data.kind, box, co);
  };
  ComparatorResult comp;
  if (parallel) {
    std::vector<std::future<void>> jobs;
    for (auto& o : outcomes) jobs.push_back(std::async(std::launch::async, run_one, std::ref(o)));
    auto comp_future = std::async(std::launch::async, comparator_job);
    std::exception_ptr first_error;
    for (auto& j : jobs) {
      try {
        j.get();
      } catch (...) {
        if (!first_error) first_error = std::current_exception();
      }
    }
    comp = comp_future.get();
    if (first_error) std::rethrow_exception(first_error);
  } else {
    for (auto& o : outcomes) run_one(o);
    comp = comparator_job();
  }

  std::vector<double> comp_losses(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) comp_losses[t] = point_loss(data.kind, comp.theta_star, rows[t]);
  write_series_csv(out_dir / "comparator.csv", comp_losses);
  const RegretLedger comp_ledger = build_ledger(comp_losses);

  json summary;
  summary["name"] = cfg.name;
  summary["dataset"] = {{"name", data.train.name},
                        {"T", data.horizon},
                        {"d", data.train.dim()},
                        {"param_dim", dim},
                        {"task", task_name(data.train.task)},
                        {"seed", cfg.dataset.seed},
                        {"standardize", cfg.dataset.standardize},
                        {"permute", cfg.dataset.permute},
                        {"holdout", data.holdout.size()},
                        {"provenance", data.train.provenance}};
  summary["loss"] = data.kind.name();
  summary["comparator"] = {{"value", comp_ledger.total() / static_cast<double>(data.horizon)},
                           {"cumulative", comp_ledger.total()},
                           {"method", comp.method},
                           {"restarts", comp.restarts},
                           {"final_grad_norm", comp.final_grad_norm},
                           {"theta_star", comp.theta_star}};
  json cjs = {{"D", constants.D}};
  cjs["L"] = constants.L ? json(*constants.L) : json(nullptr);
  cjs["alpha_hat"] = constants.alpha_hat ? json(*constants.alpha_hat) : json(nullptr);
  std::optional<double> B;
  for (const auto& o : outcomes) {
    if (o.expert_B) B = std::max(B.value_or(0.0), *o.expert_B);
  }
  cjs["B"] = B ? json(*B) : json(nullptr);
  summary["constants"] = cjs;

  const std::size_t early = std::max<std::size_t>(1, data.horizon / 10);
  json algos = json::object();
  std::string fastest, lowest;
  double fastest_v = std::numeric_limits<double>::infinity(), lowest_v = fastest_v;
  for (auto& o : outcomes) {
    const RegretLedger ledger = build_ledger(o.trace);
    o.bound = bound_for(o, data, box, constants, comp, prior);
    json a;
    a["type"] = algorithm_name(o.entry.type);
    a["eta"] = o.eta_description;
    a["final_avg_loss"] = ledger.average.back();
    a["cumulative_loss"] = ledger.total();
    a["regret"] = regret(ledger, comp);
    a["wall_ms"] = o.wall_ms;
    std::vector<double> gap(ledger.horizon());
    for (std::size_t t = 0; t < gap.size(); ++t) gap[t] = ledger.average[t] - comp_ledger.average[t];
    a["tail_slope"] = tail_slope(ledger.average);
    a["tail_gap_slope"] = tail_slope(gap);
    if (o.entry.type == Algorithm::NGVI) {
      a["alpha"] = *o.learner.alpha;
      std::size_t retries = 0, outside = 0;
      for (const auto& s : o.trace.steps) {
        retries += s.retries;
        outside += s.outside_box ? 1 : 0;
      }
      a["ngvi_retries"] = retries;
      a["steps_outside_box"] = outside;
    }
    if (o.bound) {
      const double lhs = ledger.total() - o.bound->comparator_cumulative;
      a["bound"] = o.bound->bound;
      a["bound_id"] = o.bound->id;
      a["bound_deterministic"] = o.bound->deterministic;
      a["bound_regret"] = lhs;
      a["bound_comparator"] = o.bound->comparator;
      a["bound_comparator_cumulative"] = o.bound->comparator_cumulative;
      a["slack_ratio"] = lhs / o.bound->bound;
      a["bound_holds"] = lhs <= o.bound->bound;
      a["bound_inputs"] = o.bound->inputs;
    } else {
      a["bound"] = nullptr;
      a["slack_ratio"] = nullptr;
    }
    if (!data.holdout.rows.empty()) {
      const Vector bar = online_to_batch(o.trace);
      const RiskEstimate risk = generalization_estimate(bar, data.holdout.rows, data.kind);
      a["holdout"] = {{"theta_bar", bar}, {"risk", risk.mean}, {"risk_se", risk.standard_error}};
    }
    if (ledger.average[early - 1] < fastest_v) {
      fastest_v = ledger.average[early - 1];
      fastest = o.entry.name;
    }
    if (ledger.average.back() < lowest_v) {
      lowest_v = ledger.average.back();
      lowest = o.entry.name;
    }
    algos[o.entry.name] = std::move(a);
  }
  summary["algorithms"] = std::move(algos);
  summary["observations"] = {{"lowest_avg_loss_at_10pct", fastest}, {"lowest_final_avg_loss", lowest}};
  json echo = json::array();
  for (const auto& [k, v] : cfg.echo) echo.push_back({k, v});
  summary["config"] = echo;

  std::ofstream out(out_dir / "summary.json");
  out << std::setw(2) << summary << '\n';
  if (!out) throw std::runtime_error("cannot write summary.json");
  return {std::move(summary), out_dir};
}

// ---------------------------------------------------------------------------
// Bound re-check from run artifacts

inline double recompute_bound(const std::string& id, const json& in) {
  BoundInputs b;
  auto get = [&](const char* k) { return in.at(k).get<double>(); };
  if (id == "1") {
    b.eta = get("eta"), b.B = get("B"), b.T = get("T"), b.kl_term = get("kl_term");
    return ewa_bound(b);
  }
  if (id == "2") {
    b.eta = get("eta"), b.L = get("L"), b.alpha = get("alpha"), b.T = get("T"), b.kl_term = get("kl_term");
    return sva_bound(b);
  }
  if (id == "3") {
    b.L = get("L"), b.T = get("T");
    if (in.at("variant") == "convex") {
      b.D = get("D");
      return svb_bounds(b).convex;
    }
    b.H = get("H");
    return svb_bounds(b).strongly_convex;
  }
  b.eta = get("eta"), b.L = get("L"), b.T = get("T"), b.kl_term = get("dist2");
  return ogael_bound(b);
}

// selector: "1".."4" or "all". Returns an exit code.
inline int check_bounds(const fs::path& run_dir, const std::string& selector, std::ostream& out,
                        std::ostream& err) {
  if (selector != "all" && selector != "1" && selector != "2" && selector != "3" && selector != "4") {
    err << "bounds: --theorem must be 1, 2, 3, 4 or all\n";
    return kExitConfig;
  }
  const fs::path summary_path = run_dir / "summary.json";
  if (!fs::exists(summary_path)) {
    err << "bounds: no summary.json in '" << run_dir.string() << "'\n";
    return kExitConfig;
  }
  if (!fs::exists(run_dir / "comparator.csv")) {
    err << "bounds: no comparator.csv in '" << run_dir.string() << "'; the comparator is required\n";
    return kExitConfig;
  }
  json summary;
  try {
    std::ifstream in(summary_path);
    summary = json::parse(in);
  } catch (const std::exception& e) {
    err << "bounds: unreadable summary.json: " << e.what() << '\n';
    return kExitConfig;
  }
  const auto comp_rows = read_series_csv(run_dir / "comparator.csv");
  if (comp_rows.empty()) {
    err << "bounds: empty comparator.csv\n";
    return kExitConfig;
  }
  std::size_t checked = 0;
  bool failed = false;
  for (const auto& [name, a] : summary.at("algorithms").items()) {
    if (!a.contains("bound_id")) continue;
    const std::string th = a.at("bound_id");
    if (selector != "all" && selector != th) continue;
    const auto rows = read_series_csv(run_dir / (name + ".csv"));
    if (rows.size() != comp_rows.size()) {
      err << "bounds: " << name << ".csv and comparator.csv differ in length\n";
      return kExitConfig;
    }
    double cmp = a.at("bound_comparator_cumulative").get<double>();
    if (a.at("bound_comparator") == "theta_star") cmp = comp_rows.back().cum;
    const double lhs = rows.back().cum - cmp;
    const double bound = recompute_bound(th, a.at("bound_inputs"));
    const bool det = a.at("bound_deterministic").get<bool>();
    const bool holds = lhs <= bound;
    out << "bound " << th << "  " << name << "  regret " << format_double(lhs) << "  bound "
        << format_double(bound) << "  slack_ratio " << format_double(lhs / bound) << "  "
        << (holds ? "holds" : (det ? "VIOLATED" : "violated (informational)")) << '\n';
    ++checked;
    if (det && !holds) failed = true;
  }
  if (checked == 0) {
    err << "bounds: no algorithm in this run has the constants for bound " << selector << '\n';
    return kExitConfig;
  }
  return failed ? kExitCheckFailed : kExitOk;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckReport {
  std::size_t comparisons = 0;
  double max_error = 0.0;  // relative error, or |z| for the Monte Carlo case
  double threshold = 0.0;
  bool passed = false;
};

// Upper-tail quantile of the standard normal, by bisection on erfc.
inline double normal_upper_quantile(double p) {
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (1.0 - standard_normal_cdf(mid) > p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Closed-form kinds: analytic gradient against central differences (step
// 1e-5), error |a - f| / max(|a|, |f|, 1e-2). The Monte Carlo kind: the
// estimator with one seed against central differences of the loss estimate
// with another seed (common random numbers within each difference). The
// difference is a z-score over the two standard errors; tol is a z level
// for the whole family of comparisons, Bonferroni-corrected.
inline GradcheckReport gradcheck(const LossKind& kind, std::size_t trials, double tol, std::uint64_t seed,
                                 std::size_t mc_samples = 100000) {
  if (trials == 0) throw ConfigError("gradcheck: trials must be >= 1");
  CounterRng rng(seed);
  GradcheckReport rep;
  const double h = 1e-5;
  struct Pending {
    double a, f, sa, sf;
  };
  std::vector<Pending> mc;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t d_in = kind.tag == LossTag::SquaredNN ? 2 : 1 + rng.below(5);
    const std::size_t d = kind.param_dim(d_in);
    Vector m(d), s(d);
    for (std::size_t j = 0; j < d; ++j) {
      m[j] = rng.normal();
      s[j] = rng.uniform(0.1, 1.5);
    }
    DataExample ex{Vector(d_in), 0.0};
    for (double& v : ex.x) v = rng.normal();
    ex.y = kind.tag == LossTag::Hinge ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : 2.0 * rng.normal();
    auto perturbed = [&](bool sigma, std::size_t j, double delta) {
      Vector mm = m, ss = s;
      (sigma ? ss : mm)[j] += delta;
      return MeanFieldGaussian(std::move(mm), std::move(ss));
    };
    const MeanFieldGaussian q(m, s);
    if (kind.has_closed_form()) {
      const auto g = expected_loss_grad(kind, q, ex);
      for (int part = 0; part < 2; ++part) {
        for (std::size_t j = 0; j < d; ++j) {
          const bool sig = part == 1;
          const double fd =
              (expected_loss(kind, perturbed(sig, j, h), ex) - expected_loss(kind, perturbed(sig, j, -h), ex)) / (2 * h);
          const double a = sig ? g.g_sigma[j] : g.g_m[j];
          const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
          rep.max_error = std::max(rep.max_error, err);
          ++rep.comparisons;
        }
      }
    } else {
      const std::uint64_t sa = derive_seed(seed, 2 * trial + 1), sb = derive_seed(seed, 2 * trial + 2);
      const auto est = mc_expected_loss_and_grad(kind, q, ex, mc_samples, sa);
      const auto ref = mc_expected_loss_and_grad(kind, q, ex, mc_samples, sb);
      for (int part = 0; part < 2; ++part) {
        for (std::size_t j = 0; j < d; ++j) {
          const bool sig = part == 1;
          const double fd = (mc_expected_loss_and_grad(kind, perturbed(sig, j, h), ex, mc_samples, sb).loss -
                             mc_expected_loss_and_grad(kind, perturbed(sig, j, -h), ex, mc_samples, sb).loss) /
                            (2 * h);
          const double a = sig ? est.grad.g_sigma[j] : est.grad.g_m[j];
          const double sea = sig ? est.grad_se.g_sigma[j] : est.grad_se.g_m[j];
          const double seb = sig ? ref.grad_se.g_sigma[j] : ref.grad_se.g_m[j];
          mc.push_back({a, fd, sea, seb});
        }
      }
    }
  }
  if (kind.has_closed_form()) {
    rep.threshold = tol;
  } else {
    rep.comparisons = mc.size();
    const double family_p = 2.0 * (1.0 - standard_normal_cdf(tol));
    rep.threshold = normal_upper_quantile(family_p / (2.0 * static_cast<double>(mc.size())));
    for (const auto& p : mc) {
      const double se = std::hypot(p.sa, p.sf);
      const double z = se > 0.0 ? std::abs(p.a - p.f) / se : (p.a == p.f ? 0.0 : 1e300);
      rep.max_error = std::max(rep.max_error, z);
    }
  }
  rep.passed = rep.max_error <= rep.threshold;
  return rep;
}

}  // namespace ovi
