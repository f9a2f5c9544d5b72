#pragma once

// Online update rules behind a single predict / observe / update loop:
// SVA, SVB, NGVI, OGA, OGA-EL and exponentially weighted aggregation over a
// finite expert grid.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovi/errors.hpp"
#include "ovi/family.hpp"
#include "ovi/losses.hpp"
#include "ovi/rng.hpp"

namespace ovi {

enum class Algorithm { SVA, SVB, NGVI, OGA, OGAEL, EWAGrid };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::SVA: return "SVA";
    case Algorithm::SVB: return "SVB";
    case Algorithm::NGVI: return "NGVI";
    case Algorithm::OGA: return "OGA";
    case Algorithm::OGAEL: return "OGAEL";
    case Algorithm::EWAGrid: return "EWAGrid";
  }
  return "?";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "sva") return Algorithm::SVA;
  if (key == "svb") return Algorithm::SVB;
  if (key == "ngvi") return Algorithm::NGVI;
  if (key == "oga") return Algorithm::OGA;
  if (key == "ogael") return Algorithm::OGAEL;
  if (key == "ewagrid" || key == "ewa") return Algorithm::EWAGrid;
  return std::nullopt;
}

// Learning-rate schedule. Constant is a scalar rate; the others are
// per-coordinate and depend on the current sigma_{t,j}:
//   InvSigma2SqrtT        1 / (sigma^2 sqrt(t))
//   SvbConvex  D sqrt(2) / (L sqrt(t) sigma^2)
//   SvbStrong  2 / (H t sigma^2)
enum class ScheduleKind { Constant, InvSigma2SqrtT, SvbConvex, SvbStrong };

struct StepSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double value = 0.0;
  double D = 0.0;
  double L = 0.0;
  double H = 0.0;

  static StepSchedule constant(double eta) { return {ScheduleKind::Constant, eta}; }
  static StepSchedule inv_sigma2_sqrt_t() { return {ScheduleKind::InvSigma2SqrtT}; }
  static StepSchedule svb_convex(double D, double L) {
    return {ScheduleKind::SvbConvex, 0.0, D, L};
  }
  static StepSchedule svb_strong(double H) { return {ScheduleKind::SvbStrong, 0.0, 0.0, 0.0, H}; }

  bool per_coordinate() const { return kind != ScheduleKind::Constant; }

  // t is the 1-based step index.
  double at(std::size_t t, double sigma = 1.0) const {
    const double tt = static_cast<double>(t);
    const double var = sigma * sigma;
    switch (kind) {
      case ScheduleKind::Constant: return value;
      case ScheduleKind::InvSigma2SqrtT: return 1.0 / (var * std::sqrt(tt));
      case ScheduleKind::SvbConvex: return D * std::sqrt(2.0) / (L * std::sqrt(tt) * var);
      case ScheduleKind::SvbStrong: return 2.0 / (H * tt * var);
    }
    return value;
  }

  std::string describe() const {
    switch (kind) {
      case ScheduleKind::Constant: {
        char buf[48];
        std::snprintf(buf, sizeof buf, "constant(%.17g)", value);
        return buf;
      }
      case ScheduleKind::InvSigma2SqrtT: return "inv_sigma2_sqrt_t";
      case ScheduleKind::SvbConvex: return "svb_convex";
      case ScheduleKind::SvbStrong: return "svb_strong";
    }
    return "?";
  }
};

inline double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

// Tempered posterior over a finite expert set, kept as normalized log weights.
struct EwaGrid {
  std::shared_ptr<const std::vector<Vector>> experts;
  Vector log_weights;
  double eta = 0.0;

  static EwaGrid uniform(std::vector<Vector> thetas, double eta) {
    if (thetas.empty()) throw DomainError("EwaGrid: empty expert set");
    const std::size_t d = thetas.front().size();
    for (const auto& th : thetas) require_same_dim(th.size(), d, "EwaGrid");
    const double w0 = -std::log(static_cast<double>(thetas.size()));
    EwaGrid grid;
    grid.log_weights.assign(thetas.size(), w0);
    grid.experts = std::make_shared<const std::vector<Vector>>(std::move(thetas));
    grid.eta = eta;
    return grid;
  }

  std::size_t size() const { return log_weights.size(); }
  std::size_t dim() const { return experts->front().size(); }

  Vector weights() const {
    Vector w(log_weights.size());
    std::transform(log_weights.begin(), log_weights.end(), w.begin(), [](double l) { return std::exp(l); });
    return w;
  }

  // Posterior mean sum_k w_k theta_k.
  Vector mean() const {
    Vector out(dim(), 0.0);
    for (std::size_t k = 0; k < size(); ++k) {
      const double w = std::exp(log_weights[k]);
      const auto& th = (*experts)[k];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += w * th[j];
    }
    return out;
  }
};

// Uniform lattice with `resolution` points per axis over the mean box.
inline std::vector<Vector> lattice_experts(const BoxConstraints& box, std::size_t resolution) {
  if (resolution == 0) throw DomainError("lattice_experts: resolution must be >= 1");
  const std::size_t d = box.dim();
  std::size_t count = 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (count > 50'000'000 / resolution) throw DomainError("lattice_experts: grid too large");
    count *= resolution;
  }
  auto coord = [&](std::size_t j, std::size_t i) {
    if (resolution == 1) return 0.5 * (box.m_lo[j] + box.m_hi[j]);
    return box.m_lo[j] + (box.m_hi[j] - box.m_lo[j]) * static_cast<double>(i) /
                             static_cast<double>(resolution - 1);
  };
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t flat = 0; flat < count; ++flat) {
    Vector th(d);
    std::size_t rest = flat;
    for (std::size_t j = d; j-- > 0;) {
      th[j] = coord(j, rest % resolution);
      rest /= resolution;
    }
    out.push_back(std::move(th));
  }
  return out;
}

inline EwaGrid ewa_grid_update(const EwaGrid& grid, std::span<const double> losses) {
  require_same_dim(losses.size(), grid.size(), "ewa_grid_update");
  EwaGrid next = grid;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    if (!std::isfinite(losses[k])) throw DomainError("ewa_grid_update: non-finite loss");
    next.log_weights[k] -= grid.eta * losses[k];
  }
  const double norm = logsumexp(next.log_weights);
  for (double& l : next.log_weights) l -= norm;
  return next;
}

struct LearnerConfig {
  Algorithm algorithm = Algorithm::SVA;
  StepSchedule eta = StepSchedule::constant(0.01);
  std::optional<double> alpha;  // NGVI only
  GaussianPrior prior;
  std::optional<BoxConstraints> box;
  bool project_sva = true;  // false reproduces the unprojected SVA update
  std::size_t mc_samples = 32;
  std::size_t ngvi_max_retries = 10;
  std::vector<Vector> experts;      // EWAGrid: explicit experts, or
  std::size_t grid_resolution = 0;  // EWAGrid: lattice points per axis over the mean box

  void validate() const {
    const std::string who = algorithm_name(algorithm);
    if (!(prior.s > 0.0)) throw ConfigError(who + ": prior s must be positive");
    if (box) box->validate();
    if (eta.per_coordinate() && algorithm != Algorithm::SVB) {
      throw ConfigError(who + ": sigma-dependent schedules apply to SVB only");
    }
    switch (eta.kind) {
      case ScheduleKind::Constant:
        if (!(eta.value > 0.0) || !std::isfinite(eta.value)) throw ConfigError(who + ": eta must be positive");
        break;
      case ScheduleKind::SvbConvex:
        if (!(eta.D > 0.0 && eta.L > 0.0)) throw ConfigError(who + ": svb_convex needs D, L > 0");
        break;
      case ScheduleKind::SvbStrong:
        if (!(eta.H > 0.0)) throw ConfigError(who + ": svb_strong needs H > 0");
        break;
      case ScheduleKind::InvSigma2SqrtT: break;
    }
    if (algorithm == Algorithm::NGVI) {
      if (!alpha || !(*alpha > 0.0)) throw ConfigError(who + ": alpha must be set and positive");
    } else if (alpha) {
      throw ConfigError(who + ": alpha applies to NGVI only");
    }
    if (algorithm == Algorithm::EWAGrid) {
      if (experts.empty() && (grid_resolution == 0 || !box)) {
        throw ConfigError(who + ": needs explicit experts or grid_resolution with a box");
      }
    } else if (!experts.empty() || grid_resolution != 0) {
      throw ConfigError(who + ": expert grid applies to EWAGrid only");
    }
    if (mc_samples == 0) throw ConfigError(who + ": mc_samples must be >= 1");
  }
};

struct LearnerState {
  Algorithm algorithm = Algorithm::SVA;
  std::size_t t = 0;  // completed updates
  MeanFieldGaussian q;
  Vector accum_g_sigma;  // SVA running sum of sigma-gradients
  NaturalParams lambda;  // NGVI
  NaturalParams lambda_prior;
  Vector theta;  // OGA
  std::optional<EwaGrid> grid;
  double last_eta_scale = 1.0;  // NGVI step-halving factor applied in the last update
  std::size_t last_retries = 0;
};

inline LearnerState init_state(const LearnerConfig& config, std::size_t dim) {
  config.validate();
  GaussianPrior prior = config.prior;
  prior.d = dim;
  if (config.box) require_same_dim(config.box->dim(), dim, "init_state box");
  LearnerState state;
  state.algorithm = config.algorithm;
  state.q = prior.distribution();
  state.accum_g_sigma.assign(dim, 0.0);
  state.theta.assign(dim, 0.0);
  if (config.algorithm == Algorithm::NGVI) {
    state.lambda = to_natural(state.q);
    state.lambda_prior = state.lambda;
  }
  if (config.algorithm == Algorithm::EWAGrid) {
    auto experts = config.experts.empty() ? lattice_experts(*config.box, config.grid_resolution)
                                          : config.experts;
    for (const auto& e : experts) require_same_dim(e.size(), dim, "init_state experts");
    state.grid = EwaGrid::uniform(std::move(experts), config.eta.value);
  }
  return state;
}

inline Vector predict(const LearnerState& state) {
  switch (state.algorithm) {
    case Algorithm::OGA: return state.theta;
    case Algorithm::EWAGrid: return state.grid->mean();
    default: return posterior_mean(state.q);
  }
}

namespace detail {

inline double floor_sigma(double s) { return std::max(s, kSigmaFloor); }

inline void check_grad(const ExpectedLossGradient& g, std::size_t d) {
  require_same_dim(g.g_m.size(), d, "gradient g_m");
  require_same_dim(g.g_sigma.size(), d, "gradient g_sigma");
}

}  // namespace detail

// m <- m - eta s^2 g_m;  G <- G + g_sigma;  sigma <- s h(eta s G / 2).
inline LearnerState sva_update(LearnerState state, const ExpectedLossGradient& grad,
                               const LearnerConfig& config) {
  const std::size_t d = state.q.dim();
  detail::check_grad(grad, d);
  const double eta = config.eta.at(state.t + 1);
  const double s = config.prior.s;
  Vector m = state.q.mean();
  Vector sigma(d);
  for (std::size_t j = 0; j < d; ++j) {
    m[j] -= eta * s * s * grad.g_m[j];
    state.accum_g_sigma[j] += grad.g_sigma[j];
    sigma[j] = detail::floor_sigma(h_map(0.5 * eta * s * state.accum_g_sigma[j]) * s);
  }
  state.q = MeanFieldGaussian(std::move(m), std::move(sigma));
  if (config.box && config.project_sva) state.q = project_box(state.q, *config.box);
  ++state.t;
  return state;
}

// m <- Pi[m - eta_j sigma^2 g_m];  sigma <- Pi[sigma h(eta_j sigma g_sigma / 2)].
inline LearnerState svb_update(LearnerState state, const ExpectedLossGradient& grad,
                               const LearnerConfig& config) {
  const std::size_t d = state.q.dim();
  detail::check_grad(grad, d);
  const std::size_t t = state.t + 1;
  Vector m = state.q.mean();
  Vector sigma = state.q.sigma();
  for (std::size_t j = 0; j < d; ++j) {
    const double sj = sigma[j];
    const double eta = config.eta.at(t, sj);
    m[j] -= eta * sj * sj * grad.g_m[j];
    sigma[j] = detail::floor_sigma(sj * h_map(0.5 * eta * sj * grad.g_sigma[j]));
  }
  state.q = MeanFieldGaussian(std::move(m), std::move(sigma));
  if (config.box) state.q = project_box(state.q, *config.box);
  state.t = t;
  return state;
}

// Gradient of the expected loss in expectation coordinates
// (mu1, mu2) = (m, m^2 + sigma^2).
struct ExpectationGradient {
  Vector d_mu1;
  Vector d_mu2;
};

inline ExpectationGradient grad_to_expectation_coords(const ExpectedLossGradient& grad,
                                                      const MeanFieldGaussian& q) {
  const std::size_t d = q.dim();
  detail::check_grad(grad, d);
  ExpectationGradient out{Vector(d), Vector(d)};
  for (std::size_t j = 0; j < d; ++j) {
    const double s = q.sigma()[j];
    if (!(s > 0.0)) throw DomainError("grad_to_expectation_coords: sigma must be positive");
    const double g_var = grad.g_sigma[j] / (2.0 * s);
    out.d_mu1[j] = grad.g_m[j] - 2.0 * q.mean()[j] * g_var;
    out.d_mu2[j] = g_var;
  }
  return out;
}

inline double ngvi_beta(double alpha, double eta) { return 1.0 / (1.0 / alpha + 1.0 / eta); }

// lambda <- (1 - beta) lambda + beta lambda_1 - eta beta grad, 1/beta = 1/alpha + 1/eta.
// A step that leaves the family (lambda2 >= 0) is retried with eta halved, up
// to config.ngvi_max_retries times.
inline LearnerState ngvi_update(LearnerState state, const ExpectationGradient& grad,
                                const LearnerConfig& config) {
  const std::size_t d = state.lambda.lambda1.size();
  require_same_dim(grad.d_mu1.size(), d, "ngvi_update");
  require_same_dim(grad.d_mu2.size(), d, "ngvi_update");
  const double alpha = *config.alpha;
  const double eta0 = config.eta.at(state.t + 1);
  double scale = 1.0;
  for (std::size_t attempt = 0; attempt <= config.ngvi_max_retries; ++attempt, scale *= 0.5) {
    const double eta = eta0 * scale;
    const double beta = ngvi_beta(alpha, eta);
    NaturalParams next{Vector(d), Vector(d)};
    bool valid = true;
    for (std::size_t j = 0; j < d; ++j) {
      next.lambda1[j] = (1.0 - beta) * state.lambda.lambda1[j] + beta * state.lambda_prior.lambda1[j] -
                        eta * beta * grad.d_mu1[j];
      next.lambda2[j] = (1.0 - beta) * state.lambda.lambda2[j] + beta * state.lambda_prior.lambda2[j] -
                        eta * beta * grad.d_mu2[j];
      valid = valid && next.lambda2[j] < 0.0 && std::isfinite(next.lambda1[j]);
    }
    if (!valid) continue;
    state.q = from_natural(next);
    state.lambda = std::move(next);
    state.last_eta_scale = scale;
    state.last_retries = attempt;
    ++state.t;
    return state;
  }
  throw InvalidPrecisionError("NGVI step left the Gaussian family after " +
                              std::to_string(config.ngvi_max_retries) + " step halvings");
}

// Projected online gradient step on the point parameter.
inline LearnerState oga_update(LearnerState state, std::span<const double> point_grad,
                               const LearnerConfig& config) {
  require_same_dim(point_grad.size(), state.theta.size(), "oga_update");
  const double eta = config.eta.at(state.t + 1);
  for (std::size_t j = 0; j < state.theta.size(); ++j) state.theta[j] -= eta * point_grad[j];
  if (config.box) state.theta = project_mean(state.theta, *config.box);
  ++state.t;
  return state;
}

// Online gradient step on the expected loss in (m, sigma), then projection.
inline LearnerState ogael_update(LearnerState state, const ExpectedLossGradient& grad,
                                 const LearnerConfig& config) {
  const std::size_t d = state.q.dim();
  detail::check_grad(grad, d);
  const double eta = config.eta.at(state.t + 1);
  Vector m = state.q.mean();
  Vector sigma = state.q.sigma();
  for (std::size_t j = 0; j < d; ++j) {
    m[j] -= eta * grad.g_m[j];
    sigma[j] = detail::floor_sigma(sigma[j] - eta * grad.g_sigma[j]);
  }
  state.q = MeanFieldGaussian(std::move(m), std::move(sigma));
  if (config.box) state.q = project_box(state.q, *config.box);
  ++state.t;
  return state;
}

// Expected-loss gradient for the learner's current q: closed form when the
// loss has one, otherwise Monte Carlo with config.mc_samples draws.
inline ExpectedLossGradient variational_gradient(const LossKind& kind, const MeanFieldGaussian& q,
                                                 const DataExample& ex, const LearnerConfig& config,
                                                 std::uint64_t step_seed) {
  if (kind.has_closed_form()) return expected_loss_grad(kind, q, ex);
  return mc_expected_loss_and_grad(kind, q, ex, config.mc_samples, step_seed).grad;
}

// Observe one example and advance the learner.
inline LearnerState observe(LearnerState state, const LossKind& kind, const DataExample& ex,
                            const LearnerConfig& config, std::uint64_t step_seed) {
  switch (state.algorithm) {
    case Algorithm::SVA: {
      const auto g = variational_gradient(kind, state.q, ex, config, step_seed);
      return sva_update(std::move(state), g, config);
    }
    case Algorithm::SVB: {
      const auto g = variational_gradient(kind, state.q, ex, config, step_seed);
      return svb_update(std::move(state), g, config);
    }
    case Algorithm::OGAEL: {
      const auto g = variational_gradient(kind, state.q, ex, config, step_seed);
      return ogael_update(std::move(state), g, config);
    }
    case Algorithm::NGVI: {
      const auto g = variational_gradient(kind, state.q, ex, config, step_seed);
      const auto g_exp = grad_to_expectation_coords(g, state.q);
      return ngvi_update(std::move(state), g_exp, config);
    }
    case Algorithm::OGA: {
      const Vector g = point_loss_grad(kind, state.theta, ex);
      return oga_update(std::move(state), g, config);
    }
    case Algorithm::EWAGrid: {
      const auto& experts = *state.grid->experts;
      Vector losses(experts.size());
      for (std::size_t k = 0; k < experts.size(); ++k) losses[k] = point_loss(kind, experts[k], ex);
      state.grid = ewa_grid_update(*state.grid, losses);
      ++state.t;
      return state;
    }
  }
  return state;
}

struct StepRecord {
  std::size_t t = 0;  // 1-based
  Vector prediction;
  double loss = 0.0;
  double eta_scale = 1.0;
  std::size_t retries = 0;
  bool outside_box = false;
};

struct Trace {
  Algorithm algorithm = Algorithm::SVA;
  std::vector<StepRecord> steps;
  // State after each update (grid weights dropped); filled when requested.
  std::vector<LearnerState> snapshots;
  LearnerState final_state;

  std::vector<double> losses() const {
    std::vector<double> out(steps.size());
    std::transform(steps.begin(), steps.end(), out.begin(), [](const StepRecord& s) { return s.loss; });
    return out;
  }
};

struct RunOptions {
  std::uint64_t seed = 0;
  std::size_t horizon = 0;  // 0: whole stream
  bool keep_snapshots = false;
};

// Per-step seed shared by every algorithm in a run (common random numbers).
inline std::uint64_t step_seed(std::uint64_t run_seed, std::size_t t) { return derive_seed(run_seed, t); }

inline Trace run_online(const LearnerConfig& config, std::span<const DataExample> stream,
                        const LossKind& kind, const RunOptions& options = {}) {
  const std::size_t T = options.horizon == 0 ? stream.size() : std::min(options.horizon, stream.size());
  Trace trace;
  trace.algorithm = config.algorithm;
  if (T == 0) return trace;
  const std::size_t dim = kind.param_dim(stream.front().x.size());
  LearnerState state = init_state(config, dim);
  trace.steps.reserve(T);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = i + 1;
    const DataExample& ex = stream[i];
    StepRecord rec;
    rec.t = t;
    try {
      rec.prediction = predict(state);
      rec.loss = point_loss(kind, rec.prediction, ex);
      state = observe(std::move(state), kind, ex, config, step_seed(options.seed, t));
    } catch (const StepError&) {
      throw;
    } catch (const std::exception& e) {
      throw StepError(t, e.what());
    }
    rec.eta_scale = state.last_eta_scale;
    rec.retries = state.last_retries;
    if (config.box && state.algorithm != Algorithm::OGA && state.algorithm != Algorithm::EWAGrid) {
      rec.outside_box = !config.box->contains(state.q);
    }
    trace.steps.push_back(std::move(rec));
    if (options.keep_snapshots) {
      LearnerState snap = state;
      snap.grid.reset();
      trace.snapshots.push_back(std::move(snap));
    }
  }
  trace.final_state = std::move(state);
  return trace;
}

}  // namespace ovi
