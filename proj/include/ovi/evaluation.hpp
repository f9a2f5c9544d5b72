#pragma once

// Regret accounting, best fixed comparator in hindsight, regret-bound
// formulas and online-to-batch conversion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ovi/errors.hpp"
#include "ovi/family.hpp"
#include "ovi/learners.hpp"
#include "ovi/losses.hpp"
#include "ovi/rng.hpp"

namespace ovi {

struct RegretLedger {
  std::vector<double> instantaneous;
  std::vector<double> cumulative;
  std::vector<double> average;

  std::size_t horizon() const { return instantaneous.size(); }
  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

// Left-to-right running sums; the order is fixed so ledgers are reproducible.
inline RegretLedger build_ledger(std::span<const double> losses) {
  if (losses.empty()) throw DomainError("build_ledger: empty trace");
  RegretLedger ledger;
  ledger.instantaneous.assign(losses.begin(), losses.end());
  ledger.cumulative.resize(losses.size());
  ledger.average.resize(losses.size());
  double running = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i])) {
      throw DomainError("build_ledger: non-finite loss at step " + std::to_string(i + 1));
    }
    running += losses[i];
    ledger.cumulative[i] = running;
    ledger.average[i] = running / static_cast<double>(i + 1);
  }
  return ledger;
}

inline RegretLedger build_ledger(const Trace& trace) { return build_ledger(trace.losses()); }

inline double cumulative_loss(const LossKind& kind, std::span<const double> theta,
                              std::span<const DataExample> data) {
  double total = 0.0;
  for (const auto& ex : data) total += point_loss(kind, theta, ex);
  return total;
}

// Sum_t E_{theta ~ q}[loss_t(theta)] (closed-form kinds).
inline double expected_cumulative_loss(const LossKind& kind, const MeanFieldGaussian& q,
                                       std::span<const DataExample> data) {
  double total = 0.0;
  for (const auto& ex : data) total += expected_loss(kind, q, ex);
  return total;
}

struct ComparatorResult {
  Vector theta_star;
  double cumulative_loss_star = 0.0;
  std::size_t horizon = 0;
  std::size_t restarts = 0;
  double final_grad_norm = 0.0;
  std::string method;  // "psd" for convex losses, "local" otherwise
};

struct ComparatorOptions {
  std::size_t restarts = 20;
  std::size_t iterations = 2000;
  std::size_t refine_rounds = 3;  // extra passes from the incumbent with 20x smaller steps
  double step_fraction = 0.25;    // initial step as a fraction of the mean box width
  std::uint64_t seed = 0x5eed;
};

namespace detail {

struct ObjectiveValue {
  double value;
  Vector grad;
};

inline ObjectiveValue total_loss_and_subgradient(const LossKind& kind, std::span<const double> theta,
                                                 std::span<const DataExample> data) {
  ObjectiveValue out{0.0, Vector(theta.size(), 0.0)};
  for (const auto& ex : data) out.value += accumulate_point_loss_grad(kind, theta, ex, out.grad);
  return out;
}

inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace detail

// inf over the mean box of sum_t loss_t(theta), by normalized projected
// subgradient descent with step c / sqrt(k) from several starts. Exact
// minimization is not attempted; the result is an upper estimate of the
// infimum.
inline ComparatorResult best_in_hindsight(std::span<const DataExample> data, const LossKind& kind,
                                          const BoxConstraints& box, const ComparatorOptions& options = {}) {
  if (data.empty()) throw DomainError("best_in_hindsight: empty data");
  const std::size_t dim = kind.param_dim(data.front().x.size());
  const bool on_box = dim == box.dim();
  auto project = [&](Vector& th) {
    if (on_box) th = project_mean(th, box);
  };
  double width = 0.0;
  for (std::size_t j = 0; j < box.dim(); ++j) width += box.m_hi[j] - box.m_lo[j];
  width /= static_cast<double>(std::max<std::size_t>(1, box.dim()));
  if (!kind.convex()) width = std::min(width, 2.0);

  ComparatorResult best;
  best.cumulative_loss_star = std::numeric_limits<double>::infinity();
  best.horizon = data.size();
  best.method = kind.convex() ? "psd" : "local";

  auto descend = [&](Vector theta, double c) {
    project(theta);
    for (std::size_t k = 1; k <= options.iterations; ++k) {
      const auto obj = detail::total_loss_and_subgradient(kind, theta, data);
      const double gnorm = detail::norm2(obj.grad);
      if (obj.value < best.cumulative_loss_star) {
        best.cumulative_loss_star = obj.value;
        best.theta_star = theta;
        best.final_grad_norm = gnorm;
      }
      if (gnorm == 0.0) break;
      const double step = c / std::sqrt(static_cast<double>(k)) / gnorm;
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= step * obj.grad[j];
      project(theta);
    }
  };

  CounterRng rng(options.seed);
  const double c0 = options.step_fraction * width;
  for (std::size_t r = 0; r < options.restarts; ++r) {
    Vector start(dim, 0.0);
    if (r > 0) {
      for (std::size_t j = 0; j < dim; ++j) {
        start[j] = kind.convex() && on_box ? rng.uniform(box.m_lo[j], box.m_hi[j]) : 0.5 * rng.normal();
      }
    }
    descend(std::move(start), c0);
    ++best.restarts;
  }
  double c = c0;
  for (std::size_t round = 0; round < options.refine_rounds; ++round) {
    c *= 0.05;
    descend(best.theta_star, c);
  }
  return best;
}

inline double regret(const RegretLedger& ledger, const ComparatorResult& comparator) {
  if (comparator.horizon != 0 && comparator.horizon != ledger.horizon()) {
    throw DimensionError("regret: ledger and comparator horizons differ");
  }
  return ledger.total() - comparator.cumulative_loss_star;
}

// Constants entering the regret bounds; fields not used by a bound are ignored.
struct BoundInputs {
  double eta = 0.0;
  double B = 0.0;
  double L = 0.0;
  double H = 0.0;
  double alpha = 0.0;
  double D = 0.0;
  double T = 0.0;
  double kl_term = 0.0;  // KL(p, prior), log K for a point mass on a K-grid, or ||mu - mu_1||^2
};

namespace detail {

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(std::string("bound input ") + name + " must be positive");
}

inline void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError(std::string("bound input ") + name + " must be >= 0");
}

}  // namespace detail

// Exponentially weighted aggregation: eta B^2 T / 8 + KL / eta.
inline double ewa_bound(const BoundInputs& in) {
  detail::require_positive(in.eta, "eta");
  detail::require_positive(in.B, "B");
  detail::require_positive(in.T, "T");
  detail::require_nonnegative(in.kl_term, "kl_term");
  return in.eta * in.B * in.B * in.T / 8.0 + in.kl_term / in.eta;
}

inline double ewa_optimal_eta(double B, double T, double kl) { return std::sqrt(8.0 * kl / (B * B * T)); }

// SVA: eta L^2 T / alpha + KL(q, prior) / eta.
inline double sva_bound(const BoundInputs& in) {
  detail::require_positive(in.eta, "eta");
  detail::require_positive(in.L, "L");
  detail::require_positive(in.alpha, "alpha");
  detail::require_positive(in.T, "T");
  detail::require_nonnegative(in.kl_term, "kl_term");
  return in.eta * in.L * in.L * in.T / in.alpha + in.kl_term / in.eta;
}

struct SvbBounds {
  double convex = 0.0;           // D L sqrt(2T)
  double strongly_convex = 0.0;  // L^2 (1 + log T) / H; NaN when H is not given
};

inline SvbBounds svb_bounds(const BoundInputs& in) {
  detail::require_positive(in.D, "D");
  detail::require_positive(in.L, "L");
  detail::require_positive(in.T, "T");
  SvbBounds out;
  out.convex = in.D * in.L * std::sqrt(2.0 * in.T);
  out.strongly_convex = in.H > 0.0 ? in.L * in.L * (1.0 + std::log(in.T)) / in.H
                                   : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// OGA-EL: eta L^2 T + ||mu - mu_1||^2 / eta  (kl_term holds the squared distance).
inline double ogael_bound(const BoundInputs& in) {
  detail::require_positive(in.eta, "eta");
  detail::require_positive(in.L, "L");
  detail::require_positive(in.T, "T");
  detail::require_nonnegative(in.kl_term, "kl_term");
  return in.eta * in.L * in.L * in.T + in.kl_term / in.eta;
}

// OGA-EL, KL form: eta L^2 T + alpha KL(q, prior) / (2 eta).
inline double ogael_kl_bound(const BoundInputs& in) {
  detail::require_positive(in.eta, "eta");
  detail::require_positive(in.L, "L");
  detail::require_positive(in.T, "T");
  detail::require_positive(in.alpha, "alpha");
  detail::require_nonnegative(in.kl_term, "kl_term");
  return in.eta * in.L * in.L * in.T + in.alpha * in.kl_term / (2.0 * in.eta);
}

// D with D^2 = sup ||m - m'||^2 + ||sigma||^2 over the box.
inline double box_diameter(const BoxConstraints& box) {
  double d2 = 0.0;
  for (std::size_t j = 0; j < box.dim(); ++j) {
    const double w = box.m_hi[j] - box.m_lo[j];
    d2 += w * w + box.sigma_hi[j] * box.sigma_hi[j];
  }
  return std::sqrt(d2);
}

// ||mu - mu'||^2 for mu = (m, sigma).
inline double squared_distance(const MeanFieldGaussian& a, const MeanFieldGaussian& b) {
  require_same_dim(a.dim(), b.dim(), "squared_distance");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    const double dm = a.mean()[j] - b.mean()[j];
    const double ds = a.sigma()[j] - b.sigma()[j];
    acc += dm * dm + ds * ds;
  }
  return acc;
}

// Largest loss any expert suffers on the data (the bounded-loss constant B).
inline double max_expert_loss(const LossKind& kind, std::span<const Vector> experts,
                              std::span<const DataExample> data) {
  double top = 0.0;
  for (const auto& th : experts) {
    for (const auto& ex : data) top = std::max(top, point_loss(kind, th, ex));
  }
  return top;
}

// Averaged decision theta_bar_T = (1/T) sum_t theta_hat_t.
inline Vector online_to_batch(const Trace& trace) {
  if (trace.steps.empty()) throw DomainError("online_to_batch: empty trace");
  Vector avg(trace.steps.front().prediction.size(), 0.0);
  for (const auto& s : trace.steps) {
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += s.prediction[j];
  }
  for (double& v : avg) v /= static_cast<double>(trace.steps.size());
  return avg;
}

// theta_bar_t for every t.
inline std::vector<Vector> averaged_path(const Trace& trace) {
  std::vector<Vector> path;
  path.reserve(trace.steps.size());
  Vector running(trace.steps.empty() ? 0 : trace.steps.front().prediction.size(), 0.0);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    Vector avg(running.size());
    for (std::size_t j = 0; j < running.size(); ++j) {
      running[j] += trace.steps[i].prediction[j];
      avg[j] = running[j] / static_cast<double>(i + 1);
    }
    path.push_back(std::move(avg));
  }
  return path;
}

struct RiskEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

// Holdout estimate of the generalization error of a fixed decision.
inline RiskEstimate generalization_estimate(std::span<const double> theta, std::span<const DataExample> holdout,
                                            const LossKind& kind) {
  if (holdout.empty()) throw DomainError("generalization_estimate: empty holdout");
  // Welford: identical losses give exactly zero spread.
  double mean = 0.0, m2 = 0.0;
  std::size_t k = 0;
  for (const auto& ex : holdout) {
    const double l = point_loss(kind, theta, ex);
    ++k;
    const double delta = l - mean;
    mean += delta / static_cast<double>(k);
    m2 += delta * (l - mean);
  }
  if (k < 2) return {mean, 0.0};
  const double n = static_cast<double>(k);
  return {mean, std::sqrt(m2 / (n - 1.0) / n)};
}

struct AlphaEstimate {
  double value = 0.0;
  std::size_t grid_points = 0;
  bool empirical = true;
};

// Smallest Hessian eigenvalue of mu -> KL(q_mu, prior) over a grid on the box,
// with mu = (m, sigma). The KL to an isotropic prior is a sum of per-coordinate
// terms, so the Hessian is block diagonal with one 2x2 block per coordinate;
// each block is evaluated by central differences on a resolution x resolution
// grid over (m_j, sigma_j).
inline AlphaEstimate alpha_estimate(const GaussianPrior& prior, const BoxConstraints& box,
                                    std::size_t resolution) {
  if (!(prior.s > 0.0)) throw DomainError("alpha_estimate: prior s must be positive");
  if (resolution < 2) throw DomainError("alpha_estimate: resolution must be >= 2");
  box.validate();
  const MeanFieldGaussian unit_prior({0.0}, {prior.s});
  auto kl1 = [&](double m, double s) { return kl_divergence(MeanFieldGaussian({m}, {s}), unit_prior); };
  AlphaEstimate est;
  est.value = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < box.dim(); ++j) {
    if (!(box.sigma_lo[j] > 0.0)) throw DomainError("alpha_estimate: sigma grid touches 0");
    for (std::size_t a = 0; a < resolution; ++a) {
      const double m = box.m_lo[j] + (box.m_hi[j] - box.m_lo[j]) * static_cast<double>(a) /
                                         static_cast<double>(resolution - 1);
      for (std::size_t b = 0; b < resolution; ++b) {
        const double s = box.sigma_lo[j] + (box.sigma_hi[j] - box.sigma_lo[j]) * static_cast<double>(b) /
                                               static_cast<double>(resolution - 1);
        const double hm = 1e-4 * std::max(1.0, std::abs(m));
        const double hs = 1e-4 * s;
        const double f0 = kl1(m, s);
        const double fmm = (kl1(m + hm, s) - 2.0 * f0 + kl1(m - hm, s)) / (hm * hm);
        const double fss = (kl1(m, s + hs) - 2.0 * f0 + kl1(m, s - hs)) / (hs * hs);
        const double fms = (kl1(m + hm, s + hs) - kl1(m + hm, s - hs) - kl1(m - hm, s + hs) +
                            kl1(m - hm, s - hs)) / (4.0 * hm * hs);
        // det / lambda_max avoids cancellation when 1/sigma^2 dwarfs 1/s^2.
        const double lambda_max = 0.5 * (fmm + fss) + std::hypot(0.5 * (fmm - fss), fms);
        const double det = fmm * fss - fms * fms;
        est.value = std::min(est.value, lambda_max > 0.0 ? det / lambda_max : lambda_max);
        ++est.grid_points;
      }
    }
  }
  return est;
}

}  // namespace ovi
