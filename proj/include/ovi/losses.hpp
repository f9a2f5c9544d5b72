#pragma once

// Point losses, their expectations under a mean-field Gaussian, and the
// expected-loss gradients (closed form for the convex losses, reparameterized
// Monte Carlo otherwise).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "ovi/errors.hpp"
#include "ovi/family.hpp"
#include "ovi/rng.hpp"

namespace ovi {

enum class LossTag { Hinge, SquaredLinear, SquaredNN };

struct LossKind {
  LossTag tag = LossTag::Hinge;
  std::size_t hidden_width = 0;  // SquaredNN only

  static LossKind hinge() { return {LossTag::Hinge, 0}; }
  static LossKind squared_linear() { return {LossTag::SquaredLinear, 0}; }
  static LossKind squared_nn(std::size_t width) {
    if (width == 0) throw DomainError("squared_nn: hidden_width must be positive");
    return {LossTag::SquaredNN, width};
  }

  bool convex() const { return tag != LossTag::SquaredNN; }
  bool has_closed_form() const { return tag != LossTag::SquaredNN; }

  // Parameter dimension for inputs of dimension d_in. The network packs
  // W1 (width x d_in, row-major), b1 (width), w2 (width), b2 (1).
  std::size_t param_dim(std::size_t d_in) const {
    return tag == LossTag::SquaredNN ? hidden_width * (d_in + 2) + 1 : d_in;
  }

  std::string name() const {
    switch (tag) {
      case LossTag::Hinge: return "hinge";
      case LossTag::SquaredLinear: return "squared_linear";
      case LossTag::SquaredNN: return "squared_nn";
    }
    return "?";
  }

  friend bool operator==(const LossKind&, const LossKind&) = default;
};

inline LossKind parse_loss_kind(std::string_view text, std::size_t hidden_width = 16) {
  if (text == "hinge") return LossKind::hinge();
  if (text == "squared_linear" || text == "squared-linear" || text == "squared") {
    return LossKind::squared_linear();
  }
  if (text == "squared_nn" || text == "squared-nn" || text == "nn") {
    return LossKind::squared_nn(hidden_width);
  }
  throw ConfigError("unknown loss kind '" + std::string(text) + "'");
}

struct DataExample {
  Vector x;
  double y = 0.0;
};

struct ExpectedLossGradient {
  Vector g_m;
  Vector g_sigma;

  static ExpectedLossGradient zeros(std::size_t d) { return {Vector(d, 0.0), Vector(d, 0.0)}; }
};

inline double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

inline void check_dims(const LossKind& kind, std::size_t theta_dim, const DataExample& ex) {
  if (kind.param_dim(ex.x.size()) != theta_dim) {
    throw DimensionError("loss '" + kind.name() + "': parameter dimension " +
                         std::to_string(theta_dim) + " does not match input dimension " +
                         std::to_string(ex.x.size()));
  }
}

struct NetworkPass {
  double output = 0.0;
  Vector pre;  // hidden pre-activations
};

inline NetworkPass network_forward(std::size_t width, std::span<const double> theta,
                                   std::span<const double> x) {
  const std::size_t d_in = x.size();
  const double* w1 = theta.data();
  const double* b1 = w1 + width * d_in;
  const double* w2 = b1 + width;
  const double b2 = w2[width];
  NetworkPass pass{b2, Vector(width)};
  for (std::size_t k = 0; k < width; ++k) {
    double a = b1[k];
    for (std::size_t i = 0; i < d_in; ++i) a += w1[k * d_in + i] * x[i];
    pass.pre[k] = a;
    if (a > 0.0) pass.output += w2[k] * a;
  }
  return pass;
}

}  // namespace detail

// One-hidden-layer ReLU network f(x) = w2' relu(W1 x + b1) + b2.
inline double network_output(std::size_t width, std::span<const double> theta,
                             std::span<const double> x) {
  return detail::network_forward(width, theta, x).output;
}

inline double point_loss(const LossKind& kind, std::span<const double> theta, const DataExample& ex) {
  detail::check_dims(kind, theta.size(), ex);
  switch (kind.tag) {
    case LossTag::Hinge:
      return std::max(0.0, 1.0 - ex.y * detail::dot(theta, ex.x));
    case LossTag::SquaredLinear: {
      const double r = ex.y - detail::dot(theta, ex.x);
      return r * r;
    }
    case LossTag::SquaredNN: {
      const double r = ex.y - network_output(kind.hidden_width, theta, ex.x);
      return r * r;
    }
  }
  return 0.0;
}

// A (sub)gradient of the point loss. Hinge uses 1{margin < 1}; ReLU uses
// derivative 0 at exactly 0.
inline Vector point_loss_grad(const LossKind& kind, std::span<const double> theta,
                              const DataExample& ex) {
  detail::check_dims(kind, theta.size(), ex);
  Vector g(theta.size(), 0.0);
  switch (kind.tag) {
    case LossTag::Hinge: {
      if (1.0 - ex.y * detail::dot(theta, ex.x) > 0.0) {
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = -ex.y * ex.x[j];
      }
      break;
    }
    case LossTag::SquaredLinear: {
      const double r = ex.y - detail::dot(theta, ex.x);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = -2.0 * r * ex.x[j];
      break;
    }
    case LossTag::SquaredNN: {
      const std::size_t width = kind.hidden_width;
      const std::size_t d_in = ex.x.size();
      const auto pass = detail::network_forward(width, theta, ex.x);
      const double dout = -2.0 * (ex.y - pass.output);
      const double* w2 = theta.data() + width * d_in + width;
      double* gw1 = g.data();
      double* gb1 = gw1 + width * d_in;
      double* gw2 = gb1 + width;
      for (std::size_t k = 0; k < width; ++k) {
        if (pass.pre[k] > 0.0) {
          gw2[k] = dout * pass.pre[k];
          const double dpre = dout * w2[k];
          gb1[k] = dpre;
          for (std::size_t i = 0; i < d_in; ++i) gw1[k * d_in + i] = dpre * ex.x[i];
        }
      }
      g.back() = dout;
      break;
    }
  }
  return g;
}

// Adds a (sub)gradient of the point loss into grad_acc and returns the loss.
// Allocation-free for the linear kinds.
inline double accumulate_point_loss_grad(const LossKind& kind, std::span<const double> theta,
                                         const DataExample& ex, std::span<double> grad_acc) {
  if (kind.tag == LossTag::SquaredNN) {
    const Vector g = point_loss_grad(kind, theta, ex);
    for (std::size_t j = 0; j < g.size(); ++j) grad_acc[j] += g[j];
    return point_loss(kind, theta, ex);
  }
  detail::check_dims(kind, theta.size(), ex);
  const double score = detail::dot(theta, ex.x);
  if (kind.tag == LossTag::Hinge) {
    const double slack = 1.0 - ex.y * score;
    if (slack <= 0.0) return 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) grad_acc[j] -= ex.y * ex.x[j];
    return slack;
  }
  const double r = ex.y - score;
  for (std::size_t j = 0; j < theta.size(); ++j) grad_acc[j] -= 2.0 * r * ex.x[j];
  return r * r;
}

namespace detail {

// Margin slack z = 1 - y theta'x is N(mu_z, s_z^2) under q.
struct HingeMargin {
  double mu_z;
  double s_z;
};

inline HingeMargin hinge_margin(const MeanFieldGaussian& q, const DataExample& ex) {
  double var = 0.0;
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const double t = q.sigma()[j] * ex.x[j];
    var += t * t;
  }
  return {1.0 - ex.y * dot(q.mean(), ex.x), std::abs(ex.y) * std::sqrt(var)};
}

inline void require_closed_form(const LossKind& kind) {
  if (!kind.has_closed_form()) {
    throw UnsupportedError("expected loss of '" + kind.name() +
                           "' has no closed form; use mc_expected_loss_and_grad");
  }
}

}  // namespace detail

// E_{theta ~ q}[loss(theta)] in closed form (Hinge, SquaredLinear).
inline double expected_loss(const LossKind& kind, const MeanFieldGaussian& q, const DataExample& ex) {
  detail::require_closed_form(kind);
  detail::check_dims(kind, q.dim(), ex);
  if (kind.tag == LossTag::Hinge) {
    const auto [mu_z, s_z] = detail::hinge_margin(q, ex);
    if (s_z == 0.0) return std::max(0.0, mu_z);
    const double z = mu_z / s_z;
    return mu_z * standard_normal_cdf(z) + s_z * standard_normal_pdf(z);
  }
  const double r = ex.y - detail::dot(q.mean(), ex.x);
  double spread = 0.0;
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const double t = q.sigma()[j] * ex.x[j];
    spread += t * t;
  }
  return r * r + spread;
}

inline ExpectedLossGradient expected_loss_grad(const LossKind& kind, const MeanFieldGaussian& q,
                                               const DataExample& ex) {
  detail::require_closed_form(kind);
  detail::check_dims(kind, q.dim(), ex);
  const std::size_t d = q.dim();
  auto grad = ExpectedLossGradient::zeros(d);
  if (kind.tag == LossTag::Hinge) {
    const auto [mu_z, s_z] = detail::hinge_margin(q, ex);
    if (s_z == 0.0) {
      if (mu_z > 0.0) {
        for (std::size_t j = 0; j < d; ++j) grad.g_m[j] = -ex.y * ex.x[j];
      }
      return grad;
    }
    const double z = mu_z / s_z;
    const double cdf = standard_normal_cdf(z);
    const double pdf = standard_normal_pdf(z);
    const double y2 = ex.y * ex.y;
    for (std::size_t j = 0; j < d; ++j) {
      grad.g_m[j] = -ex.y * ex.x[j] * cdf;
      grad.g_sigma[j] = y2 * q.sigma()[j] * ex.x[j] * ex.x[j] / s_z * pdf;
    }
    return grad;
  }
  const double r = ex.y - detail::dot(q.mean(), ex.x);
  for (std::size_t j = 0; j < d; ++j) {
    grad.g_m[j] = -2.0 * ex.x[j] * r;
    grad.g_sigma[j] = 2.0 * q.sigma()[j] * ex.x[j] * ex.x[j];
  }
  return grad;
}

struct McEstimate {
  double loss = 0.0;
  ExpectedLossGradient grad;
  // Standard errors of the sample means above.
  double loss_se = 0.0;
  ExpectedLossGradient grad_se;
};

// Reparameterized estimator with theta_s = m + sigma * eps_s, eps_s drawn
// from CounterRng(seed). Works for every loss kind.
inline McEstimate mc_expected_loss_and_grad(const LossKind& kind, const MeanFieldGaussian& q,
                                            const DataExample& ex, std::size_t samples,
                                            std::uint64_t seed) {
  if (samples == 0) throw DomainError("mc_expected_loss_and_grad: samples must be >= 1");
  detail::check_dims(kind, q.dim(), ex);
  const std::size_t d = q.dim();
  CounterRng rng(seed);
  Vector eps(d);
  Vector theta(d);
  double loss_sum = 0.0;
  double loss_sq = 0.0;
  Vector gm_sum(d, 0.0), gm_sq(d, 0.0), gs_sum(d, 0.0), gs_sq(d, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < d; ++j) {
      eps[j] = rng.normal();
      theta[j] = q.mean()[j] + q.sigma()[j] * eps[j];
    }
    const double l = point_loss(kind, theta, ex);
    loss_sum += l;
    loss_sq += l * l;
    const Vector g = point_loss_grad(kind, theta, ex);
    for (std::size_t j = 0; j < d; ++j) {
      const double gs = g[j] * eps[j];
      gm_sum[j] += g[j];
      gm_sq[j] += g[j] * g[j];
      gs_sum[j] += gs;
      gs_sq[j] += gs * gs;
    }
  }
  const double n = static_cast<double>(samples);
  auto mean_se = [n](double sum, double sq) {
    const double mean = sum / n;
    if (n < 2.0) return std::pair{mean, 0.0};
    const double var = std::max(0.0, (sq - n * mean * mean) / (n - 1.0));
    return std::pair{mean, std::sqrt(var / n)};
  };
  McEstimate est;
  std::tie(est.loss, est.loss_se) = mean_se(loss_sum, loss_sq);
  est.grad = ExpectedLossGradient::zeros(d);
  est.grad_se = ExpectedLossGradient::zeros(d);
  for (std::size_t j = 0; j < d; ++j) {
    std::tie(est.grad.g_m[j], est.grad_se.g_m[j]) = mean_se(gm_sum[j], gm_sq[j]);
    std::tie(est.grad.g_sigma[j], est.grad_se.g_sigma[j]) = mean_se(gs_sum[j], gs_sq[j]);
  }
  return est;
}

// Lipschitz constant L = 2 L' of the expected loss over the box, where L' is
// the Lipschitz constant of the point loss (Gaussian family).
inline double lipschitz_constant(const LossKind& kind, std::span<const DataExample> data,
                                 const BoxConstraints& box) {
  if (data.empty()) throw DomainError("lipschitz_constant: empty data");
  double point_lipschitz = 0.0;
  switch (kind.tag) {
    case LossTag::Hinge:
      for (const auto& ex : data) {
        point_lipschitz = std::max(point_lipschitz, std::abs(ex.y) * std::sqrt(detail::dot(ex.x, ex.x)));
      }
      break;
    case LossTag::SquaredLinear:
      for (const auto& ex : data) {
        require_same_dim(ex.x.size(), box.dim(), "lipschitz_constant");
        double lo = 0.0;
        double hi = 0.0;
        for (std::size_t j = 0; j < ex.x.size(); ++j) {
          const double a = box.m_lo[j] * ex.x[j];
          const double b = box.m_hi[j] * ex.x[j];
          lo += std::min(a, b);
          hi += std::max(a, b);
        }
        const double residual = std::max(std::abs(ex.y - lo), std::abs(ex.y - hi));
        point_lipschitz = std::max(point_lipschitz, 2.0 * std::sqrt(detail::dot(ex.x, ex.x)) * residual);
      }
      break;
    case LossTag::SquaredNN:
      throw UnsupportedError("lipschitz_constant: no certified constant for squared_nn");
  }
  return 2.0 * point_lipschitz;
}

}  // namespace ovi
