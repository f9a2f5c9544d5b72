#pragma once

// Mean-field Gaussian variational family N(m, diag(sigma^2)) with its
// natural and expectation parameterizations, KL divergence and box
// projections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ovi/errors.hpp"

namespace ovi {

using Vector = std::vector<double>;

// Lower clamp applied to sigma by projections. The box M_sigma may contain 0
// but a zero standard deviation has no KL divergence or natural parameters.
inline constexpr double kSigmaFloor = 1e-8;

class MeanFieldGaussian {
 public:
  MeanFieldGaussian() = default;

  // sigma may contain zeros (a point-mass limit, see degenerate()); negative
  // or non-finite entries are rejected.
  MeanFieldGaussian(Vector mean, Vector sigma) : m_(std::move(mean)), sigma_(std::move(sigma)) {
    require_same_dim(m_.size(), sigma_.size(), "MeanFieldGaussian");
    for (std::size_t j = 0; j < m_.size(); ++j) {
      if (!std::isfinite(m_[j]) || !std::isfinite(sigma_[j])) {
        throw DomainError("MeanFieldGaussian: non-finite parameter");
      }
      if (sigma_[j] < 0.0) throw DomainError("MeanFieldGaussian: negative sigma");
    }
  }

  static MeanFieldGaussian isotropic(std::size_t d, double mean, double sd) {
    return {Vector(d, mean), Vector(d, sd)};
  }

  const Vector& mean() const { return m_; }
  const Vector& sigma() const { return sigma_; }
  std::size_t dim() const { return m_.size(); }

  // True when some sigma is exactly zero.
  bool degenerate() const {
    return std::any_of(sigma_.begin(), sigma_.end(), [](double s) { return s == 0.0; });
  }

  friend bool operator==(const MeanFieldGaussian&, const MeanFieldGaussian&) = default;

 private:
  Vector m_;
  Vector sigma_;
};

// lambda1 = m / sigma^2, lambda2 = -1 / (2 sigma^2).
struct NaturalParams {
  Vector lambda1;
  Vector lambda2;

  friend bool operator==(const NaturalParams&, const NaturalParams&) = default;
};

// mu1 = m, mu2 = m^2 + sigma^2.
struct ExpectationParams {
  Vector mu1;
  Vector mu2;
};

struct BoxConstraints {
  Vector m_lo;
  Vector m_hi;
  Vector sigma_lo;
  Vector sigma_hi;

  // [-m_bound, m_bound]^d x [sigma_lo, sigma_hi]^d
  static BoxConstraints uniform(std::size_t d, double m_bound, double sigma_lo, double sigma_hi) {
    BoxConstraints box{Vector(d, -m_bound), Vector(d, m_bound), Vector(d, sigma_lo),
                       Vector(d, sigma_hi)};
    box.validate();
    return box;
  }

  std::size_t dim() const { return m_lo.size(); }

  void validate() const {
    const std::size_t d = m_lo.size();
    require_same_dim(d, m_hi.size(), "BoxConstraints");
    require_same_dim(d, sigma_lo.size(), "BoxConstraints");
    require_same_dim(d, sigma_hi.size(), "BoxConstraints");
    for (std::size_t j = 0; j < d; ++j) {
      if (!(m_lo[j] <= m_hi[j])) throw DomainError("BoxConstraints: m_lo > m_hi");
      if (!(0.0 <= sigma_lo[j] && sigma_lo[j] <= sigma_hi[j])) {
        throw DomainError("BoxConstraints: need 0 <= sigma_lo <= sigma_hi");
      }
      if (sigma_hi[j] < kSigmaFloor) throw DomainError("BoxConstraints: sigma_hi below sigma floor");
    }
  }

  double sigma_floor(std::size_t j) const { return std::max(sigma_lo[j], kSigmaFloor); }

  bool contains_mean(std::span<const double> m) const {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m[j] < m_lo[j] || m[j] > m_hi[j]) return false;
    }
    return true;
  }

  bool contains(const MeanFieldGaussian& q) const {
    if (!contains_mean(q.mean())) return false;
    for (std::size_t j = 0; j < q.dim(); ++j) {
      if (q.sigma()[j] < sigma_floor(j) || q.sigma()[j] > sigma_hi[j]) return false;
    }
    return true;
  }
};

// Isotropic zero-mean Gaussian prior N(0, s^2 I_d).
struct GaussianPrior {
  double s = 1.0;
  std::size_t d = 0;

  MeanFieldGaussian distribution() const {
    if (!(s > 0.0)) throw DomainError("GaussianPrior: s must be positive");
    return MeanFieldGaussian::isotropic(d, 0.0, s);
  }
};

// h(x) = sqrt(1 + x^2) - x, evaluated without cancellation for x > 0.
inline double h_map(double x) {
  const double root = std::hypot(1.0, x);
  return x > 0.0 ? 1.0 / (root + x) : root - x;
}

inline Vector h_map(std::span<const double> x) {
  Vector out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return h_map(v); });
  return out;
}

// KL(q || p) for diagonal Gaussians.
inline double kl_divergence(const MeanFieldGaussian& q, const MeanFieldGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "kl_divergence");
  double total = 0.0;
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const double sq = q.sigma()[j];
    const double sp = p.sigma()[j];
    if (!(sq > 0.0) || !(sp > 0.0)) throw DomainError("kl_divergence: sigma must be positive");
    const double diff = (q.mean()[j] - p.mean()[j]) / sp;
    // r^2 - 1 - log(r^2); log1p keeps it accurate near r = 1, log(r) far from it.
    const double r = sq / sp;
    const double excess = r * r - 1.0;
    const double log_r2 = std::abs(excess) < 0.5 ? std::log1p(excess) : 2.0 * std::log(r);
    total += diff * diff + excess - log_r2;
  }
  return std::max(0.0, 0.5 * total);
}

inline MeanFieldGaussian project_box(const MeanFieldGaussian& q, const BoxConstraints& box) {
  require_same_dim(q.dim(), box.dim(), "project_box");
  Vector m(q.dim());
  Vector s(q.dim());
  for (std::size_t j = 0; j < q.dim(); ++j) {
    m[j] = std::clamp(q.mean()[j], box.m_lo[j], box.m_hi[j]);
    s[j] = std::clamp(q.sigma()[j], box.sigma_floor(j), box.sigma_hi[j]);
  }
  return {std::move(m), std::move(s)};
}

inline Vector project_mean(std::span<const double> m, const BoxConstraints& box) {
  require_same_dim(m.size(), box.dim(), "project_mean");
  Vector out(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) out[j] = std::clamp(m[j], box.m_lo[j], box.m_hi[j]);
  return out;
}

inline NaturalParams to_natural(const MeanFieldGaussian& q) {
  NaturalParams lam{Vector(q.dim()), Vector(q.dim())};
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const double s = q.sigma()[j];
    if (!(s > 0.0)) throw DomainError("to_natural: sigma must be positive");
    const double var = s * s;
    lam.lambda1[j] = q.mean()[j] / var;
    lam.lambda2[j] = -0.5 / var;
  }
  return lam;
}

inline MeanFieldGaussian from_natural(const NaturalParams& lam) {
  require_same_dim(lam.lambda1.size(), lam.lambda2.size(), "from_natural");
  Vector m(lam.lambda1.size());
  Vector s(lam.lambda1.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (!(lam.lambda2[j] < 0.0)) {
      throw InvalidPrecisionError("from_natural: lambda2[" + std::to_string(j) + "] >= 0");
    }
    const double var = -0.5 / lam.lambda2[j];
    m[j] = var * lam.lambda1[j];
    s[j] = std::sqrt(var);
  }
  return {std::move(m), std::move(s)};
}

inline ExpectationParams to_expectation(const MeanFieldGaussian& q) {
  ExpectationParams mu{q.mean(), Vector(q.dim())};
  for (std::size_t j = 0; j < q.dim(); ++j) {
    mu.mu2[j] = q.mean()[j] * q.mean()[j] + q.sigma()[j] * q.sigma()[j];
  }
  return mu;
}

inline MeanFieldGaussian from_expectation(const ExpectationParams& mu) {
  require_same_dim(mu.mu1.size(), mu.mu2.size(), "from_expectation");
  Vector s(mu.mu1.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double var = mu.mu2[j] - mu.mu1[j] * mu.mu1[j];
    if (!(var > 0.0)) throw DomainError("from_expectation: mu2 <= mu1^2");
    s[j] = std::sqrt(var);
  }
  return {mu.mu1, std::move(s)};
}

// The decision played by every variational learner.
inline const Vector& posterior_mean(const MeanFieldGaussian& q) { return q.mean(); }

}  // namespace ovi
