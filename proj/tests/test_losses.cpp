#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ovi/data.hpp"
#include "ovi/losses.hpp"

using namespace ovi;

namespace {

struct Instance {
  MeanFieldGaussian q;
  DataExample ex;
};

Instance random_instance(std::mt19937_64& gen, const LossKind& kind, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.5);
  Vector m(d), s(d);
  for (std::size_t j = 0; j < d; ++j) {
    m[j] = n(gen);
    s[j] = u(gen);
  }
  DataExample ex{Vector(d), 0.0};
  for (double& v : ex.x) v = n(gen);
  ex.y = kind.tag == LossTag::Hinge ? (n(gen) > 0 ? 1.0 : -1.0) : 2.0 * n(gen);
  return {MeanFieldGaussian(m, s), ex};
}

// Central differences of expected_loss in m_j (part 0) or sigma_j (part 1).
double fd_expected(const LossKind& kind, const MeanFieldGaussian& q, const DataExample& ex, int part,
                   std::size_t j) {
  auto f = [&](double v) {
    Vector m = q.mean(), s = q.sigma();
    (part == 0 ? m : s)[j] = v;
    return expected_loss(kind, MeanFieldGaussian(m, s), ex);
  };
  return oracle::central_difference(f, part == 0 ? q.mean()[j] : q.sigma()[j]);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2}); }

// Independent forward pass of the one-hidden-layer network.
double reference_network(std::size_t H, const Vector& th, const Vector& x) {
  const std::size_t d = x.size();
  double out = th[H * d + H + H];
  for (std::size_t k = 0; k < H; ++k) {
    double a = th[H * d + k];
    for (std::size_t i = 0; i < d; ++i) a += th[k * d + i] * x[i];
    out += th[H * d + H + k] * std::max(0.0, a);
  }
  return out;
}

}  // namespace

TEST(PointLoss, Examples) {
  const DataExample ex{{1.0}, 1.0};
  EXPECT_EQ(point_loss(LossKind::hinge(), Vector{2.0}, ex), 0.0);
  EXPECT_EQ(point_loss(LossKind::hinge(), Vector{0.0}, ex), 1.0);
  EXPECT_EQ(point_loss(LossKind::squared_linear(), Vector{0.0}, ex), 1.0);
  EXPECT_THROW(point_loss(LossKind::hinge(), Vector{0.0, 1.0}, ex), DimensionError);
}

TEST(PointLoss, NetworkMatchesReference) {
  const auto kind = LossKind::squared_nn(3);
  EXPECT_EQ(kind.param_dim(2), 3u * (2 + 2) + 1);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Vector th(kind.param_dim(2));
    for (double& v : th) v = n(gen);
    const DataExample ex{{n(gen), n(gen)}, n(gen)};
    const double f = reference_network(3, th, ex.x);
    EXPECT_NEAR(point_loss(kind, th, ex), (ex.y - f) * (ex.y - f), 1e-12);
    // backprop against central differences of the point loss
    const Vector g = point_loss_grad(kind, th, ex);
    for (std::size_t j = 0; j < th.size(); ++j) {
      auto fj = [&](double v) {
        Vector t2 = th;
        t2[j] = v;
        return point_loss(kind, t2, ex);
      };
      EXPECT_LE(rel_err(g[j], oracle::central_difference(fj, th[j])), 1e-6);
    }
  }
}

TEST(NormalCdf, ReferenceValues) {
  EXPECT_EQ(standard_normal_cdf(0.0), 0.5);
  EXPECT_NEAR(standard_normal_cdf(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(standard_normal_cdf(-3.0), 0.0013498980316300946, 1e-16);
  EXPECT_NEAR(standard_normal_cdf(-8.0), 6.22096057427178e-16, 1e-25);
  EXPECT_NEAR(standard_normal_pdf(1.0), 0.24197072451914337, 1e-16);
}

TEST(ExpectedLoss, SquaredLinearExample) {
  EXPECT_DOUBLE_EQ(expected_loss(LossKind::squared_linear(), MeanFieldGaussian({0.0}, {1.0}), {{1.0}, 0.0}), 1.0);
}

TEST(ExpectedLoss, HingeZeroFeatures) {
  EXPECT_EQ(expected_loss(LossKind::hinge(), MeanFieldGaussian({3.0, -2.0}, {0.5, 2.0}), {{0.0, 0.0}, 1.0}), 1.0);
  const auto g = expected_loss_grad(LossKind::hinge(), MeanFieldGaussian({3.0, -2.0}, {0.5, 2.0}), {{0.0, 0.0}, 1.0});
  EXPECT_EQ(g.g_m, (Vector{0.0, 0.0}));
  EXPECT_EQ(g.g_sigma, (Vector{0.0, 0.0}));
}

TEST(ExpectedLoss, HingeUnitExampleAgainstMonteCarlo) {
  const auto kind = LossKind::hinge();
  const MeanFieldGaussian q({0.0}, {1.0});
  const DataExample ex{{1.0}, 1.0};
  const double v = expected_loss(kind, q, ex);
  EXPECT_NEAR(v, 1.0833155, 5e-8);
  const auto mc = oracle::gaussian_expectation({0.0}, {1.0}, [](const std::vector<double>& th) {
    return std::max(0.0, 1.0 - th[0]);
  }, 1'000'000, 21);
  EXPECT_LE(std::abs(mc.mean - v), 3.0 * mc.se);
}

TEST(ExpectedLossGrad, SquaredLinearExample) {
  const auto g = expected_loss_grad(LossKind::squared_linear(), MeanFieldGaussian({1.0}, {1.0}), {{1.0}, 0.0});
  EXPECT_DOUBLE_EQ(g.g_m[0], 2.0);
  EXPECT_DOUBLE_EQ(g.g_sigma[0], 2.0);
}

TEST(ExpectedLossGrad, HingeUnitExample) {
  const auto kind = LossKind::hinge();
  const MeanFieldGaussian q({0.0}, {1.0});
  const DataExample ex{{1.0}, 1.0};
  const auto g = expected_loss_grad(kind, q, ex);
  EXPECT_NEAR(g.g_m[0], -0.8413447, 5e-8);
  EXPECT_NEAR(g.g_sigma[0], 0.2419707, 5e-8);
  EXPECT_LE(rel_err(g.g_m[0], fd_expected(kind, q, ex, 0, 0)), 1e-5);
  EXPECT_LE(rel_err(g.g_sigma[0], fd_expected(kind, q, ex, 1, 0)), 1e-5);
}

TEST(ExpectedLossGrad, MatchesFiniteDifferences) {
  std::mt19937_64 gen(17);
  for (const auto& kind : {LossKind::hinge(), LossKind::squared_linear()}) {
    double worst = 0.0;
    for (int i = 0; i < 150; ++i) {
      const auto inst = random_instance(gen, kind, 1 + i % 5);
      const auto g = expected_loss_grad(kind, inst.q, inst.ex);
      for (std::size_t j = 0; j < inst.q.dim(); ++j) {
        worst = std::max(worst, rel_err(g.g_m[j], fd_expected(kind, inst.q, inst.ex, 0, j)));
        worst = std::max(worst, rel_err(g.g_sigma[j], fd_expected(kind, inst.q, inst.ex, 1, j)));
      }
    }
    EXPECT_LE(worst, 1e-5) << kind.name();
  }
}

TEST(ExpectedLossGrad, DegenerateHingeUsesSubgradient) {
  const auto kind = LossKind::hinge();
  const MeanFieldGaussian q({0.0, 0.0}, {0.0, 0.0});
  const auto g = expected_loss_grad(kind, q, {{1.0, 2.0}, 1.0});
  EXPECT_EQ(g.g_m, (Vector{-1.0, -2.0}));
  EXPECT_EQ(g.g_sigma, (Vector{0.0, 0.0}));
  EXPECT_EQ(expected_loss(kind, q, {{1.0, 2.0}, 1.0}), 1.0);
  // margin exactly 1: loss 0, subgradient taken as 0
  const MeanFieldGaussian at_kink({1.0}, {0.0});
  EXPECT_EQ(expected_loss_grad(kind, at_kink, {{1.0}, 1.0}).g_m[0], 0.0);
}

TEST(ExpectedLoss, NetworkHasNoClosedForm) {
  const auto kind = LossKind::squared_nn(2);
  const MeanFieldGaussian q = MeanFieldGaussian::isotropic(kind.param_dim(1), 0.0, 1.0);
  EXPECT_THROW(expected_loss(kind, q, {{1.0}, 0.0}), UnsupportedError);
  EXPECT_THROW(expected_loss_grad(kind, q, {{1.0}, 0.0}), UnsupportedError);
}

TEST(ExpectedLoss, JensenLowerBound) {
  std::mt19937_64 gen(23);
  for (const auto& kind : {LossKind::hinge(), LossKind::squared_linear()}) {
    for (int i = 0; i < 500; ++i) {
      const auto inst = random_instance(gen, kind, 1 + i % 4);
      EXPECT_LE(point_loss(kind, inst.q.mean(), inst.ex), expected_loss(kind, inst.q, inst.ex) + 1e-15);
    }
  }
}

TEST(ExpectedLoss, SmallSigmaLimit) {
  std::mt19937_64 gen(29);
  for (const auto& kind : {LossKind::hinge(), LossKind::squared_linear()}) {
    for (int i = 0; i < 100; ++i) {
      const auto inst = random_instance(gen, kind, 3);
      const MeanFieldGaussian q(inst.q.mean(), Vector(3, 1e-6));
      EXPECT_NEAR(expected_loss(kind, q, inst.ex), point_loss(kind, inst.q.mean(), inst.ex), 1e-4);
    }
  }
}

TEST(ExpectedLoss, HingeNondecreasingInSigma) {
  std::mt19937_64 gen(31);
  const auto kind = LossKind::hinge();
  for (int i = 0; i < 200; ++i) {
    const auto inst = random_instance(gen, kind, 3);
    const auto g = expected_loss_grad(kind, inst.q, inst.ex);
    for (double v : g.g_sigma) EXPECT_GE(v, 0.0);
    Vector s = inst.q.sigma();
    s[0] *= 1.5;
    EXPECT_GE(expected_loss(kind, MeanFieldGaussian(inst.q.mean(), s), inst.ex),
              expected_loss(kind, inst.q, inst.ex));
  }
}

TEST(MonteCarlo, DegenerateGaussianGivesPointLoss) {
  std::mt19937_64 gen(37);
  for (const auto& kind : {LossKind::hinge(), LossKind::squared_linear(), LossKind::squared_nn(3)}) {
    const std::size_t d = kind.param_dim(2);
    std::normal_distribution<double> n(0.0, 1.0);
    Vector m(d);
    for (double& v : m) v = n(gen);
    const DataExample ex{{0.7, -0.4}, kind.tag == LossTag::Hinge ? -1.0 : 0.3};
    const auto est = mc_expected_loss_and_grad(kind, MeanFieldGaussian(m, Vector(d, kSigmaFloor)), ex, 64, 5);
    EXPECT_NEAR(est.loss, point_loss(kind, m, ex), 1e-6) << kind.name();
  }
}

TEST(MonteCarlo, Deterministic) {
  const auto kind = LossKind::squared_nn(4);
  const MeanFieldGaussian q = MeanFieldGaussian::isotropic(kind.param_dim(3), 0.1, 0.5);
  const DataExample ex{{1.0, -2.0, 0.5}, 0.7};
  const auto a = mc_expected_loss_and_grad(kind, q, ex, 257, 99);
  const auto b = mc_expected_loss_and_grad(kind, q, ex, 257, 99);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad.g_m, b.grad.g_m);
  EXPECT_EQ(a.grad.g_sigma, b.grad.g_sigma);
  EXPECT_EQ(a.grad_se.g_sigma, b.grad_se.g_sigma);
}

TEST(MonteCarlo, SquaredLinearMatchesClosedForm) {
  std::mt19937_64 gen(41);
  const auto kind = LossKind::squared_linear();
  for (int i = 0; i < 20; ++i) {
    const auto inst = random_instance(gen, kind, 1 + i % 3);
    const auto est = mc_expected_loss_and_grad(kind, inst.q, inst.ex, 1'000'000, 1000 + i);
    EXPECT_LE(std::abs(est.loss - expected_loss(kind, inst.q, inst.ex)), 3.0 * est.loss_se) << i;
  }
}

TEST(MonteCarlo, SquaredLinearGradientUnbiased) {
  std::mt19937_64 gen(43);
  const auto kind = LossKind::squared_linear();
  const auto inst = random_instance(gen, kind, 3);
  const auto est = mc_expected_loss_and_grad(kind, inst.q, inst.ex, 1'000'000, 77);
  const auto g = expected_loss_grad(kind, inst.q, inst.ex);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_LE(std::abs(est.grad.g_m[j] - g.g_m[j]), 3.0 * est.grad_se.g_m[j]);
    EXPECT_LE(std::abs(est.grad.g_sigma[j] - g.g_sigma[j]), 3.0 * est.grad_se.g_sigma[j]);
  }
}

TEST(Lipschitz, HingeExamples) {
  const auto box = BoxConstraints::uniform(2, 20.0, 0.0, 1.0);
  const std::vector<DataExample> one{{{3.0, 4.0}, 1.0}};
  EXPECT_DOUBLE_EQ(lipschitz_constant(LossKind::hinge(), one, box), 10.0);
  const std::vector<DataExample> zero{{{0.0, 0.0}, 1.0}};
  EXPECT_EQ(lipschitz_constant(LossKind::hinge(), zero, box), 0.0);
  EXPECT_THROW(lipschitz_constant(LossKind::hinge(), std::vector<DataExample>{}, box), DomainError);
}

TEST(Lipschitz, NetworkUnsupported) {
  const auto kind = LossKind::squared_nn(2);
  const auto box = BoxConstraints::uniform(kind.param_dim(1), 1.0, 0.0, 1.0);
  const std::vector<DataExample> data{{{1.0}, 0.0}};
  EXPECT_THROW(lipschitz_constant(kind, data, box), UnsupportedError);
}

// Random pairs (mu, mu') in the box: |Lbar(mu) - Lbar(mu')| <= L ||mu - mu'||.
TEST(Lipschitz, RandomPairAudit) {
  const auto data = gen_toy_classification(10000, 1).rows;
  const auto box = BoxConstraints::uniform(2, 20.0, 0.0, 1.0);
  std::mt19937_64 gen(47);
  std::uniform_real_distribution<double> um(-20.0, 20.0), us(kSigmaFloor, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (const auto& kind : {LossKind::squared_linear(), LossKind::hinge()}) {
    const double L = lipschitz_constant(kind, data, box);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const auto& ex = data[pick(gen)];
      const MeanFieldGaussian a({um(gen), um(gen)}, {us(gen), us(gen)});
      // half of the pairs are close, where the local slope dominates
      MeanFieldGaussian b({um(gen), um(gen)}, {us(gen), us(gen)});
      if (i % 2 == 0) {
        b = project_box(MeanFieldGaussian({a.mean()[0] + 1e-3 * (us(gen) - 0.5), a.mean()[1]},
                                          {a.sigma()[0], std::min(1.0, a.sigma()[1] + 1e-3 * us(gen))}),
                        box);
      }
      double dist2 = 0.0;
      for (std::size_t j = 0; j < 2; ++j) {
        dist2 += std::pow(a.mean()[j] - b.mean()[j], 2) + std::pow(a.sigma()[j] - b.sigma()[j], 2);
      }
      const double diff = std::abs(expected_loss(kind, a, ex) - expected_loss(kind, b, ex));
      if (dist2 > 0.0) worst = std::max(worst, diff / std::sqrt(dist2));
    }
    EXPECT_LE(worst, L) << kind.name();
    EXPECT_GT(worst, 0.0);
  }
}

TEST(LossKind, Parsing) {
  EXPECT_EQ(parse_loss_kind("hinge").tag, LossTag::Hinge);
  EXPECT_EQ(parse_loss_kind("squared_linear").tag, LossTag::SquaredLinear);
  EXPECT_EQ(parse_loss_kind("nn", 5).hidden_width, 5u);
  EXPECT_ANY_THROW(parse_loss_kind("logistic"));
}
