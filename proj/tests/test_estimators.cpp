#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "fedspzo/cost_meter.hpp"
#include "fedspzo/data.hpp"
#include "fedspzo/errors.hpp"
#include "fedspzo/estimators.hpp"
#include "fedspzo/perturb.hpp"

using namespace fedspzo;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

std::vector<double> random_vec(std::size_t d, Seed seed, double lo = -1.0, double hi = 1.0) {
  Xoshiro256pp rng(seed);
  std::vector<double> v(d);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

// Loss independent of theta.
class ConstantModel final : public SplitModel<double> {
 public:
  ConstantModel(std::size_t d1, std::size_t d2) : d1_(d1), d2_(d2) {}
  BlockSplit split() const override { return {1, d1_, d2_}; }
  Matrix<double> forward_block1(std::span<const double>, const Matrix<double>& x) const override { return x; }
  double forward_block2(std::span<const double>, const Matrix<double>&, std::span<const int>) const override {
    return 0.7;
  }
  std::uint64_t block1_flops(std::size_t) const override { return 10; }
  std::uint64_t block2_flops(std::size_t) const override { return 1; }

 private:
  std::size_t d1_, d2_;
};

// f1 passes its input through with theta1 added: y = x + theta1 (one row).
// f2 is quadratic: L = sum_j a_j y_j^2 / 2 + y_j t_j + t_j^2 / 2, t = theta2.
class PassThroughQuadratic final : public SplitModel<double> {
 public:
  explicit PassThroughQuadratic(std::vector<double> a) : a_(std::move(a)) {}
  std::size_t n() const { return a_.size(); }
  BlockSplit split() const override { return {1, n(), n()}; }
  Matrix<double> forward_block1(std::span<const double> t1, const Matrix<double>& x) const override {
    Matrix<double> y(1, n());
    for (std::size_t j = 0; j < n(); ++j) y.at(0, j) = x.at(0, j) + t1[j];
    return y;
  }
  double forward_block2(std::span<const double> t2, const Matrix<double>& y, std::span<const int>) const override {
    double l = 0.0;
    for (std::size_t j = 0; j < n(); ++j) {
      const double yj = y.at(0, j);
      l += 0.5 * a_[j] * yj * yj + yj * t2[j] + 0.5 * t2[j] * t2[j];
    }
    return l;
  }
  std::uint64_t block1_flops(std::size_t) const override { return 1; }
  std::uint64_t block2_flops(std::size_t) const override { return 1; }

  void gradients(std::span<const double> t1, std::span<const double> t2, const Matrix<double>& x,
                 std::vector<double>& g1, std::vector<double>& g2) const {
    g1.assign(n(), 0.0);
    g2.assign(n(), 0.0);
    for (std::size_t j = 0; j < n(); ++j) {
      const double yj = x.at(0, j) + t1[j];
      g1[j] = a_[j] * yj + t2[j];
      g2[j] = yj + t2[j];
    }
  }

 private:
  std::vector<double> a_;
};

}  // namespace

TEST(CentralDifference, ConstantLossGivesZero) {
  auto theta = random_vec(30, 1);
  const double g = projected_gradient_central(std::span<double>(theta), [](auto) { return 2.5; }, 4, 1e-3);
  EXPECT_EQ(g, 0.0);
}

TEST(CentralDifference, HalfSquaredNormGivesThetaDotZ) {
  auto theta = random_vec(40, 2);
  const auto z = gaussian_prefix(5, 40);
  const double expected = dot(theta, z);
  for (double eps : {1e-1, 1e-3, 1e-5}) {
    const double g = projected_gradient_central(
        std::span<double>(theta), [](std::span<const double> t) { return 0.5 * dot(t, t); }, 5, eps);
    EXPECT_NEAR(g, expected, 1e-8) << eps;
  }
}

TEST(CentralDifference, LinearLossGivesCDotZ) {
  auto theta = random_vec(40, 3);
  const auto c = random_vec(40, 4);
  const auto z = gaussian_prefix(6, 40);
  const double g = projected_gradient_central(
      std::span<double>(theta), [&](std::span<const double> t) { return dot(c, t); }, 6, 1e-3);
  EXPECT_NEAR(g, dot(c, z), 1e-9);
}

TEST(ForwardDifference, ConstantAndLinearLosses) {
  auto theta = random_vec(40, 7);
  const auto c = random_vec(40, 8);
  const auto z = gaussian_prefix(9, 40);
  EXPECT_EQ(projected_gradient_forward(std::span<double>(theta), [](auto) { return 1.0; }, 9, 1e-3, 1.0), 0.0);
  const double base = dot(c, theta);
  const double g = projected_gradient_forward(
      std::span<double>(theta), [&](std::span<const double> t) { return dot(c, t); }, 9, 1e-3, base);
  EXPECT_NEAR(g, dot(c, z), 1e-9);
}

TEST(ForwardDifference, QuadraticShowsFirstOrderBias) {
  auto theta = random_vec(40, 10);
  const auto z = gaussian_prefix(11, 40);
  const double eps = 1e-2;
  auto loss = [](std::span<const double> t) { return 0.5 * dot(t, t); };
  const double g = projected_gradient_forward(std::span<double>(theta), loss, 11, eps,
                                              loss(std::span<const double>(theta)));
  EXPECT_NEAR(g, dot(theta, z) + 0.5 * eps * dot(z, z), 1e-9);
}

TEST(Estimators, RestorationCheckFlagsUnrestoredParameters) {
  auto theta = random_vec(20, 12);
  const RestorationCheck<double> check(std::span<const double>(theta), 1e-3);
  theta[3] += 1e-3;
  EXPECT_THROW(check.verify(std::span<const double>(theta), "test"), InvariantError);
}

TEST(G1FromLosses, SymmetricVectorsGiveZero) {
  const std::vector<double> l{0.3, 1.2, -0.7, 2.0};
  EXPECT_EQ(g1_from_losses<double>(l, l, 1e-3, 2), 0.0);
}

TEST(G1FromLosses, UnitMeanDifference) {
  const std::vector<double> plus{1, 1, 1, 1}, minus{0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(g1_from_losses<double>(plus, minus, 0.5, 2), 1.0);
}

TEST(G1FromLosses, LengthMismatchIsContractViolation) {
  const std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3};
  EXPECT_THROW(g1_from_losses<double>(a, b, 1e-3, 2), ContractError);
}

TEST(G1FromLosses, DoubleSumEqualsMeanDifference) {
  Xoshiro256pp rng(13);
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::size_t ps = 1 + rng.below(4);
    const double eps = std::pow(10.0, -1.0 - 4.0 * rng.uniform());
    std::vector<double> plus(2 * ps), minus(2 * ps);
    double mp = 0, mm = 0, mag = 0;
    for (std::size_t i = 0; i < 2 * ps; ++i) {
      plus[i] = 3.0 * rng.uniform();
      minus[i] = 3.0 * rng.uniform();
      mp += plus[i];
      mm += minus[i];
      mag = std::max({mag, std::abs(plus[i]), std::abs(minus[i])});
    }
    const double ref = (mp / (2.0 * ps) - mm / (2.0 * ps)) / (2.0 * eps);
    const double got = g1_from_losses<double>(plus, minus, eps, ps);
    ASSERT_LE(std::abs(got - ref), 1e-12 * std::max(std::abs(ref), mag / (2.0 * eps))) << trial;
  }
}

TEST(SpzoStep, CountsMatchSplitStructure) {
  const Mlp<double> m(ModelSpec::mlp(6, {10, 4}, 3, ActivationKind::tanh));
  ParamVector<double> theta = m.init_params(1);
  const auto b = full_batch<double>(make_blobs(12, 6, 3, 1.0, 1));
  const BlockSplit s = m.split();
  SplitConfig cfg;  // P1 = 2, P2 = 8
  SeedSource seeds(5);
  CostMeter meter;
  const auto r = spzo_step(m, theta.block1(s), theta.block2(s), b, cfg, seeds, &meter);
  EXPECT_EQ(cfg.ps(), 2u);
  EXPECT_EQ(r.s1.size(), 2u);
  EXPECT_EQ(r.s2.size(), 8u);
  const OpCounters& c = meter.counters();
  EXPECT_EQ(c.forwards[static_cast<int>(Block::first)], 4u);
  EXPECT_EQ(c.forwards[static_cast<int>(Block::second)], 16u);
  EXPECT_EQ(c.perturb_passes[static_cast<int>(Block::first)], 6u);
  EXPECT_EQ(c.perturb_passes[static_cast<int>(Block::second)], 24u);
  EXPECT_EQ(seeds.drawn(), cfg.p1 * (2 + 2 * cfg.ps()));
}

TEST(SpzoStep, RestoresParametersWithinTolerance) {
  const Mlp<double> m(ModelSpec::mlp(6, {10, 4}, 3, ActivationKind::tanh));
  ParamVector<double> theta = m.init_params(2);
  const ParamVector<double> before = theta;
  const auto b = full_batch<double>(make_blobs(12, 6, 3, 1.0, 2));
  const BlockSplit s = m.split();
  SeedSource seeds(6);
  spzo_step(m, theta.block1(s), theta.block2(s), b, SplitConfig{}, seeds);
  double inf = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    inf = std::max(inf, std::abs(before[i]));
    diff = std::max(diff, std::abs(theta[i] - before[i]));
  }
  EXPECT_LE(diff, 1e-10 * (1.0 + inf));
}

TEST(SpzoStep, ConstantLossGivesZeroGradientsAndNoUpdate) {
  const ConstantModel m(15, 5);
  std::vector<double> t1 = random_vec(15, 3), t2 = random_vec(5, 4);
  Batch<double> b;
  b.inputs = Matrix<double>(2, 3);
  b.labels = {0, 0};
  SeedSource seeds(7);
  const auto r = spzo_step<double>(m, t1, t2, b, SplitConfig{}, seeds);
  EXPECT_EQ(r.g1, 0.0);
  EXPECT_EQ(r.g2, 0.0);
  const auto k1 = t1, k2 = t2;
  apply_split_update<double>(t1, t2, r.g1, r.s1, r.g2, r.s2, 0.1);
  EXPECT_EQ(t1, k1);
  EXPECT_EQ(t2, k2);
}

TEST(SpzoStep, AveragedStepAlignsWithBlockGradients) {
  const std::size_t n = 10;
  const PassThroughQuadratic m(random_vec(n, 20, 0.5, 2.0));
  std::vector<double> t1 = random_vec(n, 21), t2 = random_vec(n, 22);
  Batch<double> b;
  b.inputs = Matrix<double>(1, n);
  for (std::size_t j = 0; j < n; ++j) b.inputs.at(0, j) = 0.1 * static_cast<double>(j);
  b.labels = {0};
  std::vector<double> grad1, grad2;
  m.gradients(t1, t2, b.inputs, grad1, grad2);

  SplitConfig cfg;
  cfg.eps = 1e-4;
  SeedSource seeds(23);
  std::vector<double> dir1(n, 0.0), dir2(n, 0.0);
  for (int step = 0; step < 500; ++step) {
    const auto r = spzo_step<double>(m, t1, t2, b, cfg, seeds);
    // The update would subtract lr * g * z per seed; accumulate g * z.
    for (Seed s : r.s1) perturb_in_place(std::span<double>(dir1), {s, r.g1});
    for (Seed s : r.s2) perturb_in_place(std::span<double>(dir2), {s, r.g2});
  }
  EXPECT_GE(cosine(dir1, grad1), 0.8);
  EXPECT_GE(cosine(dir2, grad2), 0.8);
}

TEST(Spsa, AveragedEstimateAlignsWithQuadraticGradient) {
  const std::size_t d = 50;
  Xoshiro256pp rng(31);
  std::vector<double> mtx(d * d);
  for (auto& v : mtx) v = rng.uniform() - 0.5;
  std::vector<double> a(d * d, 0.0);  // A = M^T M / d + I
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += mtx[k * d + i] * mtx[k * d + j];
      a[i * d + j] = s / d + (i == j ? 1.0 : 0.0);
    }
  auto theta = random_vec(d, 32);
  auto loss = [&](std::span<const double> t) {
    double l = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) l += 0.5 * t[i] * a[i * d + j] * t[j];
    return l;
  };
  std::vector<double> at(d, 0.0), avg(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) at[i] += a[i * d + j] * theta[j];
  SeedSource seeds(33);
  const int draws = 2000;
  for (int k = 0; k < draws; ++k) {
    const Seed s = seeds.next();
    const double g = projected_gradient_central(std::span<double>(theta), loss, s, 1e-3);
    perturb_in_place(std::span<double>(avg), {s, g / draws});
  }
  EXPECT_GE(cosine(avg, at), 0.95);
}

TEST(OrderOfAccuracy, CentralIsSecondOrderForwardIsFirstOrder) {
  const std::size_t d = 20;
  auto theta = random_vec(d, 40);
  auto loss = [](std::span<const double> t) {
    double l = 0.0;
    for (double v : t) l += std::log1p(std::exp(v)) + 0.1 * v * v * v;
    return l;
  };
  const Seed seed = 41;
  const auto z = gaussian_prefix(seed, d);
  double exact = 0.0;
  for (std::size_t i = 0; i < d; ++i) exact += (1.0 / (1.0 + std::exp(-theta[i])) + 0.3 * theta[i] * theta[i]) * z[i];
  const double base = loss(theta);
  auto central_err = [&](double eps) {
    return std::abs(projected_gradient_central(std::span<double>(theta), loss, seed, eps) - exact);
  };
  auto forward_err = [&](double eps) {
    return std::abs(projected_gradient_forward(std::span<double>(theta), loss, seed, eps, base) - exact);
  };
  const double rc = central_err(1e-2) / central_err(1e-3);
  const double rf = forward_err(1e-2) / forward_err(1e-3);
  EXPECT_GE(rc, 100.0 / 5.0);
  EXPECT_LE(rc, 100.0 * 5.0);
  EXPECT_GE(rf, 10.0 / 3.0);
  EXPECT_LE(rf, 10.0 * 3.0);
}

TEST(ZoStepFull, CountsForBothDifferenceKinds) {
  const Mlp<double> m(ModelSpec::mlp(6, {10}, 3, ActivationKind::tanh));
  ParamVector<double> theta = m.init_params(3);
  const auto b = full_batch<double>(make_blobs(12, 6, 3, 1.0, 3));
  for (auto kind : {DifferenceKind::central, DifferenceKind::forward}) {
    SeedSource seeds(8);
    CostMeter meter;
    const auto r = zo_step_full(m, theta.values(), b, 5, 1e-3, kind, seeds, &meter);
    EXPECT_EQ(r.g.size(), 5u);
    EXPECT_EQ(r.seeds.size(), 5u);
    const auto& c = meter.counters();
    const int w = static_cast<int>(Block::whole);
    EXPECT_EQ(c.forwards[w], kind == DifferenceKind::central ? 10u : 6u);
    EXPECT_EQ(c.perturb_passes[w], kind == DifferenceKind::central ? 15u : 10u);
    apply_full_update(theta.values(), r, 1e-3, &meter);
    EXPECT_EQ(meter.counters().update_passes[w], 5u);
  }
}

TEST(SplitConfig, ValidatesStructure) {
  SplitConfig c;
  c.p1 = 2;
  c.p2 = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c.p2 = 12;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.ps(), 3u);
  c.eps = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
