#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "tss/autodiff.hpp"
#include "tss/error.hpp"
#include "tss/optimizer.hpp"
#include "tss/rng.hpp"

namespace tss {
namespace {

class GradientCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const oracle::GradCase c = oracle::gradient_cases()[GetParam()];
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double err = oracle::gradient_check(c.make(seed), c.loss, 1e-4);
    EXPECT_LT(err, 1e-5) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCheck,
                         ::testing::Range<std::size_t>(0, oracle::gradient_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           std::string n = oracle::gradient_cases()[info.param].name;
                           for (char& ch : n) {
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           }
                           return n;
                         });

TEST(Autodiff, ReluDeadRegionHasZeroGradient) {
  ad::Tensor x = ad::Tensor::from(1, 1, {-1.0}, true);
  ad::mean(ad::relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(1);
  std::vector<double> v(6 * 9);
  for (double& x : v) x = 10.0 * rng.normal();
  const ad::Tensor s = ad::softmax(ad::Tensor::from(6, 9, v));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 9; ++c) sum += s.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-7);
  }
}

TEST(Autodiff, BceClosedForms) {
  const std::vector<double> one{1.0};
  EXPECT_NEAR(ad::bce_with_logits(ad::Tensor::from(1, 1, {0.0}), one).item(), std::log(2.0), 1e-12);
  const double big = ad::bce_with_logits(ad::Tensor::from(1, 1, {100.0}), one).item();
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 0.0, 1e-40);
  const double wrong = ad::bce_with_logits(ad::Tensor::from(1, 1, {-100.0}), one).item();
  EXPECT_TRUE(std::isfinite(wrong));
  EXPECT_NEAR(wrong, 100.0, 1e-9);
}

TEST(Autodiff, BceMatchesNaiveOracle) {
  Rng rng(2);
  std::vector<double> x(32), t(32);
  for (std::size_t i = 0; i < 32; ++i) {
    x[i] = 3.0 * rng.normal();
    t[i] = rng.below(2);
  }
  double ref = 0.0;
  for (std::size_t i = 0; i < 32; ++i) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-x[i])), 1e-15, 1.0 - 1e-15);
    ref += -(t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p));
  }
  EXPECT_NEAR(ad::bce_with_logits(ad::Tensor::from(4, 8, x), t).item(), ref / 32.0, 1e-9);
}

TEST(Autodiff, BceMaskAndNonNegativity) {
  const std::vector<double> t{1, 0, 1, 0};
  const std::vector<double> m0{0, 0, 0, 0};
  EXPECT_EQ(ad::bce_with_logits(ad::Tensor::from(2, 2, {1, 2, 3, 4}), t, m0).item(), 0.0);
  const std::vector<double> m{1, 0, 0, 0};
  EXPECT_NEAR(ad::bce_with_logits(ad::Tensor::from(2, 2, {0, 50, -50, 50}), t, m).item(), std::log(2.0), 1e-12);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x(4);
    for (double& v : x) v = 20.0 * rng.normal();
    EXPECT_GE(ad::bce_with_logits(ad::Tensor::from(2, 2, x), t).item(), 0.0);
  }
}

TEST(Autodiff, BceGradientsFiniteAtExtremes) {
  ad::Tensor x = ad::Tensor::from(1, 4, {100.0, -100.0, 100.0, -100.0}, true);
  const std::vector<double> t{1, 0, 0, 1};
  ad::Tensor l = ad::bce_with_logits(x, t);
  l.backward();
  EXPECT_TRUE(std::isfinite(l.item()));
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Autodiff, ShapeMismatchIsRejected) {
  const ad::Tensor a = ad::Tensor::zeros(2, 3);
  const ad::Tensor b = ad::Tensor::zeros(2, 3);
  EXPECT_THROW(ad::matmul(a, b), DataError);
  EXPECT_THROW(ad::add(a, ad::Tensor::zeros(3, 2)), DataError);
  const std::vector<double> t(5, 0.0);
  EXPECT_THROW(ad::bce_with_logits(a, t), DataError);
  EXPECT_THROW(ad::scaled_dot_attention(a, a, a, 2), DataError);
}

TEST(Autodiff, ForwardIsBitDeterministic) {
  Rng rng(4);
  std::vector<double> a(64 * 48), b(48 * 32);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  const ad::Tensor r1 = ad::matmul(ad::Tensor::from(64, 48, a), ad::Tensor::from(48, 32, b));
  const ad::Tensor r2 = ad::matmul(ad::Tensor::from(64, 48, a), ad::Tensor::from(48, 32, b));
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1.values()[i], r2.values()[i]);
}

TEST(Autodiff, MatmulMatchesNaiveOracle) {
  Rng rng(5);
  for (std::size_t m : {1u, 7u, 33u, 70u}) {
    std::vector<double> a(m * 19), b(19 * 11);
    for (double& x : a) x = rng.normal();
    for (double& x : b) x = rng.normal();
    const oracle::Mat ref = oracle::matmul({m, 19, a}, {19, 11, b});
    const ad::Tensor got = ad::matmul(ad::Tensor::from(m, 19, a), ad::Tensor::from(19, 11, b));
    for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(got.values()[i], ref.v[i], 1e-12);
  }
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  ad::Tensor x = ad::Tensor::from(1, 1, {3.0}, true);
  ad::Tensor y = ad::add(ad::mul(x, x), x);  // x^2 + x
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

#ifdef TSS_CHECKED_BUILD
TEST(Autodiff, CheckedBuildRejectsNonFinite) {
  const ad::Tensor a = ad::Tensor::from(1, 1, {std::numeric_limits<double>::max()});
  EXPECT_THROW(ad::mul(a, a), NumericError);
}
#endif

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ad::Tensor p = ad::Tensor::from(1, 3, {0.5, -0.25, 1.0}, true);
  Adam adam({p}, AdamConfig{});
  adam.zero_grad();
  adam.step();
  EXPECT_EQ(p.values()[0], 0.5);
  EXPECT_EQ(p.values()[1], -0.25);
  EXPECT_EQ(p.values()[2], 1.0);
}

TEST(Adam, FirstStepHandCalculation) {
  ad::Tensor p = ad::Tensor::from(1, 1, {0.0}, true);
  Adam adam({p}, AdamConfig{1e-4});
  ad::mean(p).backward();  // d/dp = 1
  adam.step();
  const double expect = round_to_f32(oracle::adam_first_step(0.0, 1.0, 1e-4));
  EXPECT_EQ(p.values()[0], expect);
  EXPECT_NEAR(p.values()[0], -9.99999e-5, 1e-10);
}

TEST(Adam, DescendsOnQuadratic) {
  ad::Tensor w = ad::Tensor::from(1, 1, {1.0}, true);
  Adam adam({w}, AdamConfig{1e-2});
  double prev = std::abs(w.values()[0]);
  for (int step = 0; step < 100; ++step) {
    adam.zero_grad();
    ad::mul(w, w).backward();
    adam.step();
    const double now = std::abs(w.values()[0]);
    EXPECT_LT(now, prev) << "step " << step;
    prev = now;
  }
}

TEST(Adam, WeightDecayIsAddedToGradient) {
  ad::Tensor p = ad::Tensor::from(1, 1, {2.0}, true);
  Adam adam({p}, AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.5});
  adam.zero_grad();
  adam.step();  // gradient 0, decay term 0.5 * 2 = 1
  EXPECT_EQ(p.values()[0], round_to_f32(oracle::adam_first_step(2.0, 1.0, 1e-3)));
}

TEST(Adam, StateStaysF32Representable) {
  Rng rng(6);
  std::vector<double> v(10);
  for (double& x : v) x = rng.normal();
  ad::Tensor p = ad::Tensor::from(2, 5, v, true);
  Adam adam({p}, AdamConfig{1e-2});
  for (int i = 0; i < 5; ++i) {
    adam.zero_grad();
    ad::mean(ad::mul(p, p)).backward();
    adam.step();
  }
  for (double x : p.values()) EXPECT_EQ(x, round_to_f32(x));
  for (double x : adam.first_moments()[0]) EXPECT_EQ(x, round_to_f32(x));
  for (double x : adam.second_moments()[0]) EXPECT_EQ(x, round_to_f32(x));
  EXPECT_EQ(adam.step_count(), 5);
}

#ifdef TSS_CHECKED_BUILD
TEST(Adam, NonFiniteGradientAborts) {
  ad::Tensor p = ad::Tensor::from(1, 1, {1.0}, true);
  Adam adam({p}, AdamConfig{});
  p.node()->ensure_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam.step(), NumericError);
}
#endif

}  // namespace
}  // namespace tss
