#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "divcot/pac_bound.hpp"
#include "divcot/rng.hpp"

using namespace divcot;

namespace {

// Threshold from the factorial written as a plain sum of logs.
double threshold_oracle(long long m) {
  double log_fact = 0.0;
  for (long long k = 2; k <= m; ++k) log_fact += std::log(static_cast<double>(k));
  return std::numbers::e * std::exp(log_fact / static_cast<double>(m)) - static_cast<double>(m);
}

}  // namespace

TEST(BoundStep, Examples) {
  EXPECT_NEAR(bound_step(100, 400, 0.1, 0.1, 0.12), 0.02, 1e-15);
  EXPECT_NEAR((10.0 + 40.0 - 48.0) / 100.0, 0.02, 1e-15);
  EXPECT_EQ(bound_step(100, 400, 0.1, 0.1, 0.5), 0.0);
  EXPECT_NEAR(bound_step(100, 400, 0.1, 0.1, 0.0), 0.5, 1e-15);
  EXPECT_EQ(bound_step(10, 400, 0.1, 0.1, 0.0), 1.0);  // clamped at 1
}

TEST(BoundStep, ErrorContract) {
  EXPECT_THROW(bound_step(0, 400, 0.1, 0.1, 0.1), std::invalid_argument);
  EXPECT_THROW(bound_step(10, 400, 0.1, 0.1, 1.5), std::invalid_argument);
}

TEST(BoundStep, MonotoneAndBounded) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const long long l = rng.uniform_int(1, 500), u = rng.uniform_int(0, 2000);
    const double bi = rng.uniform(), bj = rng.uniform(), d1 = rng.uniform(), d2 = rng.uniform();
    const double lo = std::min(d1, d2), hi = std::max(d1, d2);
    EXPECT_GE(bound_step(l, u, bi, bj, lo), bound_step(l, u, bi, bj, hi));
    const double bj2 = std::min(1.0, bj + rng.uniform(0.0, 0.2));
    EXPECT_LE(bound_step(l, u, bi, bj, lo), bound_step(l, u, bi, bj2, lo));
    const double b = bound_step(l, u, bi, bj, lo);
    EXPECT_TRUE(b >= 0.0 && b <= 1.0);
  }
}

TEST(SampleCondition, Examples) {
  double ln20 = 0.0;
  for (int k = 2; k <= 20; ++k) ln20 += std::log(k);
  EXPECT_NEAR(ln20, 42.3356, 1e-4);
  const auto c20 = sample_condition(50, 0.05, 400, 0.05);
  EXPECT_EQ(c20.m, 20);
  EXPECT_NEAR(c20.threshold, threshold_oracle(20), 1e-10);
  EXPECT_NEAR(c20.threshold, 2.574, 1e-3);
  EXPECT_TRUE(c20.holds);

  const auto c40 = sample_condition(100, 0.1, 400, 0.1);
  EXPECT_EQ(c40.m, 40);
  EXPECT_NEAR(c40.threshold, threshold_oracle(40), 1e-10);
  EXPECT_NEAR(c40.threshold, 2.8633, 1e-4);
  EXPECT_FALSE(c40.holds);

  const auto c1 = sample_condition(1, 0.5, 1, 1.0);
  EXPECT_NEAR(c1.threshold, std::numbers::e - 1.0, 1e-12);
}

TEST(SampleCondition, NonIntegerMIsRoundedUp) {
  EXPECT_EQ(sample_condition(10, 0.1, 10, 0.25).m, 3);  // M = 2.5
  EXPECT_THROW(sample_condition(10, 0.1, 0, 0.25), std::invalid_argument);
}

TEST(MinLabeledSize, Examples) {
  EXPECT_EQ(min_labeled_size(0.1, 0.05, 65536).l, 141);
  EXPECT_NEAR(10 * std::log(65536 / 0.05), 140.861, 1e-3);
  EXPECT_EQ(min_labeled_size(1.0, 0.1, 0.1 * std::numbers::e).l, 1);
}

TEST(MinLabeledSize, DegenerateWhenDeltaExceedsClassSize) {
  const auto r = min_labeled_size(0.5, 0.5, 0.4);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.l, 0);
  EXPECT_FALSE(min_labeled_size(0.5, 0.5, 1.0).degenerate);
  EXPECT_THROW(min_labeled_size(0.0, 0.5, 4.0), std::invalid_argument);
}

TEST(MinLabeledSize, DoublingClassAddsLogTwoOverB) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double b0 = rng.uniform(0.05, 1.0), delta = rng.uniform(0.01, 0.5), h = std::exp(rng.uniform(1.0, 20.0));
    const double exact = std::log(h / delta) / b0;
    const long long a = min_labeled_size(b0, delta, h).l, b = min_labeled_size(b0, delta, 2 * h).l;
    EXPECT_EQ(b - a, static_cast<long long>(std::ceil(exact + std::log(2.0) / b0 - 1e-9)) -
                         static_cast<long long>(std::ceil(exact - 1e-9)));
  }
}

TEST(SigmaDisagreements, Examples) {
  EXPECT_EQ(sigma_disagreements(100, 400, 0.0, 0.2, 0.1).opt_vs_sigma, 0.0);
  EXPECT_NEAR(sigma_disagreements(50, 50, 0.3, 0.17, 0.17).model_vs_sigma, 0.17, 1e-15);
  const auto s = sigma_disagreements(100, 400, 0.1, 0.12, 0.05);
  EXPECT_NEAR(s.opt_vs_sigma, 0.08, 1e-15);
  EXPECT_NEAR(s.model_vs_sigma, 0.106, 1e-15);
  EXPECT_THROW(sigma_disagreements(0, 0, 0.1, 0.1, 0.1), std::invalid_argument);
}

TEST(SigmaDisagreements, StayInUnitInterval) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const auto s = sigma_disagreements(rng.uniform_int(0, 100), rng.uniform_int(1, 100), rng.uniform(), rng.uniform(),
                                       rng.uniform());
    EXPECT_TRUE(s.opt_vs_sigma >= 0 && s.opt_vs_sigma <= 1);
    EXPECT_TRUE(s.model_vs_sigma >= 0 && s.model_vs_sigma <= 1);
  }
}

TEST(BoundTrace, RecordsPerIteration) {
  const std::vector<double> d{0.12, 0.0};
  const auto trace = bound_trace(BoundParams{100, 400, 0.1, 0.1, 0.1, 256}, d);
  ASSERT_EQ(trace.size(), 2u);
  EXPECT_EQ(trace[0].k, 1);
  EXPECT_NEAR(trace[0].b1, 0.02, 1e-15);
  EXPECT_NEAR(trace[1].b2, 0.5, 1e-15);
}

TEST(McVerify, VacuousBoundNeverViolated) {
  const auto r = mc_verify(3, BoundParams{5, 10, 1.0, 1.0, 0.1, 0}, 4, 200, 7);
  for (const auto& rec : r.records) EXPECT_EQ(rec.violation_any, 0.0);
}

TEST(McVerify, ExhaustiveSupervisionRecoversTarget) {
  const auto r = mc_verify(3, BoundParams{400, 50, 0.05, 0.05, 0.1, 0}, 3, 100, 8);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.mean_err1, 0.0);
    EXPECT_EQ(rec.mean_err2, 0.0);
    EXPECT_EQ(rec.violation_any, 0.0);
  }
}

TEST(McVerify, SmallExampleFailsPreconditions) {
  // l = 20, u = 40, delta = 0.1 cannot satisfy the sample condition at this class size.
  const auto r = mc_verify(3, BoundParams{20, 40, 0.1, 0.1, 0.1, 0}, 2, 50, 1);
  EXPECT_FALSE(r.condition);
}

TEST(McVerify, GuaranteedConfigurationStaysWithinBand) {
  const BoundParams p{16, 3000000, 0.5, 0.5, 0.1, 0};
  const auto r = mc_verify(3, p, 3, 500, 11);
  ASSERT_TRUE(r.condition);
  for (const auto& rec : r.records) {
    EXPECT_LE(rec.violation1, violation_band(0.1, 500));
    EXPECT_LE(rec.violation2, violation_band(0.1, 500));
  }
}

TEST(McVerify, IndependentSeedsAgreeWithinBand) {
  const BoundParams p{5, 10, 0.1, 0.1, 0.1, 0};
  const auto a = mc_verify(3, p, 3, 500, 100), b = mc_verify(3, p, 3, 500, 200);
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    const double rate = 0.5 * (a.records[k].violation1 + b.records[k].violation1);
    const double sigma = std::sqrt(2.0 * rate * (1 - rate) / 500);
    EXPECT_LE(std::abs(a.records[k].violation1 - b.records[k].violation1), 3 * sigma + 1e-12);
  }
}

TEST(McVerify, DeterministicAndThreadIndependent) {
  const BoundParams p{6, 30, 0.2, 0.3, 0.1, 0};
  const auto a = mc_verify(3, p, 3, 300, 5, 1), b = mc_verify(3, p, 3, 300, 5, 1), c = mc_verify(3, p, 3, 300, 5, 4);
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    EXPECT_EQ(a.records[k].mean_err1, b.records[k].mean_err1);
    EXPECT_EQ(a.records[k].mean_err1, c.records[k].mean_err1);
    EXPECT_EQ(a.records[k].violation2, c.records[k].violation2);
    EXPECT_EQ(a.records[k].mean_d_cross, c.records[k].mean_d_cross);
  }
}

TEST(McVerify, RejectsHugeDomains) {
  EXPECT_THROW(mc_verify(5, BoundParams{5, 10, 0.1, 0.1, 0.1, 0}, 1, 1, 0), std::invalid_argument);
}
