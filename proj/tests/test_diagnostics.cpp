#include <gtest/gtest.h>

#include <cmath>

#include "divcot/diagnostics.hpp"
#include "divcot/layers.hpp"
#include "divcot/loss.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace divcot;
using divcot::testing::random_labels;
using divcot::testing::random_tensor;

namespace {

LabelMap row(std::vector<std::uint8_t> v) {
  LabelMap m(1, static_cast<int>(v.size()));
  m.data = std::move(v);
  return m;
}

Tensor probs(std::vector<double> v) {
  const std::size_t c = v.size();
  return Tensor({1, c, 1, 1}, std::move(v));
}

std::vector<LabelMap> random_maps(std::size_t n, int classes, std::uint64_t seed, bool with_ignore) {
  std::vector<LabelMap> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabelMap m = random_labels(5, 6, classes, seed + i);
    if (with_ignore) {
      Rng rng(seed ^ 0xabc ^ i);
      for (auto& v : m.data)
        if (rng.bernoulli(0.1)) v = kIgnoreLabel;
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TEST(AgreeRate, Examples) {
  const LabelMap a = row({0, 1, 1, 2});
  EXPECT_EQ(agree_rate(a, a), 1.0);
  EXPECT_EQ(agree_rate(a, row({0, 2, 1, 1})), 0.5);
  EXPECT_EQ(agree_rate(row({0, 1, 0, 1}), row({1, 0, 1, 0})), 0.0);
}

TEST(AgreeRate, IgnoreExcludedAndShapesChecked) {
  EXPECT_EQ(agree_rate(row({0, 1, 255}), row({0, 2, 1})), 0.5);
  EXPECT_THROW(agree_rate(row({0, 1}), row({0, 1, 2})), ShapeError);
}

TEST(AgreeRate, MatchesHammingOracleAndIsSymmetric) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = random_maps(3, 4, seed, true), b = random_maps(3, 4, seed + 500, true);
    EXPECT_NEAR(agree_rate(a, b), oracle::agree(a, b), 1e-12);
    EXPECT_EQ(agree_rate(a, b), agree_rate(b, a));
  }
}

TEST(L2Distance, Examples) {
  const Tensor a = random_tensor({2, 3, 4, 4}, 1);
  EXPECT_EQ(l2_logit_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(l2_logit_distance(probs({1, 2}), probs({1, 4})), 1.0);
  EXPECT_THROW(l2_logit_distance(a, Tensor({2, 3, 4, 5})), ShapeError);
}

TEST(L2Distance, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor a = random_tensor({2, 3, 4, 5}, seed, -5, 5), b = random_tensor({2, 3, 4, 5}, seed + 1000, -5, 5);
    EXPECT_NEAR(l2_logit_distance(a, b), oracle::l2(a, b), 1e-12);
  }
}

TEST(KlDivergence, Examples) {
  const Tensor s = probs({0.3, 0.7});
  EXPECT_EQ(kl_divergence(s, s), 0.0);
  const double expected = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  EXPECT_NEAR(kl_divergence(probs({0.5, 0.5}), probs({0.25, 0.75})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.14384, 1e-5);
  EXPECT_NEAR(kl_divergence(probs({1.0, 0.0}), probs({0.9, 0.1})), std::log(1 / 0.9), 1e-15);
  EXPECT_NEAR(std::log(1 / 0.9), 0.10536, 1e-5);
}

TEST(KlDivergence, RejectsNegativeProbabilities) {
  EXPECT_THROW(kl_divergence(probs({1.5, -0.5}), probs({0.5, 0.5})), std::invalid_argument);
}

TEST(KlDivergence, MatchesBruteForceAndIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor p = softmax_channels(random_tensor({2, 4, 3, 3}, seed, -4, 4));
    const Tensor q = softmax_channels(random_tensor({2, 4, 3, 3}, seed + 77, -4, 4));
    EXPECT_NEAR(kl_divergence(p, q), oracle::kl(p, q), 1e-12);
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-15);
  }
}

TEST(CrossEntropyOracle, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor logits = random_tensor({2, 4, 5, 6}, seed, -6, 6);
    const auto labels = random_maps(2, 4, seed + 9, true);
    EXPECT_NEAR(pixel_cross_entropy(logits, labels).loss, oracle::cross_entropy(logits, labels), 1e-12);
  }
}

TEST(Miou, Examples) {
  const std::vector<LabelMap> gt{row({0, 0, 1, 1})};
  EXPECT_EQ(miou(gt, gt, 2).mean, 1.0);
  const std::vector<LabelMap> zeros{row({0, 0, 0, 0})};
  const MiouResult r = miou(zeros, gt, 2);
  EXPECT_DOUBLE_EQ(r.iou[0], 0.5);
  EXPECT_DOUBLE_EQ(r.iou[1], 0.0);
  EXPECT_DOUBLE_EQ(r.mean, 0.25);
}

TEST(Miou, AbsentClassesExcluded) {
  const std::vector<LabelMap> gt{row({0, 0, 1, 1})};
  const MiouResult r = miou(gt, gt, 4);
  EXPECT_FALSE(r.present[2]);
  EXPECT_EQ(r.mean, 1.0);
}

TEST(Miou, ErrorContracts) {
  const std::vector<LabelMap> ignore{row({255, 255})};
  const std::vector<LabelMap> pred{row({0, 1})};
  EXPECT_THROW(miou(pred, ignore, 2), std::invalid_argument);
  const std::vector<LabelMap> bad{row({0, 5})};
  EXPECT_THROW(miou(bad, pred, 2), std::invalid_argument);
}

TEST(Miou, MatchesSetOracleAndRelabelingInvariance) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto pred = random_maps(3, 4, seed, false), gt = random_maps(3, 4, seed + 300, true);
    const double m = miou(pred, gt, 4).mean;
    EXPECT_NEAR(m, oracle::mean_iou(pred, gt, 4), 1e-12);
    const std::uint8_t perm[4] = {2, 0, 3, 1};
    auto relabel = [&](std::vector<LabelMap> maps) {
      for (auto& mm : maps)
        for (auto& v : mm.data)
          if (v != kIgnoreLabel) v = perm[v];
      return maps;
    };
    EXPECT_NEAR(miou(relabel(pred), relabel(gt), 4).mean, m, 1e-12);
  }
}

TEST(Argmax, LowestIndexWinsTies) {
  const auto m = argmax_labels(Tensor({1, 3, 1, 2}, std::vector<double>{1, 5, 1, 5, 0, 2}));
  EXPECT_EQ(m[0].data, (std::vector<std::uint8_t>{0, 0}));
}

TEST(DiversityTrace, PairsAndIdenticalModels) {
  const Tensor a = random_tensor({2, 3, 4, 4}, 1), b = random_tensor({2, 3, 4, 4}, 2);
  const std::vector<Tensor> three{a, b, a};
  const auto trace = diversity_trace(three, 5);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_EQ(trace[0].epoch, 5);
  const auto& same = trace[1];  // pair (0, 2)
  EXPECT_EQ(same.model_a, 0u);
  EXPECT_EQ(same.model_b, 2u);
  EXPECT_EQ(same.agree_rate, 1.0);
  EXPECT_EQ(same.d_l2, 0.0);
  EXPECT_NEAR(same.d_kl, 0.0, 1e-15);
  EXPECT_EQ(same.disagreement(), 0.0);
}
