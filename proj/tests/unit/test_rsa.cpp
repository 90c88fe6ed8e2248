#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"
#include "fedmoco/rsa.hpp"
#include "oracles.hpp"

namespace fedmoco {
namespace {

// Builds a feature directly from non-negative coordinates (already normalized
// by from_activations, which leaves Pearson correlations unchanged).
FeatureVector feature(std::vector<double> v) { return FeatureVector::from_activations(std::move(v)); }

double naive_pearson(const std::vector<double>& u, const std::vector<double>& v) {
  const double n = static_cast<double>(u.size());
  double su = 0, sv = 0, suu = 0, svv = 0, suv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    su += u[i];
    sv += v[i];
    suu += u[i] * u[i];
    svv += v[i] * v[i];
    suv += u[i] * v[i];
  }
  const double cov = suv - su * sv / n;
  return cov / std::sqrt((suu - su * su / n) * (svv - sv * sv / n));
}

TEST(Rdm, IdenticalFeaturesHaveZeroDissimilarity) {
  std::vector<FeatureVector> f{feature({1, 2, 3}), feature({1, 2, 3}), feature({3, 0, 1})};
  const auto rdm = compute_rdm(f);
  EXPECT_NEAR(rdm(0, 1), 0.0, 1e-15);
  EXPECT_EQ(rdm(0, 0), 0.0);
}

TEST(Rdm, AffineIncreasingTransformHasZeroDissimilarity) {
  std::vector<double> base{0.1, 0.5, 0.2, 0.9};
  std::vector<double> affine;
  for (double b : base) affine.push_back(3.0 * b + 0.7);
  std::vector<FeatureVector> f{feature(base), feature(affine), feature({1, 0, 0, 0})};
  EXPECT_NEAR(compute_rdm(f)(1, 0), 0.0, 1e-14);
}

TEST(Rdm, HandPickedThreeByThree) {
  const std::vector<std::vector<double>> raw{{1, 2, 4}, {3, 1, 2}, {2, 2, 5}};
  std::vector<FeatureVector> f;
  for (const auto& r : raw) f.push_back(feature(r));
  const auto rdm = compute_rdm(f);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double expected = i == j ? 0.0 : 1.0 - naive_pearson(raw[i], raw[j]);
      EXPECT_NEAR(rdm(i, j), expected, 1e-14);
    }
  EXPECT_EQ(rdm.lower_triangle(), (std::vector<double>{rdm(1, 0), rdm(2, 0), rdm(2, 1)}));
}

TEST(Rdm, ConstantFeatureCountsAsUncorrelated) {
  std::vector<FeatureVector> f{feature({1, 1, 1}), feature({1, 2, 3}), feature({0, 0, 0})};
  const auto rdm = compute_rdm(f);
  EXPECT_EQ(rdm(1, 0), 1.0);
  EXPECT_EQ(rdm(2, 1), 1.0);
}

TEST(Rdm, NeedsThreeSamples) {
  std::vector<FeatureVector> f{feature({1, 2}), feature({2, 1})};
  EXPECT_THROW(compute_rdm(f), ArgumentError);
}

TEST(Rdm, ProbeOfHundredGivesLength4950) {
  Rng rng(1);
  std::vector<FeatureVector> f;
  for (int i = 0; i < 100; ++i) f.push_back(feature({rng.uniform(), rng.uniform(), rng.uniform()}));
  EXPECT_EQ(compute_rdm(f).lower_triangle().size(), 4950u);
}

TEST(AverageRanks, TiesShareAverage) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Spearman, IdenticalAndReversedRankings) {
  const std::vector<double> u{0.3, 1.5, -2.0, 4.0, 0.0};
  std::vector<double> rev(u);
  std::sort(rev.begin(), rev.end());
  std::vector<double> sorted(rev);
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(spearman(u, u), 1.0);
  EXPECT_EQ(spearman(sorted, rev), -1.0);
}

TEST(Spearman, ThreeElementExample) {
  EXPECT_DOUBLE_EQ(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5);
}

TEST(Spearman, TiesMatchDefinition) {
  const std::vector<double> u{1, 2, 2, 3, 5, 5, 5};
  const std::vector<double> v{2, 1, 4, 4, 3, 7, 0};
  EXPECT_NEAR(spearman(u, v), oracle::spearman_definition(u, v), 1e-12);
}

TEST(Spearman, ConstantSideGivesZero) {
  EXPECT_EQ(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), 0.0);
}

TEST(Spearman, InvariantUnderMonotoneTransform) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> u(9), v(9), w(9);
    for (std::size_t i = 0; i < 9; ++i) {
      u[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
      w[i] = std::exp(3.0 * u[i]) + 2.0;
    }
    EXPECT_NEAR(spearman(u, v), spearman(w, v), 1e-15);
  }
}

TEST(Spearman, StaysInUnitInterval) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> u(6), v(6);
    for (std::size_t i = 0; i < 6; ++i) {
      u[i] = static_cast<double>(rng.below(3));
      v[i] = rng.uniform();
    }
    const double r = spearman(u, v);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(RsaScore, UnchangedEncoderScoresOne) {
  const std::size_t widths[] = {4, 6, 5};
  const auto theta = init_params(mlp_shapes(widths), 3);
  Rng rng(9);
  std::vector<ImageSample> probe;
  for (int i = 0; i < 10; ++i) {
    auto img = make_image(2, 2);
    for (double& p : img.pixels) p = rng.uniform();
    probe.push_back(img);
  }
  EXPECT_EQ(rsa_score(theta, theta, probe), 1.0);
}

TEST(RsaScore, MatchesEndToEndRecomputation) {
  // Two tiny hand-set encoders on a four-image probe.
  const std::vector<LayerShape> shapes{{3, 2, true}};
  EncoderParams prev(shapes, {1.0, 0.5, -0.3, 1.2, 0.8, 0.1, 0.2, 0.3, 0.1});
  EncoderParams next(shapes, {0.9, -0.2, 0.4, 1.0, 1.1, 0.6, 0.1, 0.0, 0.5});
  const std::vector<std::vector<double>> images{{0.1, 0.9}, {0.7, 0.2}, {0.5, 0.5}, {0.9, 0.8}};
  std::vector<ImageSample> probe;
  for (const auto& px : images) probe.push_back({1, 2, px, std::nullopt});

  auto lower = [&](const EncoderParams& p) {
    std::vector<std::vector<double>> z;
    for (const auto& px : images) z.push_back(oracle::naive_forward(p, px));
    std::vector<double> out;
    for (std::size_t i = 1; i < z.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) out.push_back(1.0 - naive_pearson(z[i], z[j]));
    return out;
  };
  const double expected = oracle::spearman_definition(lower(prev), lower(next));
  EXPECT_NEAR(rsa_score(prev, next, probe), expected, 1e-12);
}

TEST(SelfAdaptiveWeights, TabledCases) {
  EXPECT_EQ(self_adaptive_weights(std::vector<double>{0, 0, 0}).values()[0], 1.0 / 3.0);
  const auto w = self_adaptive_weights(std::vector<double>{1, 0, -1});
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[1], 1.0 / 3.0);
  EXPECT_EQ(w[2], 2.0 / 3.0);
  const auto u = self_adaptive_weights(std::vector<double>{1, 1, 1});
  for (double v : u.values()) EXPECT_EQ(v, 1.0 / 3.0);
}

TEST(FedAvgWeights, TabledCases) {
  EXPECT_EQ(fedavg_weights(std::vector<std::size_t>{1, 1, 2}),
            AggregationWeights({0.25, 0.25, 0.5}));
  const auto equal = fedavg_weights(std::vector<std::size_t>{7, 7, 7, 7});
  for (double v : equal.values()) EXPECT_EQ(v, 0.25);
  EXPECT_EQ(fedavg_weights(std::vector<std::size_t>{42}), AggregationWeights({1.0}));
}

TEST(Aggregate, OneHotSelectsNode) {
  const std::size_t widths[] = {3, 2};
  const auto shapes = mlp_shapes(widths);
  std::vector<EncoderParams> thetas{init_params(shapes, 1), init_params(shapes, 2), init_params(shapes, 3)};
  EXPECT_EQ(aggregate(thetas, AggregationWeights({0.0, 1.0, 0.0})), thetas[1]);
}

TEST(Aggregate, UniformPairIsMidpoint) {
  const std::vector<LayerShape> shapes{{1, 2, false}};
  std::vector<EncoderParams> thetas{EncoderParams(shapes, {1.0, -2.0}), EncoderParams(shapes, {3.0, 4.0})};
  EXPECT_EQ(aggregate(thetas, AggregationWeights({0.5, 0.5})), EncoderParams(shapes, {2.0, 1.0}));
}

TEST(Aggregate, MatchesPerCoordinateOracle) {
  const std::size_t widths[] = {5, 4, 3};
  const auto shapes = mlp_shapes(widths);
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.below(5);
    std::vector<EncoderParams> thetas;
    std::vector<double> raw(k);
    for (std::size_t i = 0; i < k; ++i) {
      thetas.push_back(init_params(shapes, rng.next_u64()));
      raw[i] = rng.uniform();
    }
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    for (auto& r : raw) r /= total;
    const auto out = aggregate(thetas, AggregationWeights(raw));
    for (std::size_t c = 0; c < out.size(); ++c) {
      double expected = 0.0;
      for (std::size_t i = 0; i < k; ++i) expected += raw[i] * thetas[i].values()[c];
      EXPECT_NEAR(out.values()[c], expected, 1e-14);
    }
  }
}

}  // namespace
}  // namespace fedmoco
