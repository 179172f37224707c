#include <gtest/gtest.h>

#include <algorithm>

#include "test_util.hpp"
#include "tta/plr.hpp"

using namespace tta;
using namespace tta::testing;

namespace {

std::vector<double> one_hot(int k, int K) {
  std::vector<double> v(K, 0.0);
  v[k] = 1.0;
  return v;
}

TEST(Queue, FifoEvictionPerClass) {
  RefinementQueue q(3, 2);
  for (double f : {1.0, 2.0, 3.0}) q.enqueue(std::vector<double>{f, 0.0}, one_hot(1, 3));
  ASSERT_EQ(q.class_entries(1).size(), 2u);
  EXPECT_EQ(q.class_entries(1)[0].feature[0], 2.0);
  EXPECT_EQ(q.class_entries(1)[1].feature[0], 3.0);
  EXPECT_EQ(q.size(), 2u);
}

TEST(Queue, TieInArgmaxGoesToLowestClass) {
  RefinementQueue q(3, 4);
  q.enqueue(std::vector<double>{1.0}, std::vector<double>{0.1, 0.45, 0.45});
  EXPECT_EQ(q.class_entries(1).size(), 1u);
  EXPECT_EQ(q.class_entries(2).size(), 0u);
}

TEST(Queue, NeverExceedsCapacity) {
  Rng rng(1);
  RefinementQueue q(4, 3);
  for (int t = 0; t < 200; ++t) {
    q.enqueue(std::vector<double>{rng.normal(), rng.normal()}, random_simplex(rng, 4));
    for (int k = 0; k < 4; ++k) ASSERT_LE(q.class_entries(k).size(), 3u);
    ASSERT_LE(q.size(), 12u);
  }
}

TEST(Queue, SelfNeighbourReturnsOwnLabel) {
  RefinementQueue q(3, 1);
  const std::vector<double> z{0.3, -0.2, 0.9}, y{0.2, 0.5, 0.3};
  q.enqueue(z, y);
  EXPECT_EQ(q.refine(z, 1), y);
}

TEST(Queue, EquidistantNeighboursAverage) {
  RefinementQueue q(2, 2);
  q.enqueue(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0});
  q.enqueue(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 1.0});
  const auto r = q.refine(std::vector<double>{1.0, 1.0}, 2);
  EXPECT_NEAR(r[0], 0.5, 1e-15);
  EXPECT_NEAR(r[1], 0.5, 1e-15);
}

TEST(Queue, EmptyQueueIsPreconditionViolation) {
  RefinementQueue q(2, 2);
  EXPECT_THROW(q.refine(std::vector<double>{1.0}, 1), std::logic_error);
}

TEST(Queue, MatchesExhaustiveKnnOracle) {
  Rng rng(2);
  const int K = 4, D = 6;
  RefinementQueue q(K, 10);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> all;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> z(D);
    for (auto& v : z) v = rng.normal();
    auto y = random_simplex(rng, K);
    q.enqueue(z, y);
    all.emplace_back(z, y);
  }
  ASSERT_EQ(q.size(), 20u);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> z(D);
    for (auto& v : z) v = rng.normal();
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < 20; ++i) {
      double dot = 0, na = 0, nb = 0;
      for (int c = 0; c < D; ++c) {
        dot += z[c] * all[i].first[c];
        na += z[c] * z[c];
        nb += all[i].first[c] * all[i].first[c];
      }
      d.emplace_back(1 - dot / std::sqrt(na * nb), i);
    }
    std::ranges::sort(d);
    std::vector<double> expect(K, 0.0);
    for (int i = 0; i < 5; ++i)
      for (int k = 0; k < K; ++k) expect[k] += all[d[i].second].second[k] / 5;
    const auto got = q.refine(z, 5);
    for (int k = 0; k < K; ++k) EXPECT_NEAR(got[k], expect[k], 1e-7);
  }
}

TEST(Queue, JsonRoundTrip) {
  Rng rng(3);
  RefinementQueue q(3, 2);
  for (int t = 0; t < 7; ++t) q.enqueue(std::vector<double>{rng.normal(), rng.normal()}, random_simplex(rng, 3));
  EXPECT_EQ(RefinementQueue::from_json(nlohmann::json::parse(q.to_json().dump())), q);
}

TEST(WeakAug, IdentityAugmenterReproducesImage) {
  Rng rng(4);
  const auto x = random_image(rng, 3, 8, 8);
  EXPECT_EQ(WeakAugmenter::identity()(x, rng), x);
}

TEST(WeakAug, SingleIdentityViewIsPlainTeacherOutput) {
  Rng rng(5);
  const auto teacher = tiny_model(rng);
  std::vector<Image<double>> batch{random_image(rng, 3, 8, 8), random_image(rng, 3, 8, 8)};
  const auto ens = ensemble_weak<double>(teacher, batch, WeakAugmenter::identity(), rng);
  const auto ref = teacher.forward(stack<double>(batch), NormMode::running_stats);
  EXPECT_EQ(ens.probs, ref.probs);
  EXPECT_EQ(ens.features, ref.features);
}

TEST(WeakAug, EnsembleIsMeanOfIndependentlyComputedViews) {
  Rng rng(6);
  const auto teacher = tiny_model(rng);
  std::vector<Image<double>> batch{smooth_image(rng, 3, 8, 8), smooth_image(rng, 3, 8, 8), smooth_image(rng, 3, 8, 8)};
  const WeakAugmenter aug;
  Rng a(42), b(42);
  const auto ens = ensemble_weak<double>(teacher, batch, aug, a);
  Matrix<double> mean(3, teacher.arch().num_classes);
  for (int v = 0; v < aug.num_views; ++v)
    for (int j = 0; j < 3; ++j) {
      std::vector<Image<double>> one{aug(batch[j], b)};
      const auto p = teacher.forward(stack<double>(one), NormMode::running_stats).probs;
      for (int k = 0; k < p.cols; ++k) mean(j, k) += p(0, k) / aug.num_views;
    }
  for (std::size_t i = 0; i < mean.data.size(); ++i) EXPECT_NEAR(ens.probs.data[i], mean.data[i], 1e-7);
}

TEST(WeakAug, ViewsStayInUnitInterval) {
  Rng rng(7);
  const auto x = random_image(rng, 3, 16, 16);
  const WeakAugmenter aug;
  for (int t = 0; t < 20; ++t)
    for (double v : aug(x, rng).data) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Refine, DegeneratesToEnsembleWithSingleNeighbourQueues) {
  Rng rng(8);
  const auto teacher = tiny_model(rng);
  std::vector<Image<double>> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_image(rng, 3, 8, 8));
  RefinementQueue q(teacher.arch().num_classes, 1);
  Rng a(9), b(9);
  const auto refined = refine_pseudo_labels<double>(teacher, batch, WeakAugmenter(), q, 1, a);
  const auto ens = ensemble_weak<double>(teacher, batch, WeakAugmenter(), b);
  for (std::size_t i = 0; i < refined.data.size(); ++i) EXPECT_NEAR(refined.data[i], ens.probs.data[i], 1e-15);
}

TEST(Refine, DeterministicGivenSeed) {
  Rng rng(10);
  const auto teacher = tiny_model(rng);
  std::vector<Image<double>> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_image(rng, 3, 8, 8));
  RefinementQueue q1(teacher.arch().num_classes, 3), q2(teacher.arch().num_classes, 3);
  Rng a(11), b(11);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(refine_pseudo_labels<double>(teacher, batch, WeakAugmenter(), q1, 2, a),
              refine_pseudo_labels<double>(teacher, batch, WeakAugmenter(), q2, 2, b));
  }
  EXPECT_EQ(q1, q2);
}

}  // namespace
