#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tta/objectives.hpp"

using namespace tta;
using namespace tta::testing;

namespace {

const double kLog2 = std::log(2.0);

Matrix<double> rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix<double> m(static_cast<int>(r.size()), static_cast<int>(r.begin()->size()));
  int i = 0;
  for (const auto& row : r) {
    int k = 0;
    for (double v : row) m(i, k++) = v;
    ++i;
  }
  return m;
}

double flog(double p) { return std::log(std::max(p, 1e-8)); }

double brute_loss_pl(const Matrix<double>& p, const Matrix<double>& q) {
  double fce = 0;
  for (int i = 0; i < p.rows; ++i)
    for (int k = 0; k < p.cols; ++k) fce += p(i, k) * flog(q(i, k));
  double ne = 0;
  for (int k = 0; k < p.cols; ++k) {
    double m = 0;
    for (int i = 0; i < p.rows; ++i) m += p(i, k);
    m /= p.rows;
    ne += m * flog(m);
  }
  return -fce / p.rows + ne;
}

double brute_kl(const std::vector<double>& q, const std::vector<double>& p) {
  double s = 0;
  for (std::size_t k = 0; k < q.size(); ++k) s += q[k] * flog(q[k]) - q[k] * flog(p[k]);
  return s;
}

Matrix<double> softmax_of(const std::vector<double>& logits, int rows_, int cols) {
  Matrix<double> l(rows_, cols), p;
  l.data = logits;
  softmax_rows(l, p);
  return p;
}

TEST(LossPl, OneHotStudentMatchingPseudoLabels) {
  const auto p = rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(loss_pl(p, p).value, -kLog2, 1e-12);
}

TEST(LossPl, UniformRowsCancel) {
  const auto p = rows({{0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NEAR(loss_pl(p, p).value, 0.0, 1e-15);
}

TEST(LossPl, MatchesBruteForceOnRandomRows) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_simplex_rows(rng, 4, 3);
    const auto q = random_simplex_rows(rng, 4, 3);
    EXPECT_NEAR(loss_pl(p, q).value, brute_loss_pl(p, q), 1e-10);
  }
}

TEST(LossPl, EmptyBatchIsAnError) {
  Matrix<double> e(0, 3);
  EXPECT_THROW(loss_pl(e, e), ShapeError);
}

TEST(LossPl, LogitGradientMatchesFiniteDifferences) {
  Rng rng(2);
  const int B = 5, K = 4;
  std::vector<double> logits(B * K);
  for (auto& v : logits) v = rng.normal() * 2;
  const auto q = random_simplex_rows(rng, B, K);
  const auto p = softmax_of(logits, B, K);
  const auto g = softmax_backward(p, loss_pl(p, q).d_probs);
  const auto num = central_difference(logits, [&](const std::vector<double>& l) {
    return loss_pl(softmax_of(l, B, K), q).value;
  }, 1e-6);
  EXPECT_LT(relative_error(g.data, num), 1e-7);
}

TEST(LossKd, IdenticalRowsGiveZero) {
  std::vector<double> a{0.2, 0.3, 0.5};
  EXPECT_NEAR(loss_kd<double>(a, a), 0.0, 1e-15);
}

TEST(LossKd, OneHotAgainstUniform) {
  std::vector<double> q{1, 0}, p{0.5, 0.5};
  EXPECT_NEAR(loss_kd<double>(p, q), kLog2, 1e-12);
}

TEST(LossKd, MatchesTermByTermOracle) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto q = random_simplex(rng, 5), p = random_simplex(rng, 5);
    EXPECT_NEAR(loss_kd<double>(p, q), brute_kl(q, p), 1e-10);
  }
}

TEST(LossKd, LogitGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const int B = 3, K = 6;
  std::vector<double> logits(B * K);
  for (auto& v : logits) v = rng.normal();
  const auto q = random_simplex_rows(rng, B, K);
  const auto p = softmax_of(logits, B, K);
  const auto g = softmax_backward(p, loss_kd_batch(p, q).d_probs);
  const auto num = central_difference(logits, [&](const std::vector<double>& l) {
    return loss_kd_batch(softmax_of(l, B, K), q).value;
  }, 1e-6);
  EXPECT_LT(relative_error(g.data, num), 1e-7);
}

TEST(LossTesla, ZeroWeightEqualsPseudoLabelLoss) {
  Rng rng(5);
  BatchPredictions<double> b{random_simplex_rows(rng, 4, 3), random_simplex_rows(rng, 4, 3),
                             random_simplex_rows(rng, 4, 3)};
  EXPECT_EQ(loss_tesla(b, 0.0).value, loss_pl(b.student_probs, b.pseudo_labels).value);
}

TEST(LossTesla, SingleItemIsSumOfParts) {
  Rng rng(6);
  BatchPredictions<double> b{random_simplex_rows(rng, 1, 4), random_simplex_rows(rng, 1, 4),
                             random_simplex_rows(rng, 1, 4)};
  const double expect = loss_pl(b.student_probs, b.pseudo_labels).value +
                        loss_kd<double>(b.student_probs_aug.row(0), b.pseudo_labels.row(0));
  EXPECT_NEAR(loss_tesla(b, 1.0).value, expect, 1e-14);
}

TEST(LossTesla, MismatchedBlocksAreAShapeError) {
  Rng rng(7);
  BatchPredictions<double> b{random_simplex_rows(rng, 4, 3), random_simplex_rows(rng, 3, 3),
                             random_simplex_rows(rng, 4, 3)};
  EXPECT_THROW(loss_tesla(b, 1.0), ShapeError);
}

TEST(MeanEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const int B = 4, K = 5;
  std::vector<double> logits(B * K);
  for (auto& v : logits) v = rng.normal();
  const auto p = softmax_of(logits, B, K);
  const auto g = softmax_backward(p, mean_entropy(p).d_probs);
  const auto num = central_difference(logits, [&](const std::vector<double>& l) {
    return mean_entropy(softmax_of(l, B, K)).value;
  }, 1e-6);
  EXPECT_LT(relative_error(g.data, num), 1e-7);
}

TEST(MiIdentity, IdenticalDistributionsHaveNoKl) {
  Rng rng(9);
  const auto p = random_simplex_rows(rng, 6, 4);
  const auto t = mi_identity_terms(p, p);
  EXPECT_NEAR(t.conditional_kl, 0.0, 1e-15);
  EXPECT_LT(t.residual(), 1e-10);
}

TEST(MiIdentity, IndependentOfXHasNoMutualInformation) {
  Rng rng(10);
  const auto row = random_simplex(rng, 4);
  Matrix<double> p(5, 4);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 4; ++k) p(i, k) = row[k];
  const auto q = random_simplex_rows(rng, 5, 4);
  const auto t = mi_identity_terms(p, q);
  EXPECT_NEAR(t.mutual_info, 0.0, 1e-14);
  EXPECT_LT(t.residual(), 1e-10);
}

TEST(MiIdentity, HoldsOnRandomInstances) {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_simplex_rows(rng, 8, 4), q = random_simplex_rows(rng, 8, 4);
    EXPECT_LT(verify_mi_identity(p, q), 1e-9);
  }
}

TEST(MiIdentity, FlippedCeMinusMarginalEntropyIsLossPl) {
  // for uniform X and unfloored inputs the identity's left side is exactly loss_pl
  Rng rng(12);
  const auto p = random_simplex_rows(rng, 8, 4), q = random_simplex_rows(rng, 8, 4);
  EXPECT_NEAR(mi_identity_terms(p, q).lhs(), loss_pl(p, q).value, 1e-12);
}

}  // namespace
