#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tta/nn.hpp"

using namespace tta;
using namespace tta::testing;

namespace {

// Scalar probe: sum of weighted logits plus weighted block means.
struct Probe {
  std::vector<double> w_logits;
  std::vector<std::vector<double>> w_means;

  double value(const ForwardResult<double>& r) const {
    double s = 0;
    for (std::size_t i = 0; i < r.logits.data.size(); ++i) s += w_logits[i] * r.logits.data[i];
    for (std::size_t l = 0; l < r.block_means.size(); ++l)
      for (std::size_t i = 0; i < r.block_means[l].data.size(); ++i) s += w_means[l][i] * r.block_means[l].data[i];
    return s;
  }

  Upstream<double> upstream(const ForwardResult<double>& r) const {
    Upstream<double> up;
    up.d_logits = r.logits;
    up.d_logits.data = w_logits;
    for (std::size_t l = 0; l < r.block_means.size(); ++l) {
      auto m = r.block_means[l];
      m.data = w_means[l];
      up.d_block_means.push_back(m);
    }
    return up;
  }
};

Probe make_probe(Rng& rng, const ForwardResult<double>& r) {
  Probe p;
  for (std::size_t i = 0; i < r.logits.data.size(); ++i) p.w_logits.push_back(rng.uniform(-1, 1));
  for (const auto& m : r.block_means) {
    std::vector<double> w;
    for (std::size_t i = 0; i < m.data.size(); ++i) w.push_back(rng.uniform(-1, 1));
    p.w_means.push_back(w);
  }
  return p;
}

class NnGradient : public ::testing::TestWithParam<NormMode> {};

TEST_P(NnGradient, ParameterAndInputGradientsMatchFiniteDifferences) {
  Rng rng(7);
  auto model = tiny_model(rng);
  std::vector<Image<double>> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(random_image(rng, 3, 8, 8));
  const auto x = stack<double>(imgs);
  const NormMode mode = GetParam();

  ForwardTrace<double> trace;
  auto r = model.forward(x, mode, false, &trace);
  const auto probe = make_probe(rng, r);
  std::vector<double> grad(model.param_vector().size(), 0.0);
  auto dx = model.backward(trace, probe.upstream(r), grad, true);
  ASSERT_TRUE(dx.has_value());

  // parameters (buffers get no gradient)
  std::vector<double> analytic, numeric;
  const double h = 1e-5;
  for (const auto& e : model.params().entries()) {
    if (e.kind == ParamKind::buffer) continue;
    for (std::size_t q = 0; q < e.count; q += 3) {
      const std::size_t i = e.offset + q;
      auto params = model.param_vector();
      const double keep = params[i];
      params[i] = keep + h;
      const double fp = probe.value(model.forward(x, mode));
      params[i] = keep - h;
      const double fm = probe.value(model.forward(x, mode));
      params[i] = keep;
      analytic.push_back(grad[i]);
      numeric.push_back((fp - fm) / (2 * h));
    }
  }
  EXPECT_LT(relative_error(analytic, numeric), 1e-6);

  std::vector<double> xin(x.data.begin(), x.data.end());
  auto f = [&](const std::vector<double>& v) {
    Tensor4<double> t = x;
    t.data = v;
    return probe.value(model.forward(t, mode));
  };
  const auto num_dx = central_difference(xin, f, h);
  EXPECT_LT(relative_error(dx->data, num_dx), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Modes, NnGradient, ::testing::Values(NormMode::batch_stats, NormMode::running_stats));

TEST(Nn, ProbabilitiesSumToOneAndShapesMatch) {
  Rng rng(3);
  auto model = tiny_model(rng);
  std::vector<Image<double>> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_image(rng, 3, 8, 8));
  auto r = model.forward(stack<double>(imgs), NormMode::batch_stats);
  ASSERT_EQ(r.features.rows, 4);
  ASSERT_EQ(r.features.cols, model.arch().feature_dim());
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (double p : r.probs.row(i)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

// Layer-by-layer recomputation on one image with plain loops.
std::vector<double> manual_probs(SplitModel<double>& m, const Image<double>& img) {
  const auto& a = m.arch();
  std::vector<double> cur(img.data.begin(), img.data.end());
  int C = a.in_channels, H = a.height, W = a.width;
  for (int l = 0; l < a.num_blocks(); ++l) {
    const int Co = a.block_channels[l];
    auto w = m.params().tensor(m.block_param_id(l, "conv.weight"));
    auto b = m.params().tensor(m.block_param_id(l, "conv.bias"));
    auto g = m.params().tensor(m.block_param_id(l, "bn.weight"));
    auto be = m.params().tensor(m.block_param_id(l, "bn.bias"));
    auto mu = m.params().tensor(m.block_param_id(l, "bn.running_mean"));
    auto var = m.params().tensor(m.block_param_id(l, "bn.running_var"));
    std::vector<double> act(static_cast<std::size_t>(Co) * H * W);
    for (int o = 0; o < Co; ++o)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double s = b[o];
          for (int c = 0; c < C; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                s += w[((o * C + c) * 3 + dy + 1) * 3 + dx + 1] * cur[(c * H + yy) * W + xx];
              }
          const double n = g[o] * (s - mu[o]) / std::sqrt(var[o] + 1e-5) + be[o];
          act[(o * H + y) * W + x] = std::max(0.0, n);
        }
    std::vector<double> pooled(static_cast<std::size_t>(Co) * (H / 2) * (W / 2));
    for (int o = 0; o < Co; ++o)
      for (int y = 0; y < H / 2; ++y)
        for (int x = 0; x < W / 2; ++x)
          pooled[(o * (H / 2) + y) * (W / 2) + x] =
              0.25 * (act[(o * H + 2 * y) * W + 2 * x] + act[(o * H + 2 * y) * W + 2 * x + 1] +
                      act[(o * H + 2 * y + 1) * W + 2 * x] + act[(o * H + 2 * y + 1) * W + 2 * x + 1]);
    cur = pooled;
    C = Co;
    H /= 2;
    W /= 2;
  }
  std::vector<double> z(C, 0.0);
  for (int c = 0; c < C; ++c) {
    for (int q = 0; q < H * W; ++q) z[c] += cur[c * H * W + q];
    z[c] /= H * W;
  }
  const auto hw = m.params().tensor(m.head_weight_id());
  const auto hb = m.params().tensor(m.head_bias_id());
  std::vector<double> logits(a.num_classes);
  double mx = -1e300;
  for (int k = 0; k < a.num_classes; ++k) {
    logits[k] = hb[k];
    for (int d = 0; d < C; ++d) logits[k] += hw[k * C + d] * z[d];
    mx = std::max(mx, logits[k]);
  }
  double s = 0;
  for (auto& v : logits) s += (v = std::exp(v - mx));
  for (auto& v : logits) v /= s;
  return logits;
}

TEST(Nn, MatchesManualLayerByLayerForward) {
  Rng rng(11);
  auto model = tiny_model(rng);
  const auto img = random_image(rng, 3, 8, 8);
  std::vector<Image<double>> imgs{img};
  const auto r = model.forward(stack<double>(imgs), NormMode::running_stats);
  const auto ref = manual_probs(model, img);
  for (int k = 0; k < model.arch().num_classes; ++k) EXPECT_NEAR(r.probs(0, k), ref[k], 1e-6);
}

TEST(Nn, DuplicatedImageGivesIdenticalRows) {
  Rng rng(12);
  auto model = tiny_model(rng);
  const auto img = random_image(rng, 3, 8, 8);
  std::vector<Image<double>> imgs{img, random_image(rng, 3, 8, 8), img};
  const auto r = model.forward(stack<double>(imgs), NormMode::running_stats);
  for (int k = 0; k < model.arch().num_classes; ++k) EXPECT_EQ(r.probs(0, k), r.probs(2, k));
  for (int d = 0; d < r.features.cols; ++d) EXPECT_EQ(r.features(0, d), r.features(2, d));
}

TEST(Nn, FrozenHeadReceivesNoGradient) {
  Rng rng(5);
  auto model = tiny_model(rng);
  model.freeze_head();
  std::vector<Image<double>> imgs{random_image(rng, 3, 8, 8), random_image(rng, 3, 8, 8)};
  ForwardTrace<double> trace;
  auto r = model.forward(stack<double>(imgs), NormMode::batch_stats, false, &trace);
  Upstream<double> up;
  up.d_logits = r.logits;
  std::vector<double> grad(model.param_vector().size(), 0.0);
  model.backward(trace, up, grad, false);
  for (auto id : {model.head_weight_id(), model.head_bias_id()}) {
    const auto& e = model.params().entry(id);
    for (std::size_t i = 0; i < e.count; ++i) EXPECT_EQ(grad[e.offset + i], 0.0);
  }
}

TEST(Nn, RunningStatisticsUpdateOnlyWhenAsked) {
  Rng rng(9);
  auto model = tiny_model(rng);
  std::vector<Image<double>> imgs{random_image(rng, 3, 8, 8), random_image(rng, 3, 8, 8)};
  const auto before = std::vector<double>(model.param_vector().begin(), model.param_vector().end());
  model.forward(stack<double>(imgs), NormMode::batch_stats, false);
  EXPECT_TRUE(std::ranges::equal(before, model.param_vector()));
  model.forward(stack<double>(imgs), NormMode::batch_stats, true);
  EXPECT_FALSE(std::ranges::equal(before, model.param_vector()));
}

TEST(Nn, NonFiniteInputFailsNamingTheLayer) {
  Rng rng(1);
  auto model = tiny_model(rng);
  auto img = random_image(rng, 3, 8, 8);
  img.data[5] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Image<double>> imgs{img};
  try {
    model.forward(stack<double>(imgs), NormMode::running_stats);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block0.conv"), std::string::npos);
  }
}

TEST(Nn, RejectsMismatchedInputShape) {
  Rng rng(2);
  auto model = tiny_model(rng);
  std::vector<Image<double>> imgs{random_image(rng, 3, 16, 16)};
  EXPECT_THROW(model.forward(stack<double>(imgs), NormMode::running_stats), ShapeError);
}

}  // namespace
