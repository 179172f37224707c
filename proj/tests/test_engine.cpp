#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "test_util.hpp"
#include "tta/engine.hpp"

using namespace tta;
using namespace tta::testing;

namespace {

std::vector<Batch<double>> make_stream(Rng& rng, int batches, int batch_size, int K = 5) {
  std::vector<Batch<double>> s;
  std::size_t id = 0;
  for (int b = 0; b < batches; ++b) {
    Batch<double> batch;
    for (int i = 0; i < batch_size; ++i) {
      batch.images.push_back(smooth_image(rng, 3, 8, 8));
      batch.labels.push_back(static_cast<int>(rng.index(K)));
      batch.ids.push_back(id++);
    }
    s.push_back(std::move(batch));
  }
  return s;
}

AdaptationConfig small_config() {
  AdaptationConfig c;
  c.batch_size = 4;
  c.learning_rate = 1e-2;
  c.alpha = 0.9;
  c.num_weak_views = 2;
  c.queue_size = 2;
  c.num_neighbors = 2;
  c.seed = 17;
  return c;
}

struct Fixture {
  Rng rng{99};
  SplitModel<double> source = tiny_model(rng);
  std::vector<Batch<double>> stream = make_stream(rng, 4, 4);
};

TEST(Engine, StagesRunInDocumentedOrder) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  std::vector<Stage> seen;
  a.set_observer([&](Stage s) { seen.push_back(s); });
  a.adapt_step(f.stream[0].images);
  EXPECT_EQ(seen, (std::vector<Stage>{Stage::pseudo_labels, Stage::policy_update, Stage::student_update,
                                      Stage::teacher_update, Stage::predict}));
}

TEST(Engine, TeacherOnlyChangesInTeacherStage) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  std::vector<double> last(a.pair().teacher().param_vector().begin(), a.pair().teacher().param_vector().end());
  std::vector<Stage> changed_in;
  a.set_observer([&](Stage s) {
    std::vector<double> now(a.pair().teacher().param_vector().begin(), a.pair().teacher().param_vector().end());
    if (now != last) changed_in.push_back(s);
    last = now;
  });
  a.adapt_step(f.stream[0].images);
  // the change made during teacher_update becomes visible at the next hook
  EXPECT_EQ(changed_in, std::vector<Stage>{Stage::predict});
}

TEST(Engine, IdenticalStateAndBatchGiveBitIdenticalResults) {
  Fixture f;
  Adapter<double> a(f.source, small_config()), b(f.source, small_config());
  for (int t = 0; t < 2; ++t) {
    const auto ra = a.adapt_step(f.stream[t].images);
    const auto rb = b.adapt_step(f.stream[t].images);
    EXPECT_EQ(ra.loss_total, rb.loss_total);
    EXPECT_EQ(ra.predictions, rb.predictions);
  }
}

TEST(Engine, SingleImageBatch) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  std::vector<Image<double>> one{f.stream[0].images[0]};
  const auto r = a.adapt_step(one);
  EXPECT_TRUE(std::isfinite(r.loss_total));
  EXPECT_EQ(r.predictions.rows, 1);
  // with one row the marginal entropy equals the row entropy
  const auto p = f.source.forward(stack<double>(one), NormMode::batch_stats).probs;
  double h = 0;
  for (int k = 0; k < p.cols; ++k) h -= p(0, k) * std::log(p(0, k));
  EXPECT_GE(r.loss_pl, -h - 1e-12);
}

TEST(Engine, OnePassReportsOnePredictionPerSample) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  ASSERT_TRUE(a.run(f.stream));
  EXPECT_EQ(a.report().final_predictions.size(), 16u);
  EXPECT_EQ(a.report().online.size(), 4u);
  EXPECT_EQ(a.report().epochs.size(), 1u);
}

TEST(Engine, MultiPassUsesFinalInferencePass) {
  Fixture f;
  auto c = small_config();
  c.protocol = Protocol::multi_pass;
  c.epochs = 2;
  Adapter<double> m(f.source, c);
  ASSERT_TRUE(m.run(f.stream));
  EXPECT_EQ(m.report().online.size(), 8u);
  EXPECT_EQ(m.report().epochs.size(), 2u);
  EXPECT_EQ(m.report().final_predictions.size(), 16u);
  EXPECT_EQ(m.report().policy_history.size(), 2u);
  // final-pass records differ from the online ones of the last epoch
  const auto online = to_records(std::span<const BatchRecord>(m.report().online).subspan(4));
  EXPECT_NE(online, m.report().final_predictions);
}

TEST(Engine, OnePassRejectsMultipleEpochs) {
  auto c = small_config();
  c.epochs = 3;
  Fixture f;
  EXPECT_THROW(Adapter<double>(f.source, c), ConfigError);
}

TEST(Engine, EmptyStreamIsConfigError) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  EXPECT_THROW(a.run(std::span<const Batch<double>>{}), ConfigError);
}

TEST(Engine, ResumeMatchesUninterruptedRun) {
  Fixture f;
  auto c = small_config();
  c.protocol = Protocol::multi_pass;
  c.epochs = 2;
  Adapter<double> full(f.source, c);
  full.run(f.stream);

  Adapter<double> first(f.source, c);
  EXPECT_FALSE(first.run(f.stream, {5}));
  const auto saved = nlohmann::json::parse(first.state_json().dump());
  Adapter<double> second(f.source, c);
  second.load_state_json(saved);
  EXPECT_TRUE(second.run(f.stream));
  EXPECT_EQ(second.report(), full.report());
}

TEST(Engine, NonFiniteInputAbortsWithDiagnostic) {
  Fixture f;
  auto stream = f.stream;
  stream[2].images[1].data[3] = std::numeric_limits<double>::quiet_NaN();
  Adapter<double> a(f.source, small_config());
  try {
    a.run(stream);
    FAIL() << "expected AdaptationAborted";
  } catch (const AdaptationAborted& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("policy"), std::string::npos) << msg;
  }
}

TEST(Engine, HeadStaysByteIdenticalAcrossRun) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  a.run(f.stream);
  for (const auto* m : {&a.pair().student(), &a.pair().teacher()})
    for (auto id : {m->head_weight_id(), m->head_bias_id()}) {
      const std::span<const double> got = m->params().tensor(id), want = f.source.params().tensor(id);
      ASSERT_EQ(std::memcmp(got.data(), want.data(), got.size() * sizeof(double)), 0);
    }
}

TEST(Engine, SourceOnlyEqualsDirectInference) {
  Fixture f;
  auto c = small_config();
  c.method = Method::source_only;
  Adapter<double> a(f.source, c);
  a.run(f.stream);
  for (std::size_t b = 0; b < f.stream.size(); ++b)
    EXPECT_EQ(a.report().online[b].probs, f.source.forward(stack<double>(f.stream[b].images), NormMode::running_stats).probs);
  EXPECT_TRUE(std::ranges::equal(a.pair().student().param_vector(), f.source.param_vector()));
}

TEST(Engine, EntropyMinOnlyTouchesNormalizationAffine) {
  Fixture f;
  auto c = small_config();
  c.method = Method::entropy_min;
  Adapter<double> a(f.source, c);
  a.run(f.stream);
  const auto& s = a.pair().student();
  for (const auto& e : s.params().entries()) {
    const bool moved = !std::equal(s.param_vector().begin() + e.offset, s.param_vector().begin() + e.offset + e.count,
                                   f.source.param_vector().begin() + e.offset);
    const bool affine = e.name.find(".bn.weight") != std::string::npos || e.name.find(".bn.bias") != std::string::npos;
    const bool stats = e.name.find("running") != std::string::npos;
    if (!affine && !stats) EXPECT_FALSE(moved) << e.name;
    if (affine) EXPECT_TRUE(moved) << e.name;
  }
}

TEST(Engine, DegenerateSettingIsMutualInformationStep) {
  // lambda2 = 0, n = 1, N_Q = 1, one identity weak view, alpha = 0: the loss is
  // mean row entropy minus marginal entropy of the student on the clean batch
  Fixture f;
  auto c = small_config();
  c.lambda2 = 0;
  c.num_neighbors = 1;
  c.queue_size = 1;
  c.num_weak_views = 1;
  c.weak = WeakAugmenter::identity();
  c.alpha = 0;
  c.frozen_norm_stats = true;
  Adapter<double> a(f.source, c);
  for (int t = 0; t < 3; ++t) {
    const auto p = a.pair().student().forward(stack<double>(f.stream[t].images), NormMode::running_stats).probs;
    double cond = 0, marg = 0;
    std::vector<double> pbar(p.cols, 0.0);
    for (int i = 0; i < p.rows; ++i)
      for (int k = 0; k < p.cols; ++k) {
        cond -= p(i, k) * std::log(p(i, k)) / p.rows;
        pbar[k] += p(i, k) / p.rows;
      }
    for (double v : pbar) marg -= v * std::log(v);
    const auto r = a.adapt_step(f.stream[t].images);
    EXPECT_NEAR(r.loss_total, cond - marg, 1e-12);
  }
}

TEST(Engine, PredictBeforeAdaptUsesPreStepModel) {
  Fixture f;
  auto c = small_config();
  c.predict_before_adapt = true;
  Adapter<double> a(f.source, c);
  const auto expect = a.predict(f.stream[0].images);
  EXPECT_EQ(a.adapt_step(f.stream[0].images).predictions, expect);
}

TEST(Engine, TeacherNormalizationFollowsConfig) {
  Fixture f;
  auto c = small_config();
  c.evaluate_teacher = true;
  const auto batch = stack<double>(f.stream[0].images);
  for (auto mode : {NormMode::batch_stats, NormMode::running_stats}) {
    c.teacher_norm = mode;
    Adapter<double> a(f.source, c);
    EXPECT_EQ(a.predict(f.stream[0].images), f.source.forward(batch, mode).probs);
  }
  c.teacher_norm = NormMode::batch_stats;
  c.frozen_norm_stats = true;
  Adapter<double> frozen(f.source, c);
  EXPECT_EQ(frozen.predict(f.stream[0].images), f.source.forward(batch, NormMode::running_stats).probs);
}

TEST(Engine, PolicyStaysFeasibleThroughRun) {
  Fixture f;
  auto c = small_config();
  c.gamma = 2.0;
  Adapter<double> a(f.source, c);
  a.set_observer([&](Stage s) {
    if (s != Stage::student_update) return;
    double sum = 0;
    for (double p : a.policy().probs) {
      ASSERT_GE(p, a.policy().prob_floor - 1e-15);
      sum += p;
    }
    ASSERT_NEAR(sum, 1.0, 1e-6);
    for (double m : a.policy().magnitudes.data) ASSERT_TRUE(m >= 0 && m <= 1);
  });
  a.run(f.stream);
}

TEST(Engine, QueueBoundedThroughRun) {
  Fixture f;
  Adapter<double> a(f.source, small_config());
  a.set_observer([&](Stage) {
    for (int k = 0; k < a.queue().num_classes(); ++k) ASSERT_LE(a.queue().class_entries(k).size(), 2u);
  });
  a.run(f.stream);
}

}  // namespace
