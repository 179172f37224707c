#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "tta/model_pair.hpp"

using namespace tta;
using namespace tta::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tta_test_" + name)).string();
}

std::vector<double> values(const SplitModel<double>& m) {
  auto v = m.param_vector();
  return {v.begin(), v.end()};
}

// Rewrites a checkpoint without the named tensor.
void drop_tensor(const std::string& in, const std::string& out, const std::string& name) {
  auto c = read_checkpoint(in);
  nlohmann::json header;
  header["arch"] = arch_to_json(c.arch);
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : c.tensors)
    if (t.at("name") != name) header["tensors"].push_back(t);
  const auto text = header.dump();
  std::ofstream os(out, std::ios::binary);
  os.write(kCheckpointMagic, 8);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : c.values) detail::write_f64(os, v);
}

TEST(ModelPair, StudentAndTeacherStartAtSource) {
  Rng rng(1);
  const auto src = tiny_model(rng);
  ModelPair<double> pair(src, 0.99);
  EXPECT_EQ(values(pair.student()), values(src));
  EXPECT_EQ(values(pair.teacher()), values(src));
  EXPECT_TRUE(pair.student().head_frozen());
  EXPECT_TRUE(pair.teacher().head_frozen());
}

TEST(ModelPair, TeacherUnchangedByStudentWrites) {
  Rng rng(2);
  ModelPair<double> pair(tiny_model(rng), 0.9);
  const auto before = values(pair.teacher());
  for (auto& v : pair.student().param_vector()) v += 1.0;
  std::vector<Image<double>> imgs{random_image(rng, 3, 8, 8), random_image(rng, 3, 8, 8)};
  pair.student().forward(stack<double>(imgs), NormMode::batch_stats, true);
  forward<double>(pair.teacher(), imgs, OutputMode::both);
  EXPECT_EQ(values(pair.teacher()), before);
}

// Single-scalar EMA cases on every non-frozen entry.
double ema_once(double alpha, double teacher, double student) {
  Rng rng(3);
  ModelPair<double> pair(tiny_model(rng), alpha);
  auto s = pair.student().param_vector();
  std::vector<double> sv(s.size(), student), tv(s.size(), teacher);
  pair.set_state(sv, tv);
  pair.ema_update();
  const auto& e = pair.teacher().params().entry(pair.teacher().block_param_id(0, "conv.weight"));
  return pair.teacher().param_vector()[e.offset];
}

TEST(ModelPair, EmaArithmetic) {
  EXPECT_EQ(ema_once(0.0, 1.0, 0.0), 0.0);
  EXPECT_EQ(ema_once(1.0, 1.0, 0.0), 1.0);
  EXPECT_NEAR(ema_once(0.9, 1.0, 0.0), 0.9, 1e-15);
}

TEST(ModelPair, EmaFollowsClosedFormForConstantStudent) {
  Rng rng(4);
  ModelPair<double> pair(tiny_model(rng), 0.8);
  const auto t0 = values(pair.teacher());
  for (auto& v : pair.student().param_vector()) v = 0.25;
  const auto s = values(pair.student());
  for (int step = 1; step <= 25; ++step) {
    pair.ema_update();
    const double a = std::pow(0.8, step);
    const auto t = pair.teacher().param_vector();
    for (const auto& e : pair.teacher().params().entries())
      for (std::size_t i = e.offset; i < e.offset + e.count; ++i) {
        const double expect = e.kind == ParamKind::frozen ? t0[i] : a * t0[i] + (1 - a) * s[i];
        ASSERT_NEAR(t[i], expect, 1e-12);
      }
  }
}

TEST(ModelPair, HeadIdenticalAcrossEmaAndStudentWrites) {
  Rng rng(5);
  ModelPair<double> pair(tiny_model(rng), 0.5);
  const auto head = [&](const SplitModel<double>& m) {
    std::vector<double> v;
    for (auto id : {m.head_weight_id(), m.head_bias_id()}) {
      auto t = m.params().tensor(id);
      v.insert(v.end(), t.begin(), t.end());
    }
    return v;
  };
  const auto h0 = head(pair.teacher());
  for (const auto& e : pair.student().params().entries())
    if (e.kind != ParamKind::frozen)
      for (std::size_t i = e.offset; i < e.offset + e.count; ++i) pair.student().param_vector()[i] += 0.5;
  pair.ema_update();
  EXPECT_EQ(head(pair.teacher()), h0);
  EXPECT_EQ(head(pair.student()), h0);
}

TEST(ModelPair, AlphaOutsideUnitIntervalRejected) {
  Rng rng(6);
  EXPECT_THROW(ModelPair<double>(tiny_model(rng), 1.5), std::invalid_argument);
}

TEST(Checkpoint, RoundTripsExactly) {
  Rng rng(7);
  auto m = tiny_model(rng);
  m.freeze_head();
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, m);
  const auto back = load_model<double>(path, m.arch());
  EXPECT_EQ(values(back), values(m));
  EXPECT_TRUE(back.head_frozen());
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingLayerIsNamed) {
  Rng rng(8);
  const auto m = tiny_model(rng);
  const auto good = temp_path("good.ckpt"), bad = temp_path("bad.ckpt");
  save_checkpoint(good, m);
  drop_tensor(good, bad, "block1.bn.running_var");
  try {
    load_model<double>(bad);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("block1.bn.running_var"), std::string::npos) << e.what();
  }
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
  Rng rng(9);
  const auto m = tiny_model(rng);
  const auto path = temp_path("arch.ckpt");
  save_checkpoint(path, m);
  auto other = m.arch();
  other.num_classes = 7;
  EXPECT_THROW(load_model<double>(path, other), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, BadMagicRejected) {
  const auto path = temp_path("junk.ckpt");
  std::ofstream(path) << "not a checkpoint at all";
  EXPECT_THROW(read_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(ModelForward, BothModeShapes) {
  Rng rng(10);
  const auto m = tiny_model(rng);
  std::vector<Image<double>> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_image(rng, 3, 8, 8));
  const auto out = forward<double>(m, imgs, OutputMode::both);
  ASSERT_TRUE(out.features && out.probs);
  EXPECT_EQ(out.features->rows, 4);
  EXPECT_EQ(out.features->cols, m.arch().feature_dim());
  EXPECT_EQ(out.probs->cols, m.arch().num_classes);
  EXPECT_FALSE(forward<double>(m, imgs, OutputMode::probs).features.has_value());
}

}  // namespace
