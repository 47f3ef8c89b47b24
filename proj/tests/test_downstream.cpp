#include "checks.hpp"

#include "best/downstream.hpp"
#include "best/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace best;
using namespace best::testing;

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

TEST(Metrics, HandCountedThreeSamples) {
  // class 0: one of two right; class 1: its only sample right
  const std::vector<std::vector<double>> s{{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}};
  const auto r = metrics_from_scores(s, {0, 0, 1}, 2);
  EXPECT_EQ(round2(r.per_instance_top1), 66.67);
  EXPECT_EQ(round2(r.per_class_top1), 75.00);
  EXPECT_EQ(r.confusion[0][1], 1u);
  EXPECT_EQ(r.class_counts, (std::vector<std::size_t>{2, 1}));
}

TEST(Metrics, BalancedSetsGiveEqualAverages) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = 3 + trial % 17, per = 1 + trial % 7;
    std::vector<std::vector<double>> s;
    std::vector<int> y;
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < per; ++k) {
        std::vector<double> v(static_cast<std::size_t>(classes));
        for (auto& x : v) x = n(rng);
        v[static_cast<std::size_t>(c)] += 1.0;
        s.push_back(v);
        y.push_back(c);
      }
    const auto r = metrics_from_scores(s, y, classes);
    EXPECT_EQ(r.per_instance_top1, r.per_class_top1);
    EXPECT_EQ(r.per_instance_top5, r.per_class_top5);
    EXPECT_GE(r.per_instance_top5, r.per_instance_top1);
    EXPECT_GE(r.per_class_top5, r.per_class_top1);
  }
}

TEST(Metrics, AbsentClassesAreSkipped) {
  const auto r = metrics_from_scores({{1, 0, 0}, {0, 0, 1}}, {0, 2}, 3);
  EXPECT_EQ(r.per_class_top1, 100.0);
  EXPECT_THROW(metrics_from_scores({{1, 0}}, {3}, 2), Error);
  EXPECT_THROW(metrics_from_scores({}, {}, 2), Error);
}

TEST(Metrics, TiesBreakTowardLowerIndex) {
  EXPECT_EQ(label_rank({0.5, 0.5, 0.1}, 0), 0u);
  EXPECT_EQ(label_rank({0.5, 0.5, 0.1}, 1), 1u);
  EXPECT_EQ(top1({0.2, 0.7, 0.7}), 1);
  const auto r = metrics_from_scores({{1, 1, 1, 1, 1, 1}}, {5}, 6);
  EXPECT_EQ(r.per_instance_top1, 0.0);
  EXPECT_EQ(r.per_instance_top5, 0.0);
}

TEST(Fusion, SoftmaxBeforeSumCanFlipTheDecision) {
  // pose branch narrowly prefers class 0, external branch strongly class 1
  const std::vector<double> pose{2.0, 1.5, -1.0}, rgb{0.0, 3.0, 0.0};
  EXPECT_EQ(top1(pose), 0);
  EXPECT_EQ(top1(late_fuse(pose, rgb)), 1);
  const auto raw = late_fuse(pose, rgb, {1.0, 1.0}, true);
  EXPECT_EQ(raw, (std::vector<double>{2.0, 4.5, -1.0}));
  const auto w = late_fuse(pose, rgb, {1.0, 0.0});
  EXPECT_EQ(top1(w), 0);
  EXPECT_THROW(late_fuse({1.0}, {1.0, 2.0}), Error);
}

TEST(Fusion, SymmetricUnderSwap) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int k = 0; k < 50; ++k) {
    std::vector<double> a(9), b(9);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    EXPECT_EQ(late_fuse(a, b), late_fuse(b, a));
    const auto f = late_fuse(a, b);
    double sum = 0;
    for (double v : f) sum += v;
    EXPECT_NEAR(sum, 2.0, 1e-12);
  }
}

TEST(Fusion, ScoreFilesMatchById) {
  const std::vector<ScoreRecord> a{{"x", {1, 0}}, {"y", {0, 1}}};
  const std::vector<ScoreRecord> b{{"y", {5, 0}}, {"x", {0, 0}}};
  const auto f = fuse_scores(a, b, {1, 1}, true);
  EXPECT_EQ(f[0].id, "x");
  EXPECT_EQ(f[1].scores, (std::vector<double>{5, 1}));
  EXPECT_THROW(fuse_scores(a, {{"x", {0, 0}}, {"z", {0, 0}}}), Error);
  EXPECT_THROW(fuse_scores(a, {{"x", {0, 0}}}), Error);
}

TEST(Finetune, StepDecayAtEpochTen) {
  EXPECT_DOUBLE_EQ(step_decay_lr(1e-4, 9, 10, 0.1), 1e-4);
  EXPECT_NEAR(step_decay_lr(1e-4, 10, 10, 0.1), 1e-5, 1e-20);
  const auto ds = synth_generate(SynthParams{2, 2, 8, 2, 0.01, 1});
  auto m = classifier_from_scratch<float>(small_model(), 2, 1);
  FinetuneConfig cfg;
  cfg.epochs = 12;
  cfg.batch = 4;
  TrainLog log;
  finetune(ds, m, cfg, 1, &log);
  EXPECT_DOUBLE_EQ(log.records[9]["lr"].get<double>(), 1e-4);
  EXPECT_NEAR(log.records[10]["lr"].get<double>(), 1e-5, 1e-12);
}

TEST(Finetune, RejectsBadData) {
  auto ds = synth_generate(SynthParams{2, 2, 8, 2, 0.01, 1});
  auto m = classifier_from_scratch<float>(small_model(), 3, 1);
  EXPECT_THROW(finetune(ds, m, {}, 1), Error);
  ds.sequences[0].label.reset();
  auto m2 = classifier_from_scratch<float>(small_model(), 2, 1);
  try {
    finetune(ds, m2, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Classifier, DeterministicAndIndependentOfPretrainedCopy) {
  auto pre = init_pretrained<double>(small_model(), 8, 8, 4);
  auto c = classifier_from_pretrained(pre, 3, 5);
  PoseSequence s;
  s.frames = random_units(12, 6);
  const auto a = classify(s, c);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a, classify(s, c));
  // the classifier owns its weights
  pre.encoder.layers[0].query.weight.mutable_value().setZero();
  EXPECT_EQ(a, classify(s, c));
  EXPECT_EQ(c.embedding.hand1.weight.value(), init_pretrained<double>(small_model(), 8, 8, 4).embedding.hand1.weight.value());
}

TEST(Classifier, FiniteDifferences) {
  const auto rep = classifier_gradients(small_model(), 31, 6);
  EXPECT_TRUE(rep.ok()) << describe(rep);
}

TEST(Reports, FormatAndCsv) {
  const auto r = metrics_from_scores({{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}}, {0, 0, 1}, 2);
  const auto text = format_report(r, {"hello", "thanks"});
  EXPECT_NE(text.find("66.67"), std::string::npos);
  EXPECT_NE(text.find("75.00"), std::string::npos);
  EXPECT_EQ(confusion_csv(r, {"hello", "thanks"}), "true\\pred,hello,thanks\nhello,1,1\nthanks,0,1\n");
  EXPECT_EQ(to_json(r)["samples"], 3);
}
