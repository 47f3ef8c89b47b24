#include "checks.hpp"

#include "best/backbone.hpp"
#include "best/synth.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace best;
using namespace best::testing;

namespace {

PretrainedModel<double> model(int hand = 32, int body = 32, std::uint64_t seed = 1, int frames = 8) {
  return init_pretrained<double>(small_model(frames), hand, body, seed);
}

void zero_heads(PretrainedModel<double>& m) {
  m.heads.visit("h", [](const std::string&, ag::Var<double>& v) { v.mutable_value().setZero(); });
}

}  // namespace

TEST(Encoder, ShapesForSeveralLengths) {
  for (int t : {1, 8, 32}) {
    auto m = model(32, 32, 1, t);
    const auto frames = random_units(static_cast<std::size_t>(t), 2);
    const auto plan = sample_mask(t, 0.5, 3);
    const auto out = pretrained_forward(m, frames, plan);
    EXPECT_EQ(out.rows(), t);
    EXPECT_EQ(out.cols(), 96);
    const auto probs = predict_tokens(out, m.heads);
    EXPECT_EQ(probs.left.rows(), t);
    EXPECT_EQ(probs.left.cols(), 32);
  }
}

TEST(Encoder, RejectsWrongWidth) {
  auto m = model();
  try {
    encode_sequence(ag::constant<double>(Matrix<double>::Zero(4, 90)), m.encoder);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Encoder, PermutationEquivariant) {
  auto m = model();
  const Matrix<double> x = random_matrix<double>(6, 96, 4);
  const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  Matrix<double> xp(6, 96);
  for (Index i = 0; i < 6; ++i) xp.row(i) = x.row(perm[i]);
  const auto y = encode_sequence(ag::constant<double>(x), m.encoder).value();
  const auto yp = encode_sequence(ag::constant<double>(xp), m.encoder).value();
  for (Index i = 0; i < 6; ++i) EXPECT_TRUE(yp.row(i).isApprox(y.row(perm[i]), 1e-12));
}

TEST(Encoder, EvalModeIsDeterministicTrainingModeIsNot) {
  auto m = model();
  const auto in = ag::constant<double>(random_matrix<double>(5, 96, 6));
  EXPECT_EQ(encode_sequence(in, m.encoder).value(), encode_sequence(in, m.encoder).value());
  std::mt19937_64 rng(1);
  const ForwardMode train{&rng, 0.1};
  EXPECT_NE(encode_sequence(in, m.encoder, train).value(), encode_sequence(in, m.encoder).value());
}

TEST(Heads, DistributionsAndSharedHandHead) {
  auto m = model(40, 20);
  const auto frames = random_units(8, 7);
  const auto out = pretrained_forward(m, frames, MaskPlan{8, {}});
  const auto p = predict_tokens(out, m.heads);
  for (Part part : kParts)
    for (Index r = 0; r < 8; ++r) {
      EXPECT_NEAR(p[part].row(r).sum(), 1.0, 1e-12);
      EXPECT_GE(p[part].row(r).minCoeff(), 0.0);
    }
  EXPECT_EQ(p.body.cols(), 20);
  // identical left/right features give identical hand distributions
  Matrix<double> same = out.value();
  same.middleCols(32, 32) = same.middleCols(0, 32);
  const auto q = predict_tokens(ag::constant<double>(same), m.heads);
  EXPECT_EQ(q.left, q.right);
}

TEST(MumLoss, UniformPredictionsGiveLogCodebookSize) {
  auto m = model(1000, 500);
  zero_heads(m);
  const auto frames = random_units(8, 8);
  const auto labels = random_labels(8, 1000, 500, 9);
  const MaskPlan hands{8, {{1, {true, true, false}}, {4, {true, false, false}}}};
  const MaskPlan body{8, {{2, {false, false, true}}, {6, {false, false, true}}}};
  for (const auto* plan : {&hands, &body}) {
    const auto p = predict_tokens(pretrained_forward(m, frames, *plan), m.heads);
    const double expected = plan == &hands ? 6.907755278982137 : 6.214608098422191;
    EXPECT_NEAR(mum_loss(p, labels, *plan), expected, 1e-6);
    const auto l = masked_token_loss(pretrained_forward(m, frames, *plan), m.heads, labels, *plan);
    EXPECT_NEAR(l.sum.scalar() / static_cast<double>(l.count()), expected, 1e-6);
  }
}

TEST(MumLoss, IgnoresLabelsAtUnmaskedPositions) {
  auto m = model();
  const auto frames = random_units(8, 10);
  auto labels = random_labels(8, 32, 32, 11);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto plan = sample_mask(8, 0.5, s);
    const auto p = predict_tokens(pretrained_forward(m, frames, plan), m.heads);
    const double before = mum_loss(p, labels, plan);
    auto changed = labels;
    for (int t = 0; t < 8; ++t)
      for (Part part : kParts) {
        const bool masked = std::any_of(plan.frames.begin(), plan.frames.end(),
                                        [&](const MaskedFrame& f) { return f.frame == t && f.masks(part); });
        if (masked) continue;
        auto& slot = part == Part::left ? changed[t].left : part == Part::right ? changed[t].right : changed[t].body;
        slot = (slot + 7) % 32;
      }
    EXPECT_EQ(before, mum_loss(p, changed, plan));
    // and the training graph agrees
    const auto a = masked_token_loss(pretrained_forward(m, frames, plan), m.heads, labels, plan);
    const auto b = masked_token_loss(pretrained_forward(m, frames, plan), m.heads, changed, plan);
    EXPECT_EQ(a.sum.scalar(), b.sum.scalar());
  }
}

TEST(MumLoss, EmptyPlanWarnsAndIsZero) {
  auto m = model();
  const auto frames = random_units(8, 12);
  const auto labels = random_labels(8, 32, 32, 13);
  const auto plan = sample_mask(8, 0.0, 1);
  ASSERT_TRUE(plan.empty());
  std::vector<std::string> seen;
  auto keep = warning_handler();
  warning_handler() = [&](const std::string& msg) { seen.push_back(msg); };
  const auto p = predict_tokens(pretrained_forward(m, frames, plan), m.heads);
  EXPECT_EQ(mum_loss(p, labels, plan), 0.0);
  warning_handler() = keep;
  EXPECT_EQ(seen.size(), 1u);
  EXPECT_EQ(pretrain_loss(m, frames, labels, plan).count(), 0u);
}

TEST(Gradients, PretrainTokenObjective) {
  const auto rep = pretrain_gradients(small_model(), PretrainObjective::token, 21, 8);
  EXPECT_TRUE(rep.ok()) << describe(rep);
}

TEST(Gradients, PretrainRegressionObjective) {
  const auto rep = pretrain_gradients(small_model(), PretrainObjective::regress, 22, 6);
  EXPECT_TRUE(rep.ok()) << describe(rep);
}

TEST(Gradients, PerPartMaskToken) {
  auto cfg = small_model();
  cfg.per_part_mask_token = true;
  cfg.layers = 1;
  const auto rep = pretrain_gradients(cfg, PretrainObjective::token, 23, 6);
  EXPECT_TRUE(rep.ok()) << describe(rep);
}

TEST(Config, ValidationMessages) {
  auto c = small_model();
  c.model_dim = 100;
  const auto v = validate(c);
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v.front().find("multiple of 3"), std::string::npos);
  EXPECT_THROW(init_pretrained<double>(c, 4, 4, 1), Error);
  EXPECT_TRUE(validate(small_model()).empty());
}

TEST(Pretrain, RequiresFrozenTokenizer) {
  const auto ds = synth_generate(SynthParams{2, 2, 8, 2, 0.01, 1});
  TokenizerConfig tc;
  tc.kind = TokenizerKind::kmeans;
  tc.hand_codes = 4;
  tc.body_codes = 4;
  auto tok = build_tokenizer<float>(ds, tc, 1);
  PretrainConfig pc;
  pc.epochs = 1;
  pc.batch = 2;
  try {
    pretrain<float>(ds, tok, small_model(), pc, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
  }
}

TEST(Pretrain, LossFallsAndTokenizerUntouched) {
  const auto ds = synth_generate(SynthParams{2, 4, 8, 2, 0.01, 2});
  TokenizerConfig tc;
  tc.kind = TokenizerKind::kmeans;
  tc.hand_codes = 6;
  tc.body_codes = 6;
  auto tok = build_tokenizer<float>(ds, tc, 1);
  tok.freeze();
  const auto h = parameter_hash<float>(tok);
  PretrainConfig pc;
  pc.epochs = 30;
  pc.batch = 2;
  pc.lr = 5e-4;
  pc.warmup_epochs = 2;
  TrainLog log;
  const auto m = pretrain<float>(ds, tok, small_model(), pc, 3, &log);
  EXPECT_EQ(parameter_hash<float>(tok), h);
  ASSERT_EQ(log.records.size(), 31u);
  EXPECT_EQ(log.records.back()["split"], "eval");
  EXPECT_LT(log.records[29]["loss"].get<double>(), log.records[0]["loss"].get<double>());
  EXPECT_TRUE(m.metadata.contains("final_loss"));
  EXPECT_EQ(m.metadata["tokenizer_hash"].get<std::uint64_t>(), h);
  // the warmup reaches the base rate and the schedule decays afterwards
  EXPECT_NEAR(log.records[1]["lr"].get<double>(), 5e-4, 1e-12);
  EXPECT_LT(log.records[20]["lr"].get<double>(), 5e-4);
}

TEST(Pretrain, SameSeedSameModel) {
  const auto ds = synth_generate(SynthParams{2, 2, 8, 2, 0.01, 2});
  TokenizerConfig tc;
  tc.kind = TokenizerKind::kmeans;
  tc.hand_codes = 4;
  tc.body_codes = 4;
  auto tok = build_tokenizer<float>(ds, tc, 1);
  tok.freeze();
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch = 2;
  auto a = pretrain<float>(ds, tok, small_model(), pc, 5);
  auto b = pretrain<float>(ds, tok, small_model(), pc, 5);
  EXPECT_EQ(parameter_hash<float>(a), parameter_hash<float>(b));
}
