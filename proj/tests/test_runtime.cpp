#include "checks.hpp"

#include "best/checkpoint.hpp"
#include "best/config.hpp"
#include "best/runtime.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace best;
using namespace best::testing;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("best_rt_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_config() {
  return {{"synth", {{"num_classes", 2}, {"pretrain_per_class", 2}, {"train_per_class", 2}, {"test_per_class", 2}}},
          {"tokenizer", {{"kind", "kmeans"}, {"hand_codes", 4}, {"body_codes", 4}}},
          {"model", {{"model_dim", 48}, {"ffn_dim", 48}, {"layers", 1}, {"gcn_hidden", 8}}},
          {"pretrain", {{"epochs", 2}, {"batch", 2}}},
          {"finetune", {{"epochs", 2}, {"batch", 2}}}};
}

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli run(std::vector<std::string> args) {
  args.insert(args.begin(), "best_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = run_command(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p.string();
}

}  // namespace

TEST(Config, ProfilesResolve) {
  const auto t = run_config_from_json(merge_with_profile(json::object(), "test"));
  EXPECT_EQ(t.model.model_dim, 96);
  EXPECT_EQ(t.tokenizer.hand_codes, 32);
  const auto f = run_config_from_json(merge_with_profile(json::object(), "full"));
  EXPECT_EQ(f.model.model_dim, 1536);
  EXPECT_EQ(f.model.layers, 6);
  EXPECT_EQ(f.model.ffn_dim, 2048);
  EXPECT_EQ(f.tokenizer.hand_codes, 1000);
  EXPECT_EQ(f.tokenizer.body_codes, 500);
  EXPECT_EQ(f.tokenizer.code_dim, 512);
  EXPECT_EQ(f.model.frames, 32);
  EXPECT_EQ(f.pretrain.lr, 1e-4);
  EXPECT_EQ(f.pretrain.weight_decay, 0.01);
}

TEST(Config, ModelDimNotDivisibleByThree) {
  try {
    run_config_from_json(merge_with_profile({{"model", {{"model_dim", 100}}}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    const std::string w = e.what();
    EXPECT_NE(w.find("model_dim must be a positive multiple of 3"), std::string::npos) << w;
  }
}

TEST(Config, AllViolationsReportedTogether) {
  try {
    run_config_from_json(merge_with_profile({{"pretrain", {{"alpha", 1.5}, {"batch", 0}}}, {"finetune", {{"lr", -1.0}}}}));
    FAIL();
  } catch (const Error& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("3 problems"), std::string::npos) << w;
    EXPECT_NE(w.find("alpha"), std::string::npos);
    EXPECT_NE(w.find("finetune.lr"), std::string::npos);
  }
}

TEST(Config, UnknownKeyRejected) {
  try {
    merge_with_profile({{"pretrain", {{"mask_ratio", 0.3}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("pretrain.mask_ratio"), std::string::npos);
  }
}

TEST(Config, EnvironmentOverrides) {
  ::setenv("BEST_SEED", "42", 1);
  ::setenv("BEST_PATH_TOKENIZER", "/tmp/x.ckpt", 1);
  json j = merge_with_profile(json::object());
  apply_env_overrides(j);
  ::unsetenv("BEST_SEED");
  ::unsetenv("BEST_PATH_TOKENIZER");
  const auto c = run_config_from_json(j);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.paths.tokenizer, "/tmp/x.ckpt");
}

TEST(Config, HashTracksContent) {
  auto a = run_config_from_json(merge_with_profile(json::object()));
  auto b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.pretrain.alpha = 0.25;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  // round trip through JSON is lossless
  EXPECT_EQ(to_json(run_config_from_json(to_json(a))), to_json(a));
}

TEST(Checkpoint, RoundTripGivesIdenticalOutputs) {
  auto m = classifier_from_scratch<float>(small_model(), 4, 3);
  const auto dir = fresh_dir("ckpt");
  save_checkpoint(m, (dir / "c.ckpt").string());
  const auto back = load_classifier<float>((dir / "c.ckpt").string());
  PoseSequence s;
  s.frames = random_units(8, 1);
  EXPECT_EQ(classify(s, m), classify(s, back));
  EXPECT_EQ(parameter_hash<float>(m), parameter_hash<float>(back));
}

TEST(Checkpoint, TokenizerAndPretrainedRoundTrip) {
  const auto dir = fresh_dir("ckpt2");
  TokenizerConfig tc;
  tc.hand_codes = 5;
  tc.body_codes = 3;
  tc.code_dim = 4;
  tc.hidden = 6;
  auto tok = init_tokenizer<float>(tc, 2);
  tok.freeze();
  save_checkpoint(tok, (dir / "t.ckpt").string());
  auto tb = load_tokenizer<float>((dir / "t.ckpt").string());
  EXPECT_TRUE(tb.frozen);
  EXPECT_EQ(parameter_hash<float>(tb), parameter_hash<float>(tok));

  auto pre = init_pretrained<float>(small_model(), 5, 3, 4);
  pre.metadata["final_loss"] = 0.5;
  save_checkpoint(pre, (dir / "p.ckpt").string());
  auto pb = load_pretrained<float>((dir / "p.ckpt").string());
  EXPECT_EQ(parameter_hash<float>(pb), parameter_hash<float>(pre));
  EXPECT_EQ(pb.metadata["final_loss"], 0.5);
  const auto frames = random_units(8, 3);
  const auto plan = sample_mask(8, 0.5, 1);
  EXPECT_EQ(pretrained_forward(pre, frames, plan).value(), pretrained_forward(pb, frames, plan).value());
}

TEST(Checkpoint, CorruptionIsAnIntegrityError) {
  auto m = classifier_from_scratch<float>(small_model(), 2, 3);
  const auto bytes = encode_checkpoint(pack(m));
  for (std::size_t pos : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 2}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    try {
      decode_checkpoint(bad);
      FAIL() << pos;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::integrity) << pos;
    }
  }
  auto cut = bytes;
  cut.resize(bytes.size() - 100);
  try {
    decode_checkpoint(cut);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::integrity);
  }
}

TEST(Checkpoint, WrongTagAndVersionAreSchemaErrors) {
  auto m = classifier_from_scratch<float>(small_model(), 2, 3);
  auto c = pack(m);
  try {
    unpack_pretrained<float>(decode_checkpoint(encode_checkpoint(c)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
  c.version = 2;
  try {
    decode_checkpoint(encode_checkpoint(c));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
  auto d = classifier_from_scratch<double>(small_model(), 2, 3);
  try {
    unpack_classifier<float>(decode_checkpoint(encode_checkpoint(pack(d))));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
}

TEST(Runtime, SubsetFraction) {
  const auto ds = synth_generate(SynthParams{4, 5, 4, 2, 0.01, 1});
  EXPECT_EQ(subset_fraction(ds, 0.25, 1).sequences.size(), 5u);
  EXPECT_EQ(subset_fraction(ds, 1.0, 1).sequences.size(), 20u);
  EXPECT_EQ(subset_fraction(ds, 0.0, 1).sequences.size(), 0u);
  const auto a = subset_fraction(ds, 0.5, 3), b = subset_fraction(ds, 0.5, 3);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) EXPECT_EQ(a.sequences[i].id, b.sequences[i].id);
}

TEST(Runtime, GridMembersMapAxes) {
  const auto base = run_config_from_json(merge_with_profile(json::object()));
  EXPECT_FALSE(grid_member(base, "pretrain_setting", "none").pretraining_enabled());
  const auto r = grid_member(base, "pretrain_setting", "rmask_regress");
  EXPECT_EQ(r.pretrain.strategy, MaskStrategy::rmask);
  EXPECT_EQ(r.pretrain.objective, PretrainObjective::regress);
  EXPECT_EQ(grid_member(base, "tokenizer_kind", "separate_vq").tokenizer.kind, TokenizerKind::separate_vq);
  EXPECT_FALSE(grid_member(base, "data_fraction", 0.0).pretraining_enabled());
  EXPECT_THROW(grid_member(base, "depth", 3), Error);
  EXPECT_THROW(grid_member(base, "alpha", "half"), Error);
}

TEST(Cli, PretrainWithoutTokenizerIsDependencyError) {
  const auto dir = fresh_dir("dep");
  const auto cfg = write_config(dir, tiny_config());
  ASSERT_EQ(run({"synth", "--config", cfg, "--out", dir.string()}).code, 0);
  const auto r = run({"pretrain", "--config", cfg, "--out", dir.string()});
  EXPECT_EQ(r.code, 66);
  EXPECT_NE(r.err.find("tokenizer"), std::string::npos) << r.err;
}

TEST(Cli, UsageAndConfigErrors) {
  EXPECT_EQ(run({"bogus"}).code, 64);
  EXPECT_EQ(run({"synth", "--profile", "huge"}).code, 64);
  const auto dir = fresh_dir("cfg");
  const auto cfg = write_config(dir, {{"model", {{"model_dim", 100}}}});
  const auto r = run({"synth", "--config", cfg, "--out", dir.string()});
  EXPECT_EQ(r.code, 65);
  EXPECT_NE(r.err.find("multiple of 3"), std::string::npos);
}

TEST(Cli, CorruptCheckpointRefused) {
  const auto dir = fresh_dir("corrupt");
  auto j = tiny_config();
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(run({"synth", "--config", cfg, "--out", dir.string()}).code, 0);
  ASSERT_EQ(run({"tokenizer", "--config", cfg, "--out", dir.string()}).code, 0);
  const auto latest = read_json_file((dir / "latest.json").string());
  const fs::path ckpt = fs::path(latest["tokenizer"].get<std::string>()) / "tokenizer.ckpt";
  {
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  const auto r = run({"pretrain", "--config", cfg, "--out", dir.string()});
  EXPECT_EQ(r.code, 69) << r.err;
}

TEST(Cli, EndToEndStages) {
  const auto dir = fresh_dir("e2e");
  const auto cfg = write_config(dir, tiny_config());
  const auto out = dir.string();
  for (const char* stage : {"synth", "tokenizer", "tokenize", "pretrain", "finetune", "evaluate"}) {
    const auto r = run({stage, "--config", cfg, "--out", out, "--seed", "3"});
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  const auto latest = read_json_file((dir / "latest.json").string());
  for (const char* stage : {"synth", "tokenizer", "tokenize", "pretrain", "finetune", "evaluate"})
    ASSERT_TRUE(latest.contains(stage)) << stage;
  const fs::path eval = latest["evaluate"].get<std::string>();
  EXPECT_TRUE(fs::exists(eval / "metrics.json"));
  EXPECT_TRUE(fs::exists(eval / "confusion.csv"));
  EXPECT_TRUE(fs::exists(eval / "report.txt"));
  EXPECT_TRUE(fs::exists(fs::path(latest["pretrain"].get<std::string>()) / "log.jsonl"));
  const auto metrics = read_json_file((eval / "metrics.json").string());
  EXPECT_EQ(metrics["samples"], 4);

  // external scores for fusion: favour the true class strongly
  const auto test = load_pose_dataset(fs::path(latest["synth"].get<std::string>()) / "test.jsonl");
  std::vector<ScoreRecord> ext;
  for (const auto& s : test.sequences) {
    std::vector<double> v(static_cast<std::size_t>(test.num_classes), 0.0);
    v[static_cast<std::size_t>(*s.label)] = 20.0;
    ext.push_back({s.id, v});
  }
  write_scores((dir / "ext.jsonl").string(), ext);
  auto j = tiny_config();
  j["paths"] = {{"external_scores", (dir / "ext.jsonl").string()}};
  const auto fcfg = write_config(dir, j);
  const auto f = run({"fuse", "--config", fcfg, "--out", out, "--seed", "3"});
  ASSERT_EQ(f.code, 0) << f.err;
  const auto fused = read_json_file(
      (fs::path(read_json_file((dir / "latest.json").string())["fuse"].get<std::string>()) / "metrics.json").string());
  EXPECT_EQ(fused["per_instance_top1"], 100.0);
}

TEST(Cli, GridWritesTables) {
  const auto dir = fresh_dir("grid");
  auto j = tiny_config();
  j["grid"] = {{"axis", "pretrain_setting"}, {"values", {"none", "mum_token", "rmask_regress"}}};
  const auto cfg = write_config(dir, j);
  const auto r = run({"grid", "--config", cfg, "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path g = read_json_file((dir / "latest.json").string())["grid"].get<std::string>();
  for (const char* f : {"grid.md", "grid.csv", "grid.json", "grid.svg", "member-0.jsonl"})
    EXPECT_TRUE(fs::exists(g / f)) << f;
  const auto rows = read_json_file((g / "grid.json").string())["rows"];
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2]["value"].get<std::string>(), "rmask_regress");
  for (const auto& row : rows) EXPECT_EQ(row["status"].get<std::string>(), "ok") << row.dump();
}
