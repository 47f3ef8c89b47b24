#pragma once

// Run configuration: JSON document with two built-in profiles. User files
// are overlaid on the chosen profile; keys absent from the profile are
// rejected, then every constraint is checked and all violations reported
// together.

#include "best/backbone.hpp"
#include "best/downstream.hpp"
#include "best/error.hpp"
#include "best/synth.hpp"
#include "best/tokenizer.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace best {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Section conversions

inline json to_json(const TokenizerConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"hand_codes", c.hand_codes},
          {"body_codes", c.body_codes},
          {"code_dim", c.code_dim},
          {"hidden", c.hidden},
          {"betas", {c.betas.body, c.betas.codebook, c.betas.commitment}},
          {"mirror_left", c.mirror_left},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lr_decay_every", c.lr_decay_every},
          {"lr_decay", c.lr_decay},
          {"reinit_epochs", c.reinit_epochs},
          {"kmeans_iters", c.kmeans_iters}};
}

inline TokenizerConfig tokenizer_config_from_json(const json& j) {
  TokenizerConfig c;
  c.kind = parse_tokenizer_kind(j.at("kind").get<std::string>());
  c.hand_codes = j.at("hand_codes").get<int>();
  c.body_codes = j.at("body_codes").get<int>();
  c.code_dim = j.at("code_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  const auto betas = j.at("betas").get<std::vector<double>>();
  if (betas.size() != 3) throw Error(ErrorKind::config, "tokenizer.betas must have three entries");
  c.betas = {betas[0], betas[1], betas[2]};
  c.mirror_left = j.at("mirror_left").get<bool>();
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_decay_every = j.at("lr_decay_every").get<int>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.reinit_epochs = j.at("reinit_epochs").get<int>();
  c.kmeans_iters = j.at("kmeans_iters").get<int>();
  return c;
}

inline json to_json(const ModelConfig& c) {
  return {{"model_dim", c.model_dim}, {"layers", c.layers},         {"heads", c.heads},
          {"ffn_dim", c.ffn_dim},     {"dropout", c.dropout},       {"gcn_hidden", c.gcn_hidden},
          {"frames", c.frames},       {"per_part_mask_token", c.per_part_mask_token}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.model_dim = j.at("model_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.gcn_hidden = j.at("gcn_hidden").get<int>();
  c.frames = j.at("frames").get<int>();
  c.per_part_mask_token = j.at("per_part_mask_token").get<bool>();
  return c;
}

inline json to_json(const JitterParams& p) {
  return {{"scale_bound", p.scale_bound},
          {"rotation_deg", p.rotation_deg},
          {"translation", p.translation},
          {"joint_sigma", p.joint_sigma}};
}

inline JitterParams jitter_from_json(const json& j) {
  return {j.at("scale_bound").get<double>(), j.at("rotation_deg").get<double>(), j.at("translation").get<double>(),
          j.at("joint_sigma").get<double>()};
}

// ---------------------------------------------------------------------------
// Run configuration

/// Synthetic corpus drawn by the `synth` stage: one unlabeled-use
/// pre-training split and labeled train/test splits sharing class poses.
struct SynthConfig {
  int num_classes = 4;
  int frames = 8;
  int prototypes_per_class = 2;
  double noise_sigma = 0.01;
  double transition = 0.0;
  int pretrain_per_class = 8;
  int train_per_class = 32;
  int test_per_class = 8;

  SynthParams params(std::uint64_t seed, int per_class, std::uint64_t stream) const {
    SynthParams p;
    p.num_classes = num_classes;
    p.samples_per_class = per_class;
    p.frames = frames;
    p.prototypes_per_class = prototypes_per_class;
    p.noise_sigma = noise_sigma;
    p.seed = seed;
    p.noise_stream = stream;
    p.transition = transition;
    return p;
  }
};

struct PathConfig {
  std::string pretrain_data;
  std::string train_data;
  std::string test_data;
  std::string tokenizer;
  std::string pretrained;
  std::string classifier;
  std::string scores;
  std::string external_scores;
};

struct GridConfig {
  std::string axis = "mask_case";
  json values = json::array();
  bool plot = true;
};

struct RunConfig {
  std::string profile = "test";
  std::uint64_t seed = 0;
  PathConfig paths;
  SynthConfig synth;
  TokenizerConfig tokenizer;
  ModelConfig model;
  PretrainConfig pretrain;
  /// "none" skips pre-training; otherwise a MaskStrategy name.
  std::string mask_case = "both";
  /// Share of the pre-training corpus used; 0 also skips pre-training.
  double data_fraction = 1.0;
  FinetuneConfig finetune;
  std::pair<double, double> fuse_weights{1.0, 1.0};
  bool fuse_raw = false;
  GridConfig grid;

  bool pretraining_enabled() const { return mask_case != "none" && data_fraction > 0.0; }
};

inline json profile_defaults(const std::string& profile) {
  const bool full = profile == "full";
  if (!full && profile != "test") throw Error(ErrorKind::config, "unknown profile '" + profile + "' (expected full or test)");
  TokenizerConfig tok;
  ModelConfig model;
  PretrainConfig pre;
  FinetuneConfig ft;
  SynthConfig synth;
  if (full) {
    tok.batch = 64;
    pre.batch = 64;
    pre.epochs = 100;
    ft.batch = 64;
    ft.epochs = 30;
    synth.frames = 32;
    synth.pretrain_per_class = 64;
    synth.test_per_class = 16;
  } else {
    tok.hand_codes = 32;
    tok.body_codes = 32;
    tok.code_dim = 32;
    tok.hidden = 64;
    tok.batch = 1;
    model.model_dim = 96;
    model.layers = 2;
    model.heads = 8;
    model.ffn_dim = 192;
    model.gcn_hidden = 32;
    model.frames = 8;
    pre.epochs = 400;
    pre.batch = 1;
    ft.epochs = 30;
    ft.batch = 4;
  }
  return {{"profile", profile},
          {"seed", 0},
          {"paths",
           {{"pretrain_data", ""},
            {"train_data", ""},
            {"test_data", ""},
            {"tokenizer", ""},
            {"pretrained", ""},
            {"classifier", ""},
            {"scores", ""},
            {"external_scores", ""}}},
          {"synth",
           {{"num_classes", synth.num_classes},
            {"frames", synth.frames},
            {"prototypes_per_class", synth.prototypes_per_class},
            {"noise_sigma", synth.noise_sigma},
            {"transition", synth.transition},
            {"pretrain_per_class", synth.pretrain_per_class},
            {"train_per_class", synth.train_per_class},
            {"test_per_class", synth.test_per_class}}},
          {"tokenizer", to_json(tok)},
          {"model", to_json(model)},
          {"pretrain",
           {{"alpha", pre.alpha},
            {"mask_case", "both"},
            {"objective", "token"},
            {"data_fraction", 1.0},
            {"epochs", pre.epochs},
            {"batch", pre.batch},
            {"lr", pre.lr},
            {"weight_decay", pre.weight_decay},
            {"warmup_epochs", pre.warmup_epochs}}},
          {"finetune",
           {{"epochs", ft.epochs},
            {"batch", ft.batch},
            {"lr", ft.lr},
            {"lr_decay_every", ft.lr_decay_every},
            {"lr_decay", ft.lr_decay},
            {"weight_decay", ft.weight_decay},
            {"augment", ft.augment},
            {"jitter", to_json(ft.jitter)}}},
          {"fuse", {{"weights", {1.0, 1.0}}, {"raw", false}}},
          {"grid", {{"axis", "mask_case"}, {"values", {"none", "hand_only", "body_only", "both"}}, {"plot", true}}}};
}

namespace detail {

inline void unknown_keys(const json& user, const json& ref, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!ref.contains(it.key())) {
      out.push_back("unknown key '" + path + "'");
    } else if (ref.at(it.key()).is_object()) {
      if (!it.value().is_object())
        out.push_back("'" + path + "' must be an object");
      else
        unknown_keys(it.value(), ref.at(it.key()), path, out);
    }
  }
}

template <typename F>
void collect(std::vector<std::string>& v, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    v.push_back(e.what());
  } catch (const json::exception& e) {
    v.push_back(std::string("type error: ") + e.what());
  }
}

}  // namespace detail

/// Parses a fully merged document; throws a config error listing every
/// violated constraint.
inline RunConfig run_config_from_json(const json& j) {
  std::vector<std::string> v;
  RunConfig c;
  detail::collect(v, [&] { c.profile = j.at("profile").get<std::string>(); });
  detail::collect(v, [&] { c.seed = j.at("seed").get<std::uint64_t>(); });
  detail::collect(v, [&] {
    const auto& p = j.at("paths");
    c.paths = {p.at("pretrain_data").get<std::string>(), p.at("train_data").get<std::string>(),
               p.at("test_data").get<std::string>(),     p.at("tokenizer").get<std::string>(),
               p.at("pretrained").get<std::string>(),    p.at("classifier").get<std::string>(),
               p.at("scores").get<std::string>(),        p.at("external_scores").get<std::string>()};
  });
  detail::collect(v, [&] {
    const auto& s = j.at("synth");
    c.synth = {s.at("num_classes").get<int>(),        s.at("frames").get<int>(),
               s.at("prototypes_per_class").get<int>(), s.at("noise_sigma").get<double>(),
               s.at("transition").get<double>(),       s.at("pretrain_per_class").get<int>(),
               s.at("train_per_class").get<int>(),     s.at("test_per_class").get<int>()};
  });
  detail::collect(v, [&] { c.tokenizer = tokenizer_config_from_json(j.at("tokenizer")); });
  detail::collect(v, [&] { c.model = model_config_from_json(j.at("model")); });
  detail::collect(v, [&] {
    const auto& p = j.at("pretrain");
    c.pretrain.alpha = p.at("alpha").get<double>();
    c.mask_case = p.at("mask_case").get<std::string>();
    if (c.mask_case != "none") c.pretrain.strategy = parse_mask_strategy(c.mask_case);
    c.pretrain.objective = parse_objective(p.at("objective").get<std::string>());
    c.data_fraction = p.at("data_fraction").get<double>();
    c.pretrain.epochs = p.at("epochs").get<int>();
    c.pretrain.batch = p.at("batch").get<int>();
    c.pretrain.lr = p.at("lr").get<double>();
    c.pretrain.weight_decay = p.at("weight_decay").get<double>();
    c.pretrain.warmup_epochs = p.at("warmup_epochs").get<int>();
  });
  detail::collect(v, [&] {
    const auto& f = j.at("finetune");
    c.finetune.epochs = f.at("epochs").get<int>();
    c.finetune.batch = f.at("batch").get<int>();
    c.finetune.lr = f.at("lr").get<double>();
    c.finetune.lr_decay_every = f.at("lr_decay_every").get<int>();
    c.finetune.lr_decay = f.at("lr_decay").get<double>();
    c.finetune.weight_decay = f.at("weight_decay").get<double>();
    c.finetune.augment = f.at("augment").get<bool>();
    c.finetune.jitter = jitter_from_json(f.at("jitter"));
  });
  detail::collect(v, [&] {
    const auto w = j.at("fuse").at("weights").get<std::vector<double>>();
    if (w.size() != 2) throw Error(ErrorKind::config, "fuse.weights must have two entries");
    c.fuse_weights = {w[0], w[1]};
    c.fuse_raw = j.at("fuse").at("raw").get<bool>();
  });
  detail::collect(v, [&] {
    const auto& g = j.at("grid");
    c.grid.axis = g.at("axis").get<std::string>();
    c.grid.values = g.at("values");
    c.grid.plot = g.at("plot").get<bool>();
  });

  auto need = [&v](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };
  const auto& t = c.tokenizer;
  need(t.hand_codes >= 1, "tokenizer.hand_codes must be at least 1");
  need(t.body_codes >= 1, "tokenizer.body_codes must be at least 1");
  need(t.code_dim >= 1, "tokenizer.code_dim must be at least 1");
  need(t.hidden >= 1, "tokenizer.hidden must be at least 1");
  need(t.epochs >= 0, "tokenizer.epochs must be non-negative");
  need(t.batch >= 1, "tokenizer.batch must be at least 1");
  need(t.lr > 0, "tokenizer.lr must be positive");
  need(t.betas.body >= 0 && t.betas.codebook >= 0 && t.betas.commitment >= 0, "tokenizer.betas must be non-negative");
  need(t.kmeans_iters >= 1, "tokenizer.kmeans_iters must be at least 1");
  for (const auto& m : validate(c.model)) v.push_back("model: " + m);
  need(c.pretrain.alpha >= 0 && c.pretrain.alpha <= 1, "pretrain.alpha must lie in [0, 1]");
  need(c.data_fraction >= 0 && c.data_fraction <= 1, "pretrain.data_fraction must lie in [0, 1]");
  need(c.pretrain.epochs >= 0, "pretrain.epochs must be non-negative");
  need(c.pretrain.batch >= 1, "pretrain.batch must be at least 1");
  need(c.pretrain.lr > 0, "pretrain.lr must be positive");
  need(c.pretrain.weight_decay >= 0, "pretrain.weight_decay must be non-negative");
  need(c.pretrain.warmup_epochs >= 0, "pretrain.warmup_epochs must be non-negative");
  need(c.finetune.epochs >= 0, "finetune.epochs must be non-negative");
  need(c.finetune.batch >= 1, "finetune.batch must be at least 1");
  need(c.finetune.lr > 0, "finetune.lr must be positive");
  need(c.synth.num_classes >= 1 && c.synth.frames >= 1 && c.synth.prototypes_per_class >= 1,
       "synth counts must be at least 1");
  need(c.synth.pretrain_per_class >= 1 && c.synth.train_per_class >= 1 && c.synth.test_per_class >= 1,
       "synth split sizes must be at least 1");
  need(c.synth.noise_sigma >= 0, "synth.noise_sigma must be non-negative");
  need(c.synth.transition >= 0 && c.synth.transition <= 1, "synth.transition must lie in [0, 1]");
  need(c.grid.values.is_array() && !c.grid.values.empty(), "grid.values must be a non-empty list");

  if (!v.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(v.size()) + " problem" + (v.size() > 1 ? "s" : "") + "):";
    for (const auto& m : v) msg += "\n  - " + m;
    throw Error(ErrorKind::config, msg);
  }
  return c;
}

inline json to_json(const RunConfig& c) {
  json j = profile_defaults(c.profile);
  j["seed"] = c.seed;
  j["paths"] = {{"pretrain_data", c.paths.pretrain_data}, {"train_data", c.paths.train_data},
                {"test_data", c.paths.test_data},         {"tokenizer", c.paths.tokenizer},
                {"pretrained", c.paths.pretrained},       {"classifier", c.paths.classifier},
                {"scores", c.paths.scores},               {"external_scores", c.paths.external_scores}};
  j["synth"] = {{"num_classes", c.synth.num_classes},
                {"frames", c.synth.frames},
                {"prototypes_per_class", c.synth.prototypes_per_class},
                {"noise_sigma", c.synth.noise_sigma},
                {"transition", c.synth.transition},
                {"pretrain_per_class", c.synth.pretrain_per_class},
                {"train_per_class", c.synth.train_per_class},
                {"test_per_class", c.synth.test_per_class}};
  j["tokenizer"] = to_json(c.tokenizer);
  j["model"] = to_json(c.model);
  j["pretrain"] = {{"alpha", c.pretrain.alpha},
                   {"mask_case", c.mask_case},
                   {"objective", to_string(c.pretrain.objective)},
                   {"data_fraction", c.data_fraction},
                   {"epochs", c.pretrain.epochs},
                   {"batch", c.pretrain.batch},
                   {"lr", c.pretrain.lr},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"warmup_epochs", c.pretrain.warmup_epochs}};
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"batch", c.finetune.batch},
                   {"lr", c.finetune.lr},
                   {"lr_decay_every", c.finetune.lr_decay_every},
                   {"lr_decay", c.finetune.lr_decay},
                   {"weight_decay", c.finetune.weight_decay},
                   {"augment", c.finetune.augment},
                   {"jitter", to_json(c.finetune.jitter)}};
  j["fuse"] = {{"weights", {c.fuse_weights.first, c.fuse_weights.second}}, {"raw", c.fuse_raw}};
  j["grid"] = {{"axis", c.grid.axis}, {"values", c.grid.values}, {"plot", c.grid.plot}};
  return j;
}

/// Overlays `user` on the defaults of its profile (or `profile` when set)
/// after rejecting unknown keys.
inline json merge_with_profile(const json& user, const std::string& profile_override = "") {
  if (!user.is_object()) throw Error(ErrorKind::config, "configuration must be a JSON object");
  std::string profile = profile_override;
  if (profile.empty()) profile = user.contains("profile") && user["profile"].is_string() ? user["profile"].get<std::string>() : "test";
  json merged = profile_defaults(profile);
  std::vector<std::string> unknown;
  detail::unknown_keys(user, merged, "", unknown);
  if (!unknown.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(unknown.size()) + " problem" +
                      (unknown.size() > 1 ? "s" : "") + "):";
    for (const auto& m : unknown) msg += "\n  - " + m;
    throw Error(ErrorKind::config, msg);
  }
  merged.merge_patch(user);
  merged["profile"] = profile;
  return merged;
}

/// Seed and path overrides from BEST_SEED and BEST_PATH_<KEY>.
inline void apply_env_overrides(json& j) {
  if (const char* s = std::getenv("BEST_SEED")) {
    try {
      j["seed"] = std::stoull(s);
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, std::string("BEST_SEED is not an unsigned integer: '") + s + "'");
    }
  }
  for (auto it = j["paths"].begin(); it != j["paths"].end(); ++it) {
    std::string name = "BEST_PATH_" + it.key();
    for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* p = std::getenv(name.c_str())) *it = p;
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open configuration " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::config, path + ": " + e.what());
  }
}

/// Full load path: file (optional) -> profile overlay -> environment ->
/// validation.
inline RunConfig load_run_config(const std::string& path, const std::string& profile = "") {
  json user = path.empty() ? json::object() : read_json_file(path);
  json merged = merge_with_profile(user, profile);
  apply_env_overrides(merged);
  return run_config_from_json(merged);
}

/// FNV-1a of the canonical resolved configuration, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace best
