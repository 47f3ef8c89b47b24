// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "checks.hpp"

#include "best/checkpoint.hpp"
#include "best/runtime.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>

#include <unistd.h>

using namespace best;
using namespace best::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

RunConfig test_profile() { return run_config_from_json(merge_with_profile(json::object(), "test")); }

Verdict quantizer_oracle() {
  const auto t0 = Clock::now();
  auto v = quantizer_agreement({2, 64, 1000}, 1000, 11);
  const double s = seconds_since(t0);
  v.detail += ", " + fmt(s, 2) + " s";
  v.ok = v.ok && s < 5.0;
  return v;
}

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto prof = test_profile();
  std::vector<std::pair<std::string, GradReport>> reps;
  reps.emplace_back("tokenizer coupled", tokenizer_gradients(prof.tokenizer, 3, 101, 12));
  auto sep = prof.tokenizer;
  sep.kind = TokenizerKind::separate_vq;
  reps.emplace_back("tokenizer separate", tokenizer_gradients(sep, 3, 102, 12));
  reps.emplace_back("pretrain token", pretrain_gradients(prof.model, PretrainObjective::token, 103, 8));
  reps.emplace_back("pretrain regress", pretrain_gradients(prof.model, PretrainObjective::regress, 104, 6));
  auto pp = prof.model;
  pp.per_part_mask_token = true;
  reps.emplace_back("per-part mask token", pretrain_gradients(pp, PretrainObjective::token, 105, 4));
  reps.emplace_back("classifier", classifier_gradients(prof.model, 106, 8));
  Verdict v{true, ""};
  std::size_t tensors = 0, entries = 0;
  double worst = 0;
  for (const auto& [name, r] : reps) {
    tensors += r.tensors;
    entries += r.entries;
    worst = std::max(worst, r.worst_rel);
    if (!r.ok()) {
      v.ok = false;
      v.detail += name + ": " + describe(r) + "; ";
    }
  }
  const double s = seconds_since(t0);
  v.ok = v.ok && s < 120.0;
  v.detail += std::to_string(tensors) + " tensors, " + std::to_string(entries) + " entries, worst rel " +
              fmt(worst, 8) + ", " + fmt(s, 1) + " s";
  return v;
}

Verdict routing() {
  Verdict v{true, ""};
  for (auto kind : {TokenizerKind::coupled, TokenizerKind::separate_vq}) {
    const auto r = straight_through_routing(kind, 5);
    if (!r.all()) {
      v.ok = false;
      v.detail += std::string(to_string(kind)) + " failed; ";
    }
  }
  if (v.ok) v.detail = "8 checks x 2 tokenizer kinds";
  return v;
}

Verdict masking() {
  const auto t0 = Clock::now();
  const auto s = mask_statistics(32, 0.25, 100000, 17);
  const double sec = seconds_since(t0);
  bool ok = s.count_exact && s.union_exact && sec < 10.0;
  std::string rates;
  for (double r : s.part_rate) {
    ok = ok && std::abs(r - 4.0 / 7.0) <= 0.01;
    rates += fmt(r) + " ";
  }
  return {ok, std::to_string(s.draws) + " draws, " + std::to_string(s.masked_frames) + " masked frames, |M|=8 " +
                  (s.count_exact ? "always" : "VIOLATED") + ", union " + (s.union_exact ? "exact" : "VIOLATED") +
                  ", part rates " + rates + "(4/7=" + fmt(4.0 / 7.0) + "), " + fmt(sec, 2) + " s"};
}

Verdict locality() {
  const auto cfg = small_model();
  auto m = init_pretrained<double>(cfg, 32, 32, 1);
  const auto frames = random_units(8, 2);
  const auto labels = random_labels(8, 32, 32, 3);
  bool invariant = true;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto plan = sample_mask(8, 0.5, s);
    const auto p = predict_tokens(pretrained_forward(m, frames, plan), m.heads);
    auto changed = labels;
    for (int t = 0; t < 8; ++t)
      for (Part part : kParts) {
        bool masked = false;
        for (const auto& f : plan.frames) masked = masked || (f.frame == t && f.masks(part));
        if (masked) continue;
        auto& slot = part == Part::left ? changed[t].left : part == Part::right ? changed[t].right : changed[t].body;
        slot = (slot + 1 + static_cast<int>(s)) % 32;
      }
    invariant = invariant && mum_loss(p, labels, plan) == mum_loss(p, changed, plan);
  }

  auto big = init_pretrained<double>(cfg, 1000, 500, 4);
  big.heads.visit("h", [](const std::string&, ag::Var<double>& v) { v.mutable_value().setZero(); });
  const auto wide = random_labels(8, 1000, 500, 5);
  const MaskPlan hands{8, {{0, {true, true, false}}, {5, {false, true, false}}}};
  const MaskPlan body{8, {{3, {false, false, true}}}};
  const double lh = mum_loss(predict_tokens(pretrained_forward(big, frames, hands), big.heads), wide, hands);
  const double lb = mum_loss(predict_tokens(pretrained_forward(big, frames, body), big.heads), wide, body);
  const bool uniform = std::abs(lh - std::log(1000.0)) <= 1e-6 && std::abs(lb - std::log(500.0)) <= 1e-6;
  return {invariant && uniform, std::string("bit-invariant over 50 plans: ") + (invariant ? "yes" : "NO") +
                                    ", uniform hand " + fmt(lh, 7) + " body " + fmt(lb, 7)};
}

Verdict memorization() {
  const auto t0 = Clock::now();
  const auto c = test_profile();
  const auto data = synth_splits(c);
  const auto& ds = data.pretrain;
  if (ds.sequences.size() != 32u) return {false, "expected 32 sequences"};
  const auto tok = fit_tokenizer(ds, c, nullptr);
  const double rmse = reconstruction_rmse(ds, tok);
  const double floor = c.synth.noise_sigma;
  const auto pre = run_pretrain(ds, tok, c, nullptr);
  const double loss = pre.metadata["final_loss"].get<double>();
  const auto cls = run_finetune(ds, &pre, c, nullptr);
  const auto train = evaluate(ds, cls);
  const double sec = seconds_since(t0);
  const bool ok = rmse < 2.0 * floor && loss < 0.1 && train.per_instance_top1 == 100.0 && sec < 900.0;
  return {ok, "rmse " + fmt(rmse) + " (limit " + fmt(2.0 * floor) + "), pre-train loss " + fmt(loss) +
                  " nats, training top-1 " + fmt(train.per_instance_top1, 2) + "% on " +
                  std::to_string(ds.num_classes) + " classes, " + fmt(sec, 1) + " s"};
}

Verdict transfer() {
  const auto t0 = Clock::now();
  auto c = test_profile();
  c.synth.num_classes = 8;
  c.synth.noise_sigma = 0.02;
  c.synth.pretrain_per_class = 8;
  c.synth.train_per_class = 4;
  c.synth.test_per_class = 16;
  c.pretrain.epochs = 100;
  std::vector<double> gaps;
  std::string rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    const auto data = synth_splits(c);
    const auto tok = fit_tokenizer(data.pretrain, c, nullptr);
    const auto pre = run_pretrain(data.pretrain, tok, c, nullptr);
    const double with = evaluate(data.test, run_finetune(data.train, &pre, c, nullptr)).per_instance_top1;
    const double without = evaluate(data.test, run_finetune(data.train, nullptr, c, nullptr)).per_instance_top1;
    gaps.push_back(with - without);
    rows += fmt(with, 1) + "/" + fmt(without, 1) + " ";
  }
  auto sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[2];
  return {median >= 5.0, "pre-trained/scratch per seed " + rows + "median gap " + fmt(median, 2) + " pp, " +
                             fmt(seconds_since(t0), 1) + " s"};
}

Verdict metrics() {
  bool ok = true;
  const auto hand = metrics_from_scores({{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}}, {0, 0, 1}, 2);
  const bool counted = std::round(hand.per_instance_top1 * 100) == 6667 && std::round(hand.per_class_top1 * 100) == 7500;
  ok = ok && counted;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  int balanced = 0, ordered = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int classes = 2 + trial % 23, per = 1 + trial % 9;
    const bool balance = trial % 2 == 0;
    std::vector<std::vector<double>> s;
    std::vector<int> y;
    for (int k = 0; k < classes; ++k) {
      const int count = balance ? per : 1 + static_cast<int>(rng() % 6);
      for (int i = 0; i < count; ++i) {
        std::vector<double> v(static_cast<std::size_t>(classes));
        for (auto& x : v) x = n(rng);
        v[static_cast<std::size_t>(k)] += 0.8;
        s.push_back(v);
        y.push_back(k);
      }
    }
    const auto r = metrics_from_scores(s, y, classes);
    if (balance) {
      const bool eq = r.per_instance_top1 == r.per_class_top1 && r.per_instance_top5 == r.per_class_top5;
      balanced += eq;
      ok = ok && eq;
    }
    const bool ge = r.per_instance_top5 >= r.per_instance_top1 && r.per_class_top5 >= r.per_class_top1;
    ordered += ge;
    ok = ok && ge;
  }
  return {ok, "hand-counted " + fmt(hand.per_instance_top1, 2) + "/" + fmt(hand.per_class_top1, 2) +
                  ", balanced P-I==P-C " + std::to_string(balanced) + "/250, top5>=top1 " +
                  std::to_string(ordered) + "/500"};
}

RunConfig tiny_grid_base() {
  auto c = test_profile();
  c.seed = 9;
  c.synth.num_classes = 3;
  c.synth.pretrain_per_class = 2;
  c.synth.train_per_class = 2;
  c.synth.test_per_class = 2;
  c.tokenizer.hand_codes = 8;
  c.tokenizer.body_codes = 8;
  c.tokenizer.code_dim = 8;
  c.tokenizer.hidden = 16;
  c.tokenizer.epochs = 2;
  c.tokenizer.batch = 8;
  c.model.model_dim = 48;
  c.model.ffn_dim = 48;
  c.model.layers = 1;
  c.model.gcn_hidden = 8;
  c.pretrain.epochs = 2;
  c.pretrain.batch = 2;
  c.finetune.epochs = 2;
  c.finetune.batch = 2;
  return c;
}

Verdict ablation_grids() {
  const auto t0 = Clock::now();
  const std::vector<std::pair<std::string, json>> grids = {
      {"tokenizer_kind", {"kmeans", "separate_vq", "coupled"}},
      {"mask_case", {"none", "hand_only", "body_only", "both"}},
      {"data_fraction", {0.0, 0.25, 0.5, 0.75, 1.0}},
      {"pretrain_setting", {"none", "rmask_regress", "rmask_token", "mum_regress", "mum_token"}}};
  bool ok = true;
  std::string detail;
  for (const auto& [axis, values] : grids) {
    auto c = tiny_grid_base();
    c.grid.axis = axis;
    c.grid.values = values;
    const auto data = synth_splits(c);
    const auto a = run_grid(c, data);
    const auto b = run_grid(c, data);
    bool same = a.rows.size() == values.size() && b.rows.size() == a.rows.size();
    bool all_ok = true;
    for (std::size_t i = 0; same && i < a.rows.size(); ++i) {
      same = same && a.rows[i].label == b.rows[i].label && a.rows[i].label == value_label(values[i]) &&
             a.rows[i].ok == b.rows[i].ok && a.rows[i].metrics == b.rows[i].metrics;
      all_ok = all_ok && a.rows[i].ok;
      if (!a.rows[i].ok) detail += axis + "/" + a.rows[i].label + ": " + a.rows[i].error + "; ";
    }
    ok = ok && same && all_ok;
    detail += axis + " " + std::to_string(a.rows.size()) + " rows " + (same ? "deterministic" : "DIFFER") + "; ";
  }
  return {ok, detail + fmt(seconds_since(t0), 1) + " s"};
}

template <typename F>
bool throws_integrity(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == ErrorKind::integrity;
  }
  return false;
}

Verdict persistence() {
  const auto dir = fs::temp_directory_path() / ("best_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto cfg = small_model();
  bool same = true;

  TokenizerConfig tc = test_profile().tokenizer;
  auto tok = init_tokenizer<float>(tc, 1);
  tok.freeze();
  save_checkpoint(tok, (dir / "t.ckpt").string());
  const auto tok2 = load_tokenizer<float>((dir / "t.ckpt").string());
  const auto units = random_units(16, 2);
  const auto xb = to_part_batch<float>(units, false);
  same = same && dvae_forward(tok, xb).recon.left.value() == dvae_forward(tok2, xb).recon.left.value();
  same = same && dvae_forward(tok, xb).recon.body.value() == dvae_forward(tok2, xb).recon.body.value();

  auto pre = init_pretrained<float>(cfg, 32, 32, 3);
  save_checkpoint(pre, (dir / "p.ckpt").string());
  auto pre2 = load_pretrained<float>((dir / "p.ckpt").string());
  const auto frames = random_units(8, 4);
  const auto plan = sample_mask(8, 0.5, 5);
  const auto h1 = pretrained_forward(pre, frames, plan), h2 = pretrained_forward(pre2, frames, plan);
  same = same && h1.value() == h2.value();
  same = same && predict_tokens(h1, pre.heads).left == predict_tokens(h2, pre2.heads).left;

  auto cls = classifier_from_pretrained(pre, 5, 6);
  save_checkpoint(cls, (dir / "c.ckpt").string());
  const auto cls2 = load_classifier<float>((dir / "c.ckpt").string());
  for (std::uint64_t s = 0; s < 10; ++s) {
    PoseSequence seq;
    seq.frames = random_units(8, 10 + s);
    same = same && classify(seq, cls) == classify(seq, cls2);
  }

  // every tried corruption must be refused
  std::ifstream in(dir / "c.ckpt", std::ios::binary);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::mt19937_64 rng(7);
  int rejected = 0, tried = 0;
  for (int k = 0; k < 200; ++k) {
    auto bad = bytes;
    const auto pos = k < 8 ? static_cast<std::size_t>(k) : rng() % bad.size();
    bad[pos] ^= static_cast<unsigned char>(1u << (rng() % 8));
    ++tried;
    rejected += throws_integrity([&] { decode_checkpoint(bad); });
  }
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 3, bytes.size() - 1}) {
    auto bad = bytes;
    bad.resize(cut);
    ++tried;
    rejected += throws_integrity([&] { decode_checkpoint(bad); });
  }
  {
    auto bad = bytes;
    bad[bad.size() / 2] ^= 0xff;
    std::ofstream(dir / "bad.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bad.data()),
                                                            static_cast<std::streamsize>(bad.size()));
    ++tried;
    rejected += throws_integrity([&] { load_classifier<float>((dir / "bad.ckpt").string()); });
  }
  fs::remove_all(dir);
  return {same && rejected == tried, std::string("forward outputs ") + (same ? "bit-identical" : "DIFFER") +
                                         " for tokenizer/pretrained/classifier, corruptions rejected " +
                                         std::to_string(rejected) + "/" + std::to_string(tried)};
}

}  // namespace

int main() {
  warning_handler() = [](const std::string&) {};
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"quantizer oracle", quantizer_oracle},
      {"gradient correctness", gradients},
      {"straight-through routing", routing},
      {"masking statistics", masking},
      {"loss locality", locality},
      {"end-to-end memorization", memorization},
      {"transfer signal", transfer},
      {"metrics identity", metrics},
      {"ablation harness", ablation_grids},
      {"persistence", persistence}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.ok;
    std::cout << (v.ok ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << v.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
