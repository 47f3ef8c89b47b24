#pragma once

// Staged command-line pipeline and the ablation grid runner.
//
// Every stage writes into its own run directory <out>/<stage>-<hash>-<time>
// holding the resolved configuration, a JSONL log and its artifacts.
// <out>/latest.json remembers the newest run of each stage so later stages
// find their inputs when the configuration leaves the path empty.

#include "best/backbone.hpp"
#include "best/checkpoint.hpp"
#include "best/config.hpp"
#include "best/dataset_io.hpp"
#include "best/downstream.hpp"
#include "best/synth.hpp"
#include "best/tokenizer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace best {

namespace fs = std::filesystem;

using Real = float;

// ---------------------------------------------------------------------------
// Run directories

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path.string());
  out << text;
}

class RunDir {
 public:
  RunDir(const fs::path& root, const std::string& stage, const RunConfig& cfg) : root_(root), stage_(stage) {
    fs::create_directories(root);
    const std::string base = stage + "-" + config_hash(cfg) + "-" + timestamp();
    path_ = root / base;
    for (int n = 1; fs::exists(path_); ++n) path_ = root / (base + "-" + std::to_string(n));
    fs::create_directories(path_);
    write_text(path_ / "config.json", to_json(cfg).dump(2) + "\n");
  }

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

  void write_log(const TrainLog& log) const {
    std::ofstream out(path_ / "log.jsonl", std::ios::app);
    for (const auto& r : log.records) out << r.dump() << "\n";
  }

  /// Marks this run as the newest of its stage.
  void publish() const {
    const fs::path index = root_ / "latest.json";
    json j = json::object();
    if (fs::exists(index)) j = read_json_file(index.string());
    j[stage_] = fs::absolute(path_).string();
    write_text(index, j.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::string stage_;
  fs::path path_;
};

/// Explicit path, else `file` inside the newest run of `stage`, else a
/// dependency error naming `what`.
inline std::string resolve_input(const std::string& configured, const fs::path& root, const std::string& stage,
                                 const std::string& file, const std::string& what) {
  if (!configured.empty()) {
    if (!fs::exists(configured)) throw Error(ErrorKind::dependency, what + " not found at " + configured);
    return configured;
  }
  const fs::path index = root / "latest.json";
  if (fs::exists(index)) {
    const json j = read_json_file(index.string());
    if (j.contains(stage)) {
      const fs::path p = fs::path(j[stage].get<std::string>()) / file;
      if (fs::exists(p)) return p.string();
    }
  }
  throw Error(ErrorKind::dependency, "missing " + what + ": set it in the configuration or run the '" + stage +
                                         "' stage first (looked in " + root.string() + ")");
}

/// Seeded subset holding ceil(fraction * n) sequences in original order.
inline PoseDataset subset_fraction(const PoseDataset& ds, double fraction, std::uint64_t seed) {
  const std::size_t n = ds.sequences.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 0xf7ac);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  PoseDataset out = ds;
  out.sequences.clear();
  for (std::size_t i : order) out.sequences.push_back(ds.sequences[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the stages and the grid

struct SynthSplits {
  PoseDataset pretrain, train, test;
};

inline SynthSplits synth_splits(const RunConfig& c) {
  return {synth_generate(c.synth.params(c.seed, c.synth.pretrain_per_class, 1)),
          synth_generate(c.synth.params(c.seed, c.synth.train_per_class, 2)),
          synth_generate(c.synth.params(c.seed, c.synth.test_per_class, 3))};
}

inline TokenizerModel<Real> fit_tokenizer(const PoseDataset& ds, const RunConfig& c, TrainLog* log) {
  auto m = build_tokenizer<Real>(ds, c.tokenizer, mix_seed(c.seed, 1), log);
  m.freeze();
  return m;
}

inline PretrainedModel<Real> run_pretrain(const PoseDataset& ds, const TokenizerModel<Real>& tok, const RunConfig& c,
                                          TrainLog* log) {
  if (!c.pretraining_enabled()) throw Error(ErrorKind::config, "pre-training is disabled by this configuration");
  const auto subset = subset_fraction(ds, c.data_fraction, mix_seed(c.seed, 2));
  if (subset.sequences.empty()) throw Error(ErrorKind::data, "pre-training subset is empty");
  return pretrain<Real>(subset, tok, c.model, c.pretrain, mix_seed(c.seed, 3), log);
}

inline ClassifierModel<Real> run_finetune(const PoseDataset& ds, const PretrainedModel<Real>* pre, const RunConfig& c,
                                          TrainLog* log) {
  const auto seed = mix_seed(c.seed, 4);
  auto init = pre ? classifier_from_pretrained(*pre, ds.num_classes, seed)
                  : classifier_from_scratch<Real>(c.model, ds.num_classes, seed);
  return finetune(ds, std::move(init), c.finetune, seed, log);
}

inline std::vector<ScoreRecord> score_records(const PoseDataset& ds, const ClassifierModel<Real>& m) {
  std::vector<ScoreRecord> out;
  for (const auto& s : ds.sequences) out.push_back({s.id, classify(s, m)});
  return out;
}

inline void write_metrics(const RunDir& dir, const MetricsReport& r, const std::vector<std::string>& names) {
  write_text(dir / "report.txt", format_report(r, names));
  write_text(dir / "metrics.json", to_json(r).dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(r, names));
}

// ---------------------------------------------------------------------------
// Grid

struct GridRow {
  std::string label;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
};

struct GridResult {
  std::string axis;
  std::vector<GridRow> rows;
};

inline std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

/// Applies one axis value to a copy of the base configuration.
inline RunConfig grid_member(const RunConfig& base, const std::string& axis, const json& v) {
  RunConfig c = base;
  try {
    if (axis == "tokenizer_kind") {
      c.tokenizer.kind = parse_tokenizer_kind(v.get<std::string>());
    } else if (axis == "mask_case") {
      c.mask_case = v.get<std::string>();
      if (c.mask_case != "none") c.pretrain.strategy = parse_mask_strategy(c.mask_case);
    } else if (axis == "alpha") {
      c.pretrain.alpha = v.get<double>();
    } else if (axis == "data_fraction") {
      c.data_fraction = v.get<double>();
    } else if (axis == "pretrain_setting") {
      const auto s = v.get<std::string>();
      if (s == "none") {
        c.mask_case = "none";
      } else {
        const auto cut = s.find('_');
        if (cut == std::string::npos) throw Error(ErrorKind::config, "pretrain_setting '" + s + "' is not <masking>_<objective>");
        const auto masking = s.substr(0, cut);
        if (masking != "mum" && masking != "rmask") throw Error(ErrorKind::config, "unknown masking '" + masking + "'");
        c.mask_case = masking == "mum" ? "both" : "rmask";
        c.pretrain.strategy = parse_mask_strategy(c.mask_case);
        c.pretrain.objective = parse_objective(s.substr(cut + 1));
      }
    } else {
      throw Error(ErrorKind::config, "unknown grid axis '" + axis +
                                         "' (expected tokenizer_kind, mask_case, alpha, data_fraction or pretrain_setting)");
    }
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, "grid value " + v.dump() + " has the wrong type for axis " + axis);
  }
  return c;
}

inline std::string grid_markdown(const GridResult& g) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| " << g.axis << " | P-I Top-1 | P-I Top-5 | P-C Top-1 | P-C Top-5 |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : g.rows) {
    os << "| " << r.label << " | ";
    if (r.ok)
      os << r.metrics.per_instance_top1 << " | " << r.metrics.per_instance_top5 << " | " << r.metrics.per_class_top1
         << " | " << r.metrics.per_class_top5 << " |\n";
    else
      os << "FAILED | FAILED | FAILED | FAILED |\n";
  }
  for (const auto& r : g.rows)
    if (!r.ok) os << "\nFAILED " << r.label << ": " << r.error << "\n";
  return os.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::string grid_csv(const GridResult& g) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << csv_field(g.axis) << ",status,pi_top1,pi_top5,pc_top1,pc_top5,error\n";
  for (const auto& r : g.rows) {
    os << csv_field(r.label) << "," << (r.ok ? "ok" : "failed") << ",";
    if (r.ok)
      os << r.metrics.per_instance_top1 << "," << r.metrics.per_instance_top5 << "," << r.metrics.per_class_top1 << ","
         << r.metrics.per_class_top5 << ",";
    else
      os << ",,,,";
    os << csv_field(r.error) << "\n";
  }
  return os.str();
}

inline json grid_json(const GridResult& g) {
  json rows = json::array();
  for (const auto& r : g.rows) {
    json row = {{"value", r.label}, {"status", r.ok ? "ok" : "failed"}};
    if (r.ok) row["metrics"] = to_json(r.metrics);
    else row["error"] = r.error;
    rows.push_back(row);
  }
  return {{"axis", g.axis}, {"rows", rows}};
}

/// Grouped bar chart of the four accuracies per row.
inline std::string grid_svg(const GridResult& g) {
  const int bar = 14, gap = 24, left = 60, top = 30, height = 200;
  const int group = 4 * bar + gap;
  const int width = left + static_cast<int>(g.rows.size()) * group + 20;
  static const char* colors[4] = {"#4c72b0", "#55a868", "#c44e52", "#8172b2"};
  static const char* names[4] = {"P-I Top-1", "P-I Top-5", "P-C Top-1", "P-C Top-5"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 60
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"16\">" << g.axis << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << width - 10 << "\" y2=\"" << top + height
     << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = top + height - height * tick / 100.0;
    os << "<text x=\"" << left - 30 << "\" y=\"" << y + 4 << "\">" << tick << "</text>\n";
  }
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    const int x0 = left + static_cast<int>(i) * group + gap / 2;
    const double v[4] = {r.metrics.per_instance_top1, r.metrics.per_instance_top5, r.metrics.per_class_top1,
                         r.metrics.per_class_top5};
    for (int k = 0; k < 4 && r.ok; ++k) {
      const double h = height * v[k] / 100.0;
      os << "<rect x=\"" << x0 + k * bar << "\" y=\"" << top + height - h << "\" width=\"" << bar - 2 << "\" height=\""
         << h << "\" fill=\"" << colors[k] << "\"/>\n";
    }
    if (!r.ok) os << "<text x=\"" << x0 << "\" y=\"" << top + height - 6 << "\" fill=\"red\">failed</text>\n";
    os << "<text x=\"" << x0 << "\" y=\"" << top + height + 16 << "\">" << r.label << "</text>\n";
  }
  for (int k = 0; k < 4; ++k)
    os << "<rect x=\"" << left + k * 90 << "\" y=\"" << top + height + 32 << "\" width=\"10\" height=\"10\" fill=\""
       << colors[k] << "\"/><text x=\"" << left + k * 90 + 14 << "\" y=\"" << top + height + 41 << "\">" << names[k]
       << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

/// Runs every axis value through tokenizer, pre-training, fine-tuning and
/// evaluation. Members share data and reuse identical tokenizers. A member
/// that throws is marked failed and the grid continues.
inline GridResult run_grid(const RunConfig& base, const SynthSplits& data, const fs::path& out_dir = {}) {
  GridResult g;
  g.axis = base.grid.axis;
  if (!base.grid.values.is_array() || base.grid.values.empty())
    throw Error(ErrorKind::config, "grid.values must be a non-empty list");
  std::map<std::string, TokenizerModel<Real>> tokenizers;
  for (std::size_t i = 0; i < base.grid.values.size(); ++i) {
    const json& v = base.grid.values[i];
    GridRow row;
    row.label = value_label(v);
    TrainLog log;
    try {
      const RunConfig c = grid_member(base, g.axis, v);
      std::optional<PretrainedModel<Real>> pre;
      if (c.pretraining_enabled()) {
        const std::string key = to_json(c.tokenizer).dump();
        auto it = tokenizers.find(key);
        if (it == tokenizers.end()) it = tokenizers.emplace(key, fit_tokenizer(data.pretrain, c, &log)).first;
        pre = run_pretrain(data.pretrain, it->second, c, &log);
      }
      const auto model = run_finetune(data.train, pre ? &*pre : nullptr, c, &log);
      row.metrics = evaluate(data.test, model);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (!out_dir.empty()) {
      std::ofstream out(out_dir / ("member-" + std::to_string(i) + ".jsonl"));
      for (const auto& r : log.records) out << r.dump() << "\n";
    }
    g.rows.push_back(std::move(row));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::string stage;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out = "runs";
};

inline RunConfig resolve_config(const CommandOptions& o) {
  json user = o.config.empty() ? json::object() : read_json_file(o.config);
  json merged = merge_with_profile(user, o.profile);
  apply_env_overrides(merged);
  if (o.seed) merged["seed"] = *o.seed;
  return run_config_from_json(merged);
}

inline PoseDataset load_split(const std::string& configured, const fs::path& root, const std::string& file,
                              const std::string& what) {
  return load_pose_dataset(resolve_input(configured, root, "synth", file, what));
}

/// Executes one stage; returns the run directory.
inline fs::path execute_stage(const CommandOptions& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const fs::path root = o.out;
  const std::string& stage = o.stage;

  if (stage == "synth") {
    RunDir dir(root, stage, c);
    const auto s = synth_splits(c);
    write_dataset(s.pretrain, dir / "pretrain.jsonl");
    write_dataset(s.train, dir / "train.jsonl");
    write_dataset(s.test, dir / "test.jsonl");
    dir.publish();
    out << "synth: " << s.pretrain.sequences.size() << "/" << s.train.sequences.size() << "/"
        << s.test.sequences.size() << " sequences -> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "tokenizer") {
    const auto ds = load_split(c.paths.pretrain_data, root, "pretrain.jsonl", "pre-training data");
    RunDir dir(root, stage, c);
    TrainLog log;
    auto m = fit_tokenizer(ds, c, &log);
    const double rmse = reconstruction_rmse(ds, m);
    log.records.push_back({{"stage", "tokenizer"}, {"split", "eval"}, {"reconstruction_rmse", rmse}});
    dir.write_log(log);
    save_checkpoint(m, (dir / "tokenizer.ckpt").string());
    dir.publish();
    out << "tokenizer: reconstruction rmse " << rmse << " -> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "tokenize") {
    const auto tok = load_tokenizer<Real>(resolve_input(c.paths.tokenizer, root, "tokenizer", "tokenizer.ckpt",
                                                        "tokenizer checkpoint"));
    const auto ds = load_split(c.paths.pretrain_data, root, "pretrain.jsonl", "pre-training data");
    RunDir dir(root, stage, c);
    std::ofstream f(dir / "tokens.jsonl");
    for (const auto& s : ds.sequences) {
      json frames = json::array();
      for (const auto& t : tokenize_sequence(s, tok)) frames.push_back({t.left, t.right, t.body});
      f << json{{"id", s.id}, {"tokens", frames}}.dump() << "\n";
    }
    dir.publish();
    out << "tokenize: " << ds.sequences.size() << " sequences -> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "pretrain") {
    const auto tok = load_tokenizer<Real>(resolve_input(c.paths.tokenizer, root, "tokenizer", "tokenizer.ckpt",
                                                        "tokenizer checkpoint"));
    const auto ds = load_split(c.paths.pretrain_data, root, "pretrain.jsonl", "pre-training data");
    RunDir dir(root, stage, c);
    TrainLog log;
    auto m = run_pretrain(ds, tok, c, &log);
    dir.write_log(log);
    save_checkpoint(m, (dir / "pretrained.ckpt").string());
    dir.publish();
    out << "pretrain: final loss " << m.metadata["final_loss"].get<double>() << " -> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "finetune") {
    const auto ds = load_split(c.paths.train_data, root, "train.jsonl", "training data");
    std::optional<PretrainedModel<Real>> pre;
    if (c.pretraining_enabled())
      pre = load_pretrained<Real>(resolve_input(c.paths.pretrained, root, "pretrain", "pretrained.ckpt",
                                                "pre-trained checkpoint"));
    RunDir dir(root, stage, c);
    TrainLog log;
    auto m = run_finetune(ds, pre ? &*pre : nullptr, c, &log);
    dir.write_log(log);
    save_checkpoint(m, (dir / "classifier.ckpt").string());
    dir.publish();
    out << "finetune: training accuracy " << log.records.back()["accuracy"].get<double>() << " -> "
        << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "evaluate") {
    const auto model = load_classifier<Real>(resolve_input(c.paths.classifier, root, "finetune", "classifier.ckpt",
                                                           "classifier checkpoint"));
    const auto ds = load_split(c.paths.test_data, root, "test.jsonl", "test data");
    RunDir dir(root, stage, c);
    require_labeled(ds, "evaluate");
    const auto scores = score_records(ds, model);
    std::vector<std::vector<double>> s;
    for (const auto& r : scores) s.push_back(r.scores);
    const auto report = metrics_from_scores(s, dataset_labels(ds), ds.num_classes);
    write_scores((dir / "scores.jsonl").string(), scores);
    write_metrics(dir, report, ds.class_names);
    dir.publish();
    out << format_report(report, ds.class_names) << "-> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "fuse") {
    const auto a = read_scores(resolve_input(c.paths.scores, root, "evaluate", "scores.jsonl", "model scores"));
    if (c.paths.external_scores.empty())
      throw Error(ErrorKind::dependency, "fuse needs paths.external_scores (set it in the configuration)");
    const auto b = read_scores(resolve_input(c.paths.external_scores, root, "", "", "external scores"));
    const auto ds = load_split(c.paths.test_data, root, "test.jsonl", "test data");
    const auto fused = fuse_scores(a, b, c.fuse_weights, c.fuse_raw);
    std::map<std::string, int> label_of;
    for (const auto& s : ds.sequences)
      if (s.label) label_of[s.id] = *s.label;
    std::vector<std::vector<double>> s;
    std::vector<int> labels;
    for (const auto& r : fused) {
      const auto it = label_of.find(r.id);
      if (it == label_of.end()) throw Error(ErrorKind::data, "fused id '" + r.id + "' has no label in the test data");
      s.push_back(r.scores);
      labels.push_back(it->second);
    }
    if (s.size() != ds.sequences.size())
      throw Error(ErrorKind::data, "score ids do not cover the evaluation set");
    RunDir dir(root, stage, c);
    const auto report = metrics_from_scores(s, labels, ds.num_classes);
    write_scores((dir / "fused_scores.jsonl").string(), fused);
    write_metrics(dir, report, ds.class_names);
    dir.publish();
    out << format_report(report, ds.class_names) << "-> " << dir.path().string() << "\n";
    return dir.path();
  }
  if (stage == "grid") {
    SynthSplits data;
    if (c.paths.pretrain_data.empty() && c.paths.train_data.empty() && c.paths.test_data.empty()) {
      data = synth_splits(c);
    } else {
      data = {load_split(c.paths.pretrain_data, root, "pretrain.jsonl", "pre-training data"),
              load_split(c.paths.train_data, root, "train.jsonl", "training data"),
              load_split(c.paths.test_data, root, "test.jsonl", "test data")};
    }
    RunDir dir(root, stage, c);
    const auto g = run_grid(c, data, dir.path());
    write_text(dir / "grid.md", grid_markdown(g));
    write_text(dir / "grid.csv", grid_csv(g));
    write_text(dir / "grid.json", grid_json(g).dump(2) + "\n");
    if (c.grid.plot) write_text(dir / "grid.svg", grid_svg(g));
    dir.publish();
    out << grid_markdown(g) << "-> " << dir.path().string() << "\n";
    return dir.path();
  }
  throw Error(ErrorKind::usage, "unknown stage '" + stage + "'");
}

/// Parses argv, runs the stage and maps failures to categorized exit
/// statuses. Diagnostics go to `err`.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"pose tokenizer, masked-unit pre-training and sign classification"};
  app.require_subcommand(1, 1);
  CommandOptions o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--profile", o.profile, "base profile")->check(CLI::IsMember({"full", "test"}));
    sub->add_option("--out", o.out, "root directory for run directories")->capture_default_str();
  };
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "generate synthetic pre-training/train/test splits"},
      {"tokenizer", "train the pose tokenizer"},
      {"tokenize", "write per-frame tokens of the pre-training data"},
      {"pretrain", "masked-unit pre-training"},
      {"finetune", "fine-tune a classifier"},
      {"evaluate", "score the test split and report metrics"},
      {"fuse", "late fusion with external scores"},
      {"grid", "run an ablation grid"}};
  for (const auto& [name, help] : stages) add_common(app.add_subcommand(name, help));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code(ErrorKind::usage);
  }
  o.stage = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed")) o.seed = seed;
  try {
    execute_stage(o, out);
    return 0;
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace best
