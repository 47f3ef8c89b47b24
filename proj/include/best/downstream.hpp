#pragma once

// Sign classification on top of the pre-trained encoder: fine-tuning,
// evaluation metrics and late fusion with externally supplied scores.

#include "best/backbone.hpp"
#include "best/error.hpp"
#include "best/mum.hpp"
#include "best/nn.hpp"
#include "best/optim.hpp"
#include "best/pose.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace best {

template <typename T>
struct ClassifierModel {
  ModelConfig config;
  int num_classes = 0;
  EmbeddingParams<T> embedding;
  EncoderParams<T> encoder;
  Linear<T> hidden;  ///< D -> head width
  Linear<T> output;  ///< head width -> classes
  nlohmann::json metadata = nlohmann::json::object();

  template <typename F>
  void visit(F&& f) {
    embedding.visit("embedding", f);
    encoder.visit("encoder", f);
    hidden.visit("head.hidden", f);
    output.visit("head.output", f);
  }
};

/// Fresh head on a deep copy of the pre-trained embedding and encoder.
template <typename T>
ClassifierModel<T> classifier_from_pretrained(const PretrainedModel<T>& pre, int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw Error(ErrorKind::config, "classifier needs at least one class");
  auto rng = make_rng(seed, 0xc1);
  ClassifierModel<T> m;
  m.config = pre.config;
  m.num_classes = num_classes;
  m.embedding = pre.embedding;
  m.encoder = pre.encoder;
  const Index d = pre.config.model_dim;
  m.hidden = Linear<T>::init(d, d / 2, rng);
  m.output = Linear<T>::init(d / 2, num_classes, rng);
  m = clone_model<T>(m);
  m.metadata["pretrained"] = pre.metadata;
  return m;
}

/// Same architecture without pre-training.
template <typename T>
ClassifierModel<T> classifier_from_scratch(const ModelConfig& cfg, int num_classes, std::uint64_t seed) {
  PretrainedModel<T> fresh = init_pretrained<T>(cfg, 1, 1, seed);
  fresh.metadata = nlohmann::json::object();
  auto m = classifier_from_pretrained(fresh, num_classes, seed);
  m.metadata = {{"pretrained", nullptr}};
  return m;
}

/// 1 x classes logits for an already sampled frame sequence. No mask
/// token is involved: embeddings go straight to the temporal sum.
template <typename T>
ag::Var<T> classifier_forward(const ClassifierModel<T>& m, std::span<const PoseTripletUnit> frames,
                              const ForwardMode& mode = {}) {
  const auto x = embed_sequence<T>(frames, m.embedding);
  const auto f0 = ag::add(x, ag::constant<T>(temporal_encoding<T>(x.rows(), x.cols())));
  const auto pooled = ag::mean_rows(encode_sequence(f0, m.encoder, mode));
  return m.output(ag::gelu(m.hidden(pooled)));
}

struct FinetuneConfig {
  int epochs = 30;
  int batch = 64;
  double lr = 1e-4;
  int lr_decay_every = 10;
  double lr_decay = 0.1;
  double weight_decay = 0.0;
  bool augment = true;
  JitterParams jitter{};
};

inline void require_labeled(const PoseDataset& ds, const char* who) {
  if (ds.sequences.empty()) throw Error(ErrorKind::data, std::string(who) + ": dataset is empty");
  if (!ds.labeled()) throw Error(ErrorKind::data, std::string(who) + ": dataset has unlabeled sequences");
  for (const auto& s : ds.sequences)
    if (*s.label < 0 || *s.label >= ds.num_classes)
      throw Error(ErrorKind::data, std::string(who) + ": label out of range in '" + s.id + "'");
}

/// Cross-entropy fine-tuning of every parameter. Training frames are
/// randomly sampled and perturbed; the schedule is a step decay.
template <typename T>
ClassifierModel<T> finetune(const PoseDataset& ds, ClassifierModel<T> m, const FinetuneConfig& cfg, std::uint64_t seed,
                            TrainLog* log = nullptr) {
  require_labeled(ds, "finetune");
  if (ds.num_classes != m.num_classes)
    throw Error(ErrorKind::data, "finetune: dataset has " + std::to_string(ds.num_classes) + " classes, model " +
                                     std::to_string(m.num_classes));
  if (cfg.epochs < 0 || cfg.batch < 1) throw Error(ErrorKind::config, "finetune: invalid schedule");
  Adam<T> opt(parameters_of<T>(m), AdamOptions{.weight_decay = cfg.weight_decay});
  auto rng = make_rng(seed, 0xf1);
  auto dropout_rng = make_rng(seed, 0xf2);
  const ForwardMode mode{&dropout_rng, m.config.dropout};
  const auto frames_n = static_cast<std::size_t>(m.config.frames);
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_decay_lr(cfg.lr, epoch, cfg.lr_decay_every, cfg.lr_decay);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      ag::Var<T> total;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(epoch), i);
        PoseSequence seq = sample_frames(ds.sequences[i], frames_n, SampleMode::random, s);
        if (cfg.augment) seq = perturb(seq, s ^ 0x9e37, cfg.jitter);
        const auto logits = classifier_forward(m, seq.frames, mode);
        const Index label = *ds.sequences[i].label;
        Index arg = 0;
        logits.value().row(0).maxCoeff(&arg);
        if (arg == label) ++correct;
        const auto ce = ag::cross_entropy_sum(logits, {label});
        total = total.defined() ? ag::add(total, ce) : ce;
      }
      const double value = static_cast<double>(total.scalar());
      if (!std::isfinite(value))
        throw Error(ErrorKind::numeric, "fine-tuning loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += value;
      opt.zero_grad();
      ag::backward(ag::scale(total, static_cast<T>(1.0 / static_cast<double>(end - start))));
      opt.step(lr);
    }
    if (log)
      log->records.push_back({{"stage", "finetune"},
                              {"epoch", epoch},
                              {"split", "train"},
                              {"loss", loss_sum / static_cast<double>(order.size())},
                              {"lr", lr},
                              {"accuracy", 100.0 * static_cast<double>(correct) / static_cast<double>(order.size())}});
  }
  m.metadata["finetune"] = {{"epochs", cfg.epochs}, {"batch", cfg.batch}, {"lr", cfg.lr}, {"seed", seed}};
  return m;
}

/// Pre-softmax class scores; evaluation mode with centre sampling.
template <typename T>
std::vector<double> classify(const PoseSequence& seq, const ClassifierModel<T>& m) {
  ag::NoGradGuard guard;
  const auto sampled = sample_frames(seq, static_cast<std::size_t>(m.config.frames), SampleMode::center, 0);
  const auto logits = classifier_forward(m, sampled.frames).value();
  std::vector<double> out(static_cast<std::size_t>(logits.cols()));
  for (Index c = 0; c < logits.cols(); ++c) out[static_cast<std::size_t>(c)] = static_cast<double>(logits(0, c));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double per_instance_top1 = 0, per_instance_top5 = 0;
  double per_class_top1 = 0, per_class_top5 = 0;
  std::size_t samples = 0;
  std::vector<std::size_t> class_counts;
  std::vector<std::size_t> class_top1_hits;
  std::vector<std::size_t> class_top5_hits;
  std::vector<std::vector<std::size_t>> confusion;  ///< [true][predicted]

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Position of `label` when classes are ordered by descending score, ties
/// broken by ascending class index.
inline std::size_t label_rank(const std::vector<double>& scores, int label) {
  const double s = scores[static_cast<std::size_t>(label)];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && static_cast<int>(j) < label)) ++rank;
  return rank;
}

inline int top1(const std::vector<double>& scores) {
  int best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

inline MetricsReport metrics_from_scores(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels,
                                         int num_classes) {
  if (scores.empty()) throw Error(ErrorKind::data, "evaluate: no samples");
  if (scores.size() != labels.size()) throw Error(ErrorKind::data, "evaluate: score/label count mismatch");
  const auto c = static_cast<std::size_t>(num_classes);
  MetricsReport r;
  r.samples = scores.size();
  r.class_counts.assign(c, 0);
  r.class_top1_hits.assign(c, 0);
  r.class_top5_hits.assign(c, 0);
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != c) throw Error(ErrorKind::data, "evaluate: score length differs from class count");
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw Error(ErrorKind::data, "evaluate: label out of range");
    const auto rank = label_rank(scores[i], y);
    const auto yi = static_cast<std::size_t>(y);
    ++r.class_counts[yi];
    ++r.confusion[yi][static_cast<std::size_t>(top1(scores[i]))];
    if (rank < 1) ++hit1, ++r.class_top1_hits[yi];
    if (rank < 5) ++hit5, ++r.class_top5_hits[yi];
  }
  const double n = static_cast<double>(scores.size());
  r.per_instance_top1 = 100.0 * static_cast<double>(hit1) / n;
  r.per_instance_top5 = 100.0 * static_cast<double>(hit5) / n;
  // mean of per-class rates over a common denominator, so equal class
  // counts give exactly the per-instance figure
  std::uint64_t common = 1;
  std::size_t present = 0;
  bool exact = true;
  for (std::size_t k = 0; k < c; ++k) {
    if (r.class_counts[k] == 0) continue;
    ++present;
    const std::uint64_t l = std::lcm(common, static_cast<std::uint64_t>(r.class_counts[k]));
    if (l > (std::uint64_t{1} << 40)) exact = false;
    else common = l;
  }
  auto per_class = [&](const std::vector<std::size_t>& hits) {
    if (exact) {
      std::uint64_t num = 0;
      for (std::size_t k = 0; k < c; ++k)
        if (r.class_counts[k]) num += hits[k] * (common / r.class_counts[k]);
      return 100.0 * static_cast<double>(num) / static_cast<double>(common * present);
    }
    double a = 0;
    for (std::size_t k = 0; k < c; ++k)
      if (r.class_counts[k]) a += static_cast<double>(hits[k]) / static_cast<double>(r.class_counts[k]);
    return 100.0 * a / static_cast<double>(present);
  };
  r.per_class_top1 = per_class(r.class_top1_hits);
  r.per_class_top5 = per_class(r.class_top5_hits);
  return r;
}

inline std::vector<int> dataset_labels(const PoseDataset& ds) {
  std::vector<int> out;
  for (const auto& s : ds.sequences) out.push_back(*s.label);
  return out;
}

template <typename T>
std::vector<std::vector<double>> classify_all(const PoseDataset& ds, const ClassifierModel<T>& m) {
  std::vector<std::vector<double>> out;
  for (const auto& s : ds.sequences) out.push_back(classify(s, m));
  return out;
}

template <typename T>
MetricsReport evaluate(const PoseDataset& ds, const ClassifierModel<T>& m) {
  require_labeled(ds, "evaluate");
  return metrics_from_scores(classify_all(ds, m), dataset_labels(ds), ds.num_classes);
}

// ---------------------------------------------------------------------------
// Late fusion

inline std::vector<double> softmax(const std::vector<double>& s) {
  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double z = 0;
  for (std::size_t i = 0; i < s.size(); ++i) z += out[i] = std::exp(s[i] - m);
  for (auto& v : out) v /= z;
  return out;
}

/// Weighted sum of two score vectors, each softmax-normalized first unless
/// `raw` is set.
inline std::vector<double> late_fuse(const std::vector<double>& a, const std::vector<double>& b,
                                     std::pair<double, double> weights = {1.0, 1.0}, bool raw = false) {
  if (a.size() != b.size() || a.empty())
    throw Error(ErrorKind::data, "late_fuse: score lengths differ (" + std::to_string(a.size()) + " vs " +
                                     std::to_string(b.size()) + ")");
  const auto pa = raw ? a : softmax(a);
  const auto pb = raw ? b : softmax(b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = weights.first * pa[i] + weights.second * pb[i];
  return out;
}

struct ScoreRecord {
  std::string id;
  std::vector<double> scores;
};

inline std::vector<ScoreRecord> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::dependency, "cannot open score file " + path);
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("scores").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::data, path + ": malformed score record at line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_scores(const std::string& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path);
  for (const auto& r : records) out << nlohmann::json{{"id", r.id}, {"scores", r.scores}}.dump() << "\n";
}

/// Fuses two score sets whose ids must match one to one; output follows
/// the order of `a`.
inline std::vector<ScoreRecord> fuse_scores(const std::vector<ScoreRecord>& a, const std::vector<ScoreRecord>& b,
                                            std::pair<double, double> weights = {1.0, 1.0}, bool raw = false) {
  std::map<std::string, const ScoreRecord*> by_id;
  for (const auto& r : b)
    if (!by_id.emplace(r.id, &r).second) throw Error(ErrorKind::data, "duplicate id '" + r.id + "' in external scores");
  if (a.size() != b.size())
    throw Error(ErrorKind::data, "score sets differ in size (" + std::to_string(a.size()) + " vs " +
                                     std::to_string(b.size()) + ")");
  std::set<std::string> seen;
  std::vector<ScoreRecord> out;
  for (const auto& r : a) {
    if (!seen.insert(r.id).second) throw Error(ErrorKind::data, "duplicate id '" + r.id + "' in model scores");
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw Error(ErrorKind::data, "id '" + r.id + "' missing from external scores");
    out.push_back({r.id, late_fuse(r.scores, it->second->scores, weights, raw)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"per_instance_top1", r.per_instance_top1},
          {"per_instance_top5", r.per_instance_top5},
          {"per_class_top1", r.per_class_top1},
          {"per_class_top5", r.per_class_top5},
          {"samples", r.samples},
          {"class_counts", r.class_counts},
          {"class_top1_hits", r.class_top1_hits},
          {"class_top5_hits", r.class_top5_hits},
          {"confusion", r.confusion}};
}

inline std::string format_report(const MetricsReport& r, const std::vector<std::string>& class_names = {}) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "samples      " << r.samples << "\n";
  os << "P-I Top-1    " << r.per_instance_top1 << "\n";
  os << "P-I Top-5    " << r.per_instance_top5 << "\n";
  os << "P-C Top-1    " << r.per_class_top1 << "\n";
  os << "P-C Top-5    " << r.per_class_top5 << "\n";
  os << "\nclass                count  top1\n";
  for (std::size_t k = 0; k < r.class_counts.size(); ++k) {
    if (r.class_counts[k] == 0) continue;
    const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
    os << std::left << std::setw(20) << name << std::right << std::setw(6) << r.class_counts[k] << std::setw(6)
       << r.class_top1_hits[k] << "\n";
  }
  return os.str();
}

/// Confusion counts as CSV, rows = true class, columns = predicted class.
inline std::string confusion_csv(const MetricsReport& r, const std::vector<std::string>& class_names = {}) {
  auto name = [&](std::size_t k) { return k < class_names.size() ? class_names[k] : std::to_string(k); };
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t k = 0; k < r.confusion.size(); ++k) os << "," << name(k);
  os << "\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << name(i);
    for (auto v : r.confusion[i]) os << "," << v;
    os << "\n";
  }
  return os.str();
}

}  // namespace best
