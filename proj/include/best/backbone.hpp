#pragma once

// Transformer encoder over masked unit sequences, per-part token heads and
// the masked-unit pre-training loop.

#include "best/autograd.hpp"
#include "best/error.hpp"
#include "best/mum.hpp"
#include "best/nn.hpp"
#include "best/optim.hpp"
#include "best/tokenizer.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace best {

struct ModelConfig {
  int model_dim = 1536;
  int layers = 6;
  int heads = 8;
  int ffn_dim = 2048;
  double dropout = 0.1;
  int gcn_hidden = 64;
  int frames = 32;
  bool per_part_mask_token = false;

  int part_dim() const { return model_dim / 3; }
};

/// Problems with a model configuration, one message per violated rule.
inline std::vector<std::string> validate(const ModelConfig& c) {
  std::vector<std::string> v;
  if (c.model_dim < 3 || c.model_dim % 3 != 0) v.push_back("model_dim must be a positive multiple of 3");
  if (c.model_dim % 2 != 0) v.push_back("model_dim must be even (temporal encoding)");
  if (c.heads < 1 || c.model_dim % std::max(c.heads, 1) != 0) v.push_back("model_dim must be divisible by heads");
  if (c.layers < 1) v.push_back("layers must be at least 1");
  if (c.ffn_dim < 1) v.push_back("ffn_dim must be at least 1");
  if (c.gcn_hidden < 1) v.push_back("gcn_hidden must be at least 1");
  if (c.frames < 1) v.push_back("frames must be at least 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) v.push_back("dropout must lie in [0, 1)");
  return v;
}

/// Dropout source for a forward pass; a null rng means evaluation mode.
struct ForwardMode {
  std::mt19937_64* rng = nullptr;
  double dropout = 0.0;

  bool training() const { return rng != nullptr && dropout > 0.0; }
};

template <typename T>
ag::Var<T> maybe_dropout(const ag::Var<T>& x, const ForwardMode& mode) {
  if (!mode.training()) return x;
  return ag::dropout(x, static_cast<T>(mode.dropout), *mode.rng);
}

template <typename T>
struct EncoderLayer {
  LayerNorm<T> norm1, norm2;
  Linear<T> query, key, value, out;
  Linear<T> ffn1, ffn2;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm1.visit(prefix + ".norm1", f);
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    out.visit(prefix + ".out", f);
    norm2.visit(prefix + ".norm2", f);
    ffn1.visit(prefix + ".ffn1", f);
    ffn2.visit(prefix + ".ffn2", f);
  }
};

template <typename T>
struct EncoderParams {
  int heads = 8;
  std::vector<EncoderLayer<T>> layers;
  LayerNorm<T> final_norm;

  Index model_dim() const { return layers.empty() ? 0 : layers.front().query.in_features(); }

  template <typename Rng>
  static EncoderParams init(const ModelConfig& c, Rng& rng) {
    EncoderParams e;
    e.heads = c.heads;
    const Index d = c.model_dim;
    for (int l = 0; l < c.layers; ++l) {
      EncoderLayer<T> layer;
      layer.norm1 = LayerNorm<T>::init(d);
      layer.query = Linear<T>::init(d, d, rng);
      layer.key = Linear<T>::init(d, d, rng);
      layer.value = Linear<T>::init(d, d, rng);
      layer.out = Linear<T>::init(d, d, rng);
      layer.norm2 = LayerNorm<T>::init(d);
      layer.ffn1 = Linear<T>::init(d, c.ffn_dim, rng);
      layer.ffn2 = Linear<T>::init(c.ffn_dim, d, rng);
      e.layers.push_back(std::move(layer));
    }
    e.final_norm = LayerNorm<T>::init(d);
    return e;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + ".layers." + std::to_string(l), f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

/// Multi-head bidirectional self-attention over the rows of x (frames).
template <typename T>
ag::Var<T> self_attention(const ag::Var<T>& x, const EncoderLayer<T>& l, int heads, const ForwardMode& mode) {
  const Index d = x.cols(), dh = d / heads;
  const auto q = l.query(x), k = l.key(x), v = l.value(x);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<ag::Var<T>> outs;
  for (int h = 0; h < heads; ++h) {
    const auto qh = ag::slice_cols(q, h * dh, dh), kh = ag::slice_cols(k, h * dh, dh), vh = ag::slice_cols(v, h * dh, dh);
    auto attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale));
    attn = maybe_dropout(attn, mode);
    outs.push_back(ag::matmul(attn, vh));
  }
  return l.out(ag::concat_cols(outs));
}

/// Pre-normalization Transformer stack followed by a final LayerNorm.
template <typename T>
ag::Var<T> encode_sequence(const ag::Var<T>& input, const EncoderParams<T>& e, const ForwardMode& mode = {}) {
  if (input.cols() != e.model_dim())
    throw Error(ErrorKind::data, "encode_sequence: feature dimension " + std::to_string(input.cols()) +
                                     " does not match model dimension " + std::to_string(e.model_dim()));
  auto x = input;
  for (const auto& l : e.layers) {
    x = ag::add(x, maybe_dropout(self_attention(l.norm1(x), l, e.heads, mode), mode));
    x = ag::add(x, maybe_dropout(l.ffn2(ag::gelu(l.ffn1(l.norm2(x)))), mode));
  }
  return e.final_norm(x);
}

// ---------------------------------------------------------------------------
// Heads and objectives

enum class PretrainObjective { token, regress };

inline const char* to_string(PretrainObjective o) { return o == PretrainObjective::token ? "token" : "regress"; }

inline PretrainObjective parse_objective(const std::string& s) {
  if (s == "token") return PretrainObjective::token;
  if (s == "regress") return PretrainObjective::regress;
  throw Error(ErrorKind::config, "unknown pre-training objective '" + s + "'");
}

/// Linear maps from a part slice of the encoder output; `hand` is shared by
/// the left and right slices. Token heads emit codebook logits, regression
/// heads emit flattened keypoints.
template <typename T>
struct PartHeads {
  Linear<T> hand;
  Linear<T> body;

  template <typename Rng>
  static PartHeads init(Index part_dim, Index hand_out, Index body_out, Rng& rng) {
    return {Linear<T>::init(part_dim, hand_out, rng), Linear<T>::init(part_dim, body_out, rng)};
  }
  const Linear<T>& operator[](Part p) const { return p == Part::body ? body : hand; }
  bool defined() const { return hand.defined(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    hand.visit(prefix + ".hand", f);
    body.visit(prefix + ".body", f);
  }
};

template <typename T>
struct PartTables {
  Matrix<T> left, right, body;

  const Matrix<T>& operator[](Part p) const { return p == Part::left ? left : p == Part::right ? right : body; }
  Matrix<T>& operator[](Part p) { return p == Part::left ? left : p == Part::right ? right : body; }
};

template <typename T>
ag::Var<T> part_slice(const ag::Var<T>& features, Part p) {
  const Index dp = features.cols() / 3;
  return ag::slice_cols(features, index(p) * dp, dp);
}

/// Per-frame, per-part codebook distributions (rows sum to one).
template <typename T>
PartTables<T> predict_tokens(const ag::Var<T>& encoded, const PartHeads<T>& heads) {
  ag::NoGradGuard guard;
  PartTables<T> out;
  for (Part p : kParts) out[p] = ag::softmax_rows_value(heads[p](part_slice(encoded, p)).value());
  return out;
}

/// Mean negative log-likelihood over masked part positions, from
/// probability tables. An empty plan gives 0 and a warning.
template <typename T>
double mum_loss(const PartTables<T>& probabilities, const std::vector<TokenTriplet>& labels, const MaskPlan& plan) {
  if (plan.empty()) {
    warn("mum_loss: empty mask plan, loss defined as 0");
    return 0.0;
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& f : plan.frames) {
    if (f.frame < 0 || static_cast<std::size_t>(f.frame) >= labels.size())
      throw Error(ErrorKind::data, "mum_loss: masked frame out of range");
    for (Part p : kParts) {
      if (!f.masks(p)) continue;
      sum -= std::log(static_cast<double>(probabilities[p](f.frame, labels[static_cast<std::size_t>(f.frame)][p])));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

/// Summed loss over masked positions of one sequence, kept as a graph node
/// so several sequences can share one normalization.
template <typename T>
struct MaskedLoss {
  ag::Var<T> sum;  ///< undefined when nothing is masked
  std::array<double, 3> part_sum{};
  std::array<std::size_t, 3> part_count{};

  std::size_t count() const { return part_count[0] + part_count[1] + part_count[2]; }
};

template <typename T>
MaskedLoss<T> masked_token_loss(const ag::Var<T>& encoded, const PartHeads<T>& heads,
                                const std::vector<TokenTriplet>& labels, const MaskPlan& plan) {
  MaskedLoss<T> out;
  std::vector<ag::Var<T>> terms;
  for (Part p : kParts) {
    const auto pos = plan.positions(p);
    if (pos.empty()) continue;
    std::vector<Index> rows(pos.begin(), pos.end());
    std::vector<Index> targets;
    for (int t : pos) {
      if (t < 0 || static_cast<std::size_t>(t) >= labels.size())
        throw Error(ErrorKind::data, "masked_token_loss: masked frame out of range");
      targets.push_back(labels[static_cast<std::size_t>(t)][p]);
    }
    auto term = ag::cross_entropy_sum(heads[p](ag::gather_rows(part_slice(encoded, p), rows)), targets);
    out.part_sum[static_cast<std::size_t>(index(p))] = static_cast<double>(term.scalar());
    out.part_count[static_cast<std::size_t>(index(p))] = pos.size();
    terms.push_back(term);
  }
  for (const auto& t : terms) out.sum = out.sum.defined() ? ag::add(out.sum, t) : t;
  return out;
}

/// Regression variant: per masked position, mean squared error between the
/// predicted and original keypoints of that part.
template <typename T>
MaskedLoss<T> masked_regression_loss(const ag::Var<T>& encoded, const PartHeads<T>& heads,
                                     std::span<const PoseTripletUnit> frames, const MaskPlan& plan) {
  MaskedLoss<T> out;
  std::vector<ag::Var<T>> terms;
  for (Part p : kParts) {
    const auto pos = plan.positions(p);
    if (pos.empty()) continue;
    std::vector<Index> rows(pos.begin(), pos.end());
    std::vector<PoseTripletUnit> picked;
    for (int t : pos) picked.push_back(frames[static_cast<std::size_t>(t)]);
    const auto target = to_part_batch<T>(picked, false)[p];
    auto term = ag::scale(ag::mse(heads[p](ag::gather_rows(part_slice(encoded, p), rows)), target),
                          static_cast<T>(pos.size()));
    out.part_sum[static_cast<std::size_t>(index(p))] = static_cast<double>(term.scalar());
    out.part_count[static_cast<std::size_t>(index(p))] = pos.size();
    terms.push_back(term);
  }
  for (const auto& t : terms) out.sum = out.sum.defined() ? ag::add(out.sum, t) : t;
  return out;
}

// ---------------------------------------------------------------------------
// Pre-trained model

struct PretrainConfig {
  double alpha = 0.5;
  MaskStrategy strategy = MaskStrategy::both;
  PretrainObjective objective = PretrainObjective::token;
  int epochs = 100;
  int batch = 64;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int warmup_epochs = 6;
};

template <typename T>
struct PretrainedModel {
  ModelConfig config;
  int hand_codes = 0;
  int body_codes = 0;
  PretrainObjective objective = PretrainObjective::token;
  EmbeddingParams<T> embedding;
  MaskToken<T> mask_token;
  EncoderParams<T> encoder;
  PartHeads<T> heads;  ///< token or regression heads, per objective
  nlohmann::json metadata = nlohmann::json::object();

  template <typename F>
  void visit(F&& f) {
    embedding.visit("embedding", f);
    mask_token.visit("mask_token", f);
    encoder.visit("encoder", f);
    heads.visit("heads", f);
  }
};

template <typename T>
PretrainedModel<T> init_pretrained(const ModelConfig& c, int hand_codes, int body_codes, std::uint64_t seed,
                                   PretrainObjective objective = PretrainObjective::token) {
  if (auto v = validate(c); !v.empty()) throw Error(ErrorKind::config, "invalid model configuration: " + v.front());
  auto rng = make_rng(seed, 0xb0);
  PretrainedModel<T> m;
  m.config = c;
  m.hand_codes = hand_codes;
  m.body_codes = body_codes;
  m.objective = objective;
  const Index dp = c.part_dim();
  m.embedding = EmbeddingParams<T>::init(dp, c.gcn_hidden, rng);
  m.mask_token = MaskToken<T>::init(dp, c.per_part_mask_token, rng);
  m.encoder = EncoderParams<T>::init(c, rng);
  if (objective == PretrainObjective::token)
    m.heads = PartHeads<T>::init(dp, hand_codes, body_codes, rng);
  else
    m.heads = PartHeads<T>::init(dp, 2 * kHandJoints, 2 * kBodyJoints, rng);
  return m;
}

/// Encoder output for frames under a mask plan.
template <typename T>
ag::Var<T> pretrained_forward(const PretrainedModel<T>& m, std::span<const PoseTripletUnit> frames, const MaskPlan& plan,
                              const ForwardMode& mode = {}) {
  const auto x = embed_sequence<T>(frames, m.embedding);
  const auto f0 = apply_mask(x, plan, m.mask_token, temporal_encoding<T>(x.rows(), x.cols()));
  return encode_sequence(f0, m.encoder, mode);
}

template <typename T>
MaskedLoss<T> pretrain_loss(const PretrainedModel<T>& m, std::span<const PoseTripletUnit> frames,
                            const std::vector<TokenTriplet>& labels, const MaskPlan& plan, const ForwardMode& mode = {}) {
  if (plan.empty()) return {};
  const auto encoded = pretrained_forward(m, frames, plan, mode);
  if (m.objective == PretrainObjective::token) return masked_token_loss(encoded, m.heads, labels, plan);
  return masked_regression_loss(encoded, m.heads, frames, plan);
}

/// Per-sequence seed for the mask plan of `epoch`.
inline std::uint64_t plan_seed(std::uint64_t seed, int epoch, std::size_t sequence) {
  return mix_seed(seed ^ 0x6d61736bull, static_cast<std::uint64_t>(epoch), sequence);
}

/// Evaluation-mode loss with one fixed plan per sequence and centre
/// sampling. Returns the mean over all masked part positions.
template <typename T>
double evaluate_pretrain_loss(const PretrainedModel<T>& m, const std::vector<PoseSequence>& seqs,
                              const std::vector<std::vector<TokenTriplet>>& tokens, const PretrainConfig& cfg,
                              std::uint64_t seed, std::size_t* positions = nullptr) {
  ag::NoGradGuard guard;
  double sum = 0.0;
  std::size_t count = 0;
  const auto frames_n = static_cast<std::size_t>(m.config.frames);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto idx = sample_indices(seqs[i].frames.size(), frames_n, SampleMode::center, 0);
    std::vector<PoseTripletUnit> frames;
    std::vector<TokenTriplet> labels;
    for (std::size_t j : idx) {
      frames.push_back(seqs[i].frames[j]);
      labels.push_back(tokens[i][j]);
    }
    const auto plan = sample_mask(m.config.frames, cfg.alpha, plan_seed(seed, -1, i), cfg.strategy);
    const auto loss = pretrain_loss(m, frames, labels, plan);
    if (loss.count() == 0) continue;
    sum += static_cast<double>(loss.sum.scalar());
    count += loss.count();
  }
  if (positions) *positions = count;
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Masked-unit pre-training against pseudo labels from a frozen tokenizer.
/// AdamW with linear warmup then linear decay; the learning rate is
/// updated every step from the fractional epoch.
template <typename T, typename Tok>
PretrainedModel<T> pretrain(const PoseDataset& ds, const TokenizerModel<Tok>& tokenizer, const ModelConfig& model_cfg,
                            const PretrainConfig& cfg, std::uint64_t seed, TrainLog* log = nullptr) {
  if (ds.sequences.empty()) throw Error(ErrorKind::data, "pretrain: dataset is empty");
  if (!tokenizer.frozen) throw Error(ErrorKind::dependency, "pretrain: tokenizer must be frozen");
  if (cfg.epochs < 0 || cfg.batch < 1) throw Error(ErrorKind::config, "pretrain: invalid schedule");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw Error(ErrorKind::config, "pretrain: alpha must lie in [0, 1]");
  const std::uint64_t tokenizer_hash = parameter_hash<Tok>(tokenizer);

  std::vector<std::vector<TokenTriplet>> tokens;
  for (const auto& s : ds.sequences) tokens.push_back(tokenize_sequence(s, tokenizer));

  PretrainedModel<T> m = init_pretrained<T>(model_cfg, static_cast<int>(tokenizer.hand_codebook.size()),
                                            static_cast<int>(tokenizer.body_codebook.size()), seed, cfg.objective);
  m.metadata = {{"alpha", cfg.alpha},
                {"strategy", to_string(cfg.strategy)},
                {"objective", to_string(cfg.objective)},
                {"epochs", cfg.epochs},
                {"batch", cfg.batch},
                {"lr", cfg.lr},
                {"weight_decay", cfg.weight_decay},
                {"warmup_epochs", cfg.warmup_epochs},
                {"seed", seed},
                {"tokenizer_hash", tokenizer_hash}};

  Adam<T> opt(parameters_of<T>(m), AdamOptions{.weight_decay = cfg.weight_decay});
  auto rng = make_rng(seed, 0xb1);
  auto dropout_rng = make_rng(seed, 0xb2);
  const ForwardMode mode{&dropout_rng, model_cfg.dropout};
  const auto frames_n = static_cast<std::size_t>(model_cfg.frames);
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  const std::size_t steps_per_epoch = (order.size() + batch - 1) / batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0, lr = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      lr = warmup_linear_lr(cfg.lr, epoch + static_cast<double>(b + 1) / static_cast<double>(steps_per_epoch),
                            cfg.warmup_epochs, cfg.epochs);
      ag::Var<T> total;
      std::size_t count = 0;
      for (std::size_t k = b * batch; k < std::min(order.size(), (b + 1) * batch); ++k) {
        const std::size_t i = order[k];
        const auto& seq = ds.sequences[i];
        const auto idx = sample_indices(seq.frames.size(), frames_n, SampleMode::random, plan_seed(seed, epoch, i) ^ 1);
        std::vector<PoseTripletUnit> frames;
        std::vector<TokenTriplet> labels;
        for (std::size_t j : idx) {
          frames.push_back(seq.frames[j]);
          labels.push_back(tokens[i][j]);
        }
        const auto plan = sample_mask(model_cfg.frames, cfg.alpha, plan_seed(seed, epoch, i), cfg.strategy);
        const auto loss = pretrain_loss(m, frames, labels, plan, mode);
        if (loss.count() == 0) continue;
        total = total.defined() ? ag::add(total, loss.sum) : loss.sum;
        count += loss.count();
      }
      if (count == 0) continue;
      const double value = static_cast<double>(total.scalar());
      if (!std::isfinite(value))
        throw Error(ErrorKind::numeric, "pre-training loss became non-finite at epoch " + std::to_string(epoch));
      epoch_sum += value;
      epoch_count += count;
      opt.zero_grad();
      ag::backward(ag::scale(total, static_cast<T>(1.0 / static_cast<double>(count))));
      opt.step(lr);
    }
    if (log)
      log->records.push_back({{"stage", "pretrain"},
                              {"epoch", epoch},
                              {"split", "train"},
                              {"loss", epoch_count ? epoch_sum / static_cast<double>(epoch_count) : 0.0},
                              {"lr", lr},
                              {"masked_positions", epoch_count}});
  }

  std::size_t positions = 0;
  const double final_loss = evaluate_pretrain_loss(m, ds.sequences, tokens, cfg, seed, &positions);
  m.metadata["final_loss"] = final_loss;
  if (log)
    log->records.push_back({{"stage", "pretrain"},
                            {"epoch", cfg.epochs},
                            {"split", "eval"},
                            {"loss", final_loss},
                            {"lr", 0.0},
                            {"masked_positions", positions}});
  if (parameter_hash<Tok>(tokenizer) != tokenizer_hash)
    throw Error(ErrorKind::integrity, "pretrain: tokenizer parameters changed during pre-training");
  return m;
}

}  // namespace best
