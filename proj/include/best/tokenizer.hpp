#pragma once

// Coupled discrete tokenizer for pose triplet units.
//
// Encoder: per-part MLPs (one shared by both hands) feed a trunk over the
// concatenated part features; per-part heads read [part feature, trunk] and
// emit one latent per part. Latents are snapped to the nearest codeword of
// the hand codebook (both hands) or the body codebook. The decoder mirrors
// the encoder. Training minimizes
//   L = L_hand + b1 L_body + b2 |sg[z] - z_q|^2 + b3 |sg[z_q] - z|^2
// with the decoder input z + sg[z_q - z] so reconstruction gradients reach
// the encoder unchanged. The separate-VQ baseline drops the trunk; the
// K-Means baseline clusters raw keypoints and has no networks.

#include "best/error.hpp"
#include "best/kmeans.hpp"
#include "best/nn.hpp"
#include "best/optim.hpp"
#include "best/pose.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace best {

enum class TokenizerKind { coupled, separate_vq, kmeans };

inline const char* to_string(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::coupled: return "coupled";
    case TokenizerKind::separate_vq: return "separate_vq";
    case TokenizerKind::kmeans: return "kmeans";
  }
  return "?";
}

inline TokenizerKind parse_tokenizer_kind(const std::string& s) {
  if (s == "coupled") return TokenizerKind::coupled;
  if (s == "separate_vq") return TokenizerKind::separate_vq;
  if (s == "kmeans") return TokenizerKind::kmeans;
  throw Error(ErrorKind::config, "unknown tokenizer kind '" + s + "'");
}

/// Weights of the body reconstruction, codebook and commitment terms.
struct Betas {
  double body = 0.1;
  double codebook = 1.0;
  double commitment = 0.9;
};

struct TokenizerConfig {
  TokenizerKind kind = TokenizerKind::coupled;
  int hand_codes = 1000;
  int body_codes = 500;
  int code_dim = 512;
  int hidden = 256;
  Betas betas{};
  bool mirror_left = false;

  int epochs = 30;
  int batch = 64;
  double lr = 1e-3;
  int lr_decay_every = 10;
  double lr_decay = 0.1;
  /// Dead codewords are re-seeded after each of the first `reinit_epochs`
  /// epochs; negative means every epoch.
  int reinit_epochs = 10;
  int kmeans_iters = 100;
};

struct TokenTriplet {
  int left = 0;
  int right = 0;
  int body = 0;

  int operator[](Part p) const { return p == Part::left ? left : p == Part::right ? right : body; }
  friend bool operator==(const TokenTriplet&, const TokenTriplet&) = default;
};

template <typename T>
struct LatentTriplet {
  Matrix<T> left;  ///< 1 x dim
  Matrix<T> right;
  Matrix<T> body;

  const Matrix<T>& operator[](Part p) const { return p == Part::left ? left : p == Part::right ? right : body; }
};

template <typename T>
struct Codebook {
  ag::Var<T> codewords;  ///< size x dim
  std::vector<std::uint64_t> usage_counts;

  Index size() const { return codewords.defined() ? codewords.rows() : 0; }
  Index dim() const { return codewords.defined() ? codewords.cols() : 0; }
};

template <typename T>
struct TokenizerModel {
  TokenizerConfig config;
  Linear<T> enc_hand, enc_body, enc_trunk, enc_hand_head, enc_body_head;
  Linear<T> dec_hand, dec_body, dec_trunk, dec_hand_head, dec_body_head;
  Codebook<T> hand_codebook;
  Codebook<T> body_codebook;
  bool frozen = false;

  bool coupled() const { return config.kind == TokenizerKind::coupled; }
  bool learned() const { return config.kind != TokenizerKind::kmeans; }
  const Codebook<T>& codebook(Part p) const { return p == Part::body ? body_codebook : hand_codebook; }
  void freeze() { frozen = true; }

  template <typename F>
  void visit(F&& f) {
    enc_hand.visit("encoder.hand", f);
    enc_body.visit("encoder.body", f);
    enc_trunk.visit("encoder.trunk", f);
    enc_hand_head.visit("encoder.hand_head", f);
    enc_body_head.visit("encoder.body_head", f);
    dec_hand.visit("decoder.hand", f);
    dec_body.visit("decoder.body", f);
    dec_trunk.visit("decoder.trunk", f);
    dec_hand_head.visit("decoder.hand_head", f);
    dec_body_head.visit("decoder.body_head", f);
    if (hand_codebook.codewords.defined()) f(std::string("codebook.hand"), hand_codebook.codewords);
    if (body_codebook.codewords.defined()) f(std::string("codebook.body"), body_codebook.codewords);
  }
};

template <typename T>
TokenizerModel<T> init_tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) {
  if (cfg.hand_codes < 1 || cfg.body_codes < 1) throw Error(ErrorKind::config, "codebook sizes must be at least 1");
  auto rng = make_rng(seed, 0x701);
  TokenizerModel<T> m;
  m.config = cfg;
  const Index hand_in = 2 * kHandJoints, body_in = 2 * kBodyJoints;
  if (m.learned()) {
    const Index h = cfg.hidden, d = cfg.code_dim;
    const Index head_in = m.coupled() ? 2 * h : h;
    m.enc_hand = Linear<T>::init(hand_in, h, rng);
    m.enc_body = Linear<T>::init(body_in, h, rng);
    if (m.coupled()) m.enc_trunk = Linear<T>::init(3 * h, h, rng);
    m.enc_hand_head = Linear<T>::init(head_in, d, rng);
    m.enc_body_head = Linear<T>::init(head_in, d, rng);
    m.dec_hand = Linear<T>::init(d, h, rng);
    m.dec_body = Linear<T>::init(d, h, rng);
    if (m.coupled()) m.dec_trunk = Linear<T>::init(3 * h, h, rng);
    m.dec_hand_head = Linear<T>::init(head_in, hand_in, rng);
    m.dec_body_head = Linear<T>::init(head_in, body_in, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    auto book = [&](Index size) {
      Matrix<T> w(size, d);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(n(rng));
      return w;
    };
    m.hand_codebook.codewords = ag::parameter<T>(book(cfg.hand_codes));
    m.body_codebook.codewords = ag::parameter<T>(book(cfg.body_codes));
  }
  m.hand_codebook.usage_counts.assign(static_cast<std::size_t>(cfg.hand_codes), 0);
  m.body_codebook.usage_counts.assign(static_cast<std::size_t>(cfg.body_codes), 0);
  return m;
}

// ---------------------------------------------------------------------------
// Batched network passes

/// Flattened keypoints per part: left/right are B x 42, body B x 14.
template <typename T>
struct PartBatch {
  Matrix<T> left, right, body;

  const Matrix<T>& operator[](Part p) const { return p == Part::left ? left : p == Part::right ? right : body; }
  Index rows() const { return body.rows(); }
};

template <typename T>
struct PartVars {
  ag::Var<T> left, right, body;

  const ag::Var<T>& operator[](Part p) const { return p == Part::left ? left : p == Part::right ? right : body; }
};

template <typename T>
PartBatch<T> to_part_batch(std::span<const PoseTripletUnit> units, bool mirror_left) {
  PartBatch<T> b;
  const auto n = static_cast<Index>(units.size());
  b.left.resize(n, 2 * kHandJoints);
  b.right.resize(n, 2 * kHandJoints);
  b.body.resize(n, 2 * kBodyJoints);
  for (Index i = 0; i < n; ++i) {
    const auto& u = units[static_cast<std::size_t>(i)];
    for (int j = 0; j < kHandJoints; ++j) {
      b.left(i, 2 * j) = static_cast<T>(mirror_left ? 1.0 - u.left[j].x : u.left[j].x);
      b.left(i, 2 * j + 1) = static_cast<T>(u.left[j].y);
      b.right(i, 2 * j) = static_cast<T>(u.right[j].x);
      b.right(i, 2 * j + 1) = static_cast<T>(u.right[j].y);
    }
    for (int j = 0; j < kBodyJoints; ++j) {
      b.body(i, 2 * j) = static_cast<T>(u.body[j].x);
      b.body(i, 2 * j + 1) = static_cast<T>(u.body[j].y);
    }
  }
  return b;
}

template <typename T>
PoseTripletUnit from_part_rows(const Matrix<T>& left, const Matrix<T>& right, const Matrix<T>& body, Index row,
                               bool mirror_left) {
  PoseTripletUnit u;
  for (int j = 0; j < kHandJoints; ++j) {
    const double lx = static_cast<double>(left(row, 2 * j));
    u.left[j] = {mirror_left ? 1.0 - lx : lx, static_cast<double>(left(row, 2 * j + 1))};
    u.right[j] = {static_cast<double>(right(row, 2 * j)), static_cast<double>(right(row, 2 * j + 1))};
  }
  for (int j = 0; j < kBodyJoints; ++j)
    u.body[j] = {static_cast<double>(body(row, 2 * j)), static_cast<double>(body(row, 2 * j + 1))};
  return u;
}

template <typename T>
PartVars<T> encode_vars(const TokenizerModel<T>& m, const PartBatch<T>& x) {
  auto l = ag::constant<T>(x.left), r = ag::constant<T>(x.right), b = ag::constant<T>(x.body);
  if (!m.learned()) return {l, r, b};
  auto hl = ag::gelu(m.enc_hand(l));
  auto hr = ag::gelu(m.enc_hand(r));
  auto hb = ag::gelu(m.enc_body(b));
  if (!m.coupled()) return {m.enc_hand_head(hl), m.enc_hand_head(hr), m.enc_body_head(hb)};
  auto c = ag::gelu(m.enc_trunk(ag::concat_cols<T>({hl, hr, hb})));
  return {m.enc_hand_head(ag::concat_cols<T>({hl, c})), m.enc_hand_head(ag::concat_cols<T>({hr, c})),
          m.enc_body_head(ag::concat_cols<T>({hb, c}))};
}

template <typename T>
PartVars<T> decode_vars(const TokenizerModel<T>& m, const PartVars<T>& zq) {
  if (!m.learned()) return zq;
  auto gl = ag::gelu(m.dec_hand(zq.left));
  auto gr = ag::gelu(m.dec_hand(zq.right));
  auto gb = ag::gelu(m.dec_body(zq.body));
  if (!m.coupled()) return {m.dec_hand_head(gl), m.dec_hand_head(gr), m.dec_body_head(gb)};
  auto c = ag::gelu(m.dec_trunk(ag::concat_cols<T>({gl, gr, gb})));
  return {m.dec_hand_head(ag::concat_cols<T>({gl, c})), m.dec_hand_head(ag::concat_cols<T>({gr, c})),
          m.dec_body_head(ag::concat_cols<T>({gb, c}))};
}

/// Records the values behind every stop-gradient and argmin of one forward
/// pass and replays them on later passes. Finite differences taken in
/// replay mode treat sg[.] operands as constants, which is exactly the
/// derivative the straight-through objective defines.
template <typename T>
class FrozenPoint {
 public:
  void start_recording() {
    values_.clear();
    indices_.clear();
    replay_ = false;
  }
  void start_replay() {
    replay_ = true;
    vpos_ = ipos_ = 0;
  }

  Matrix<T> value(const Matrix<T>& live) {
    if (!replay_) {
      values_.push_back(live);
      return live;
    }
    return values_.at(vpos_++);
  }
  std::vector<Index> indices(std::vector<Index> live) {
    if (!replay_) {
      indices_.push_back(live);
      return live;
    }
    return indices_.at(ipos_++);
  }

 private:
  std::vector<Matrix<T>> values_;
  std::vector<std::vector<Index>> indices_;
  bool replay_ = false;
  std::size_t vpos_ = 0, ipos_ = 0;
};

template <typename T>
struct QuantizedVars {
  std::vector<Index> left, right, body;
  PartVars<T> codes;  ///< selected codewords, differentiable w.r.t. the codebooks only
};

template <typename T>
QuantizedVars<T> quantize_vars(const TokenizerModel<T>& m, const PartVars<T>& z, FrozenPoint<T>* frozen = nullptr) {
  if (m.hand_codebook.size() == 0 || m.body_codebook.size() == 0)
    throw Error(ErrorKind::data, "quantize: empty codebook");
  if (z.left.cols() != m.hand_codebook.dim() || z.body.cols() != m.body_codebook.dim())
    throw Error(ErrorKind::data, "quantize: latent dimension does not match codeword dimension");
  auto pick = [&](const Codebook<T>& book, const ag::Var<T>& v) {
    std::vector<Index> idx = nearest_rows<T>(book.codewords.value(), v.value());
    return frozen ? frozen->indices(std::move(idx)) : idx;
  };
  QuantizedVars<T> q;
  q.left = pick(m.hand_codebook, z.left);
  q.right = pick(m.hand_codebook, z.right);
  q.body = pick(m.body_codebook, z.body);
  q.codes = {ag::gather_rows(m.hand_codebook.codewords, q.left), ag::gather_rows(m.hand_codebook.codewords, q.right),
             ag::gather_rows(m.body_codebook.codewords, q.body)};
  return q;
}

template <typename T>
struct LossVars {
  ag::Var<T> hand_recon, body_recon, codebook, commitment, total;
};

template <typename T>
struct DvaeForward {
  PartVars<T> z;
  QuantizedVars<T> q;
  PartVars<T> decoder_input;
  PartVars<T> recon;
  LossVars<T> loss;
};

/// One training forward pass over a batch. Codebook and commitment terms
/// are summed over the three parts and averaged over the batch.
template <typename T>
DvaeForward<T> dvae_forward(const TokenizerModel<T>& m, const PartBatch<T>& x, FrozenPoint<T>* frozen = nullptr) {
  if (!m.learned()) throw Error(ErrorKind::config, "dvae_forward requires a learned tokenizer");
  DvaeForward<T> f;
  f.z = encode_vars(m, x);
  f.q = quantize_vars(m, f.z, frozen);
  auto sg = [&](const Matrix<T>& v) { return ag::constant<T>(frozen ? frozen->value(v) : v); };
  auto straight_through = [&](const ag::Var<T>& z, const ag::Var<T>& zq) {
    return ag::add(z, sg(zq.value() - z.value()));
  };
  f.decoder_input = {straight_through(f.z.left, f.q.codes.left), straight_through(f.z.right, f.q.codes.right),
                     straight_through(f.z.body, f.q.codes.body)};
  f.recon = decode_vars(m, f.decoder_input);

  const T inv_batch = T(1) / static_cast<T>(x.rows());
  auto& L = f.loss;
  L.hand_recon = ag::add(ag::mse(f.recon.left, x.left), ag::mse(f.recon.right, x.right));
  L.body_recon = ag::mse(f.recon.body, x.body);
  std::vector<ag::Var<T>> cb, cm;
  for (Part p : kParts) {
    cb.push_back(ag::squared_sum(ag::sub(sg(f.z[p].value()), f.q.codes[p])));
    cm.push_back(ag::squared_sum(ag::sub(f.z[p], sg(f.q.codes[p].value()))));
  }
  L.codebook = ag::scale(ag::add(ag::add(cb[0], cb[1]), cb[2]), inv_batch);
  L.commitment = ag::scale(ag::add(ag::add(cm[0], cm[1]), cm[2]), inv_batch);
  const Betas& beta = m.config.betas;
  L.total = ag::add(ag::add(L.hand_recon, ag::scale(L.body_recon, static_cast<T>(beta.body))),
                    ag::add(ag::scale(L.codebook, static_cast<T>(beta.codebook)),
                            ag::scale(L.commitment, static_cast<T>(beta.commitment))));
  return f;
}

// ---------------------------------------------------------------------------
// Single-unit operations

template <typename T>
LatentTriplet<T> encode(const PoseTripletUnit& unit, const TokenizerModel<T>& m) {
  ag::NoGradGuard guard;
  const auto z = encode_vars(m, to_part_batch<T>(std::span(&unit, 1), m.config.mirror_left));
  return {z.left.value(), z.right.value(), z.body.value()};
}

template <typename T>
std::pair<TokenTriplet, LatentTriplet<T>> quantize(const LatentTriplet<T>& latent, const TokenizerModel<T>& m) {
  if (m.hand_codebook.size() == 0 || m.body_codebook.size() == 0)
    throw Error(ErrorKind::data, "quantize: empty codebook");
  if (latent.left.cols() != m.hand_codebook.dim() || latent.right.cols() != m.hand_codebook.dim() ||
      latent.body.cols() != m.body_codebook.dim())
    throw Error(ErrorKind::data, "quantize: latent dimension does not match codeword dimension");
  const auto& hb = m.hand_codebook.codewords.value();
  const auto& bb = m.body_codebook.codewords.value();
  TokenTriplet k{static_cast<int>(nearest_row<T>(hb, latent.left.row(0))),
                 static_cast<int>(nearest_row<T>(hb, latent.right.row(0))),
                 static_cast<int>(nearest_row<T>(bb, latent.body.row(0)))};
  LatentTriplet<T> q{hb.row(k.left), hb.row(k.right), bb.row(k.body)};
  return {k, q};
}

template <typename T>
PoseTripletUnit decode(const LatentTriplet<T>& quantized, const TokenizerModel<T>& m) {
  ag::NoGradGuard guard;
  PartVars<T> in{ag::constant<T>(quantized.left), ag::constant<T>(quantized.right), ag::constant<T>(quantized.body)};
  const auto out = decode_vars(m, in);
  if (out.left.cols() != 2 * kHandJoints || out.body.cols() != 2 * kBodyJoints)
    throw Error(ErrorKind::data, "decode: quantized input has the wrong dimension");
  return from_part_rows<T>(out.left.value(), out.right.value(), out.body.value(), 0, m.config.mirror_left);
}

struct LossBreakdown {
  double hand_recon = 0, body_recon = 0, codebook_term = 0, commitment_term = 0, total = 0;
};

/// Objective value for one unit. Codebook and commitment terms are equal in
/// value; they differ only in which side receives gradient.
template <typename T>
LossBreakdown dvae_loss(const PoseTripletUnit& unit, const PoseTripletUnit& recon, const LatentTriplet<T>& z,
                        const LatentTriplet<T>& zq, const Betas& betas) {
  auto part_mse = [&](Part p) {
    double s = 0;
    auto a = unit.part(p), b = recon.part(p);
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(a[i].x - b[i].x, 2) + std::pow(a[i].y - b[i].y, 2);
    return s / static_cast<double>(2 * a.size());
  };
  double sq = 0;
  for (Part p : kParts) {
    if (z[p].rows() != zq[p].rows() || z[p].cols() != zq[p].cols())
      throw Error(ErrorKind::data, "dvae_loss: latent shape mismatch");
    sq += static_cast<double>((z[p] - zq[p]).squaredNorm());
  }
  LossBreakdown l;
  l.hand_recon = part_mse(Part::left) + part_mse(Part::right);
  l.body_recon = part_mse(Part::body);
  l.codebook_term = sq;
  l.commitment_term = sq;
  l.total = l.hand_recon + betas.body * l.body_recon + betas.codebook * l.codebook_term +
            betas.commitment * l.commitment_term;
  return l;
}

// ---------------------------------------------------------------------------
// Tokenization

template <typename T>
std::vector<TokenTriplet> tokenize_frames(std::span<const PoseTripletUnit> frames, const TokenizerModel<T>& m) {
  ag::NoGradGuard guard;
  std::vector<TokenTriplet> out;
  if (frames.empty()) return out;
  const auto z = encode_vars(m, to_part_batch<T>(frames, m.config.mirror_left));
  const auto q = quantize_vars(m, z);
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    out.push_back({static_cast<int>(q.left[i]), static_cast<int>(q.right[i]), static_cast<int>(q.body[i])});
  return out;
}

/// Per-frame pseudo labels. The model must be frozen.
template <typename T>
std::vector<TokenTriplet> tokenize_sequence(const PoseSequence& seq, const TokenizerModel<T>& m) {
  if (!m.frozen) throw Error(ErrorKind::config, "tokenize_sequence requires a frozen tokenizer");
  return tokenize_frames<T>(seq.frames, m);
}

/// decode(quantize(encode(x))) for every frame.
template <typename T>
std::vector<PoseTripletUnit> reconstruct_frames(std::span<const PoseTripletUnit> frames, const TokenizerModel<T>& m) {
  ag::NoGradGuard guard;
  const auto z = encode_vars(m, to_part_batch<T>(frames, m.config.mirror_left));
  const auto q = quantize_vars(m, z);
  const auto r = decode_vars(m, q.codes);
  std::vector<PoseTripletUnit> out;
  for (Index i = 0; i < static_cast<Index>(frames.size()); ++i)
    out.push_back(from_part_rows<T>(r.left.value(), r.right.value(), r.body.value(), i, m.config.mirror_left));
  return out;
}

/// Root-mean-square per-coordinate reconstruction error over valid parts.
template <typename T>
double reconstruction_rmse(const PoseDataset& ds, const TokenizerModel<T>& m) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& seq : ds.sequences) {
    const auto rec = reconstruct_frames<T>(seq.frames, m);
    for (std::size_t t = 0; t < rec.size(); ++t)
      for (Part p : kParts) {
        if (!seq.frames[t].valid(p)) continue;
        auto a = seq.frames[t].part(p), b = rec[t].part(p);
        for (std::size_t i = 0; i < a.size(); ++i) {
          sum += std::pow(a[i].x - b[i].x, 2) + std::pow(a[i].y - b[i].y, 2);
          count += 2;
        }
      }
  }
  return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

// ---------------------------------------------------------------------------
// Training

struct TrainLog {
  std::vector<nlohmann::json> records;
};

namespace detail {

inline std::vector<const PoseTripletUnit*> all_frames(const PoseDataset& ds) {
  std::vector<const PoseTripletUnit*> out;
  for (const auto& s : ds.sequences)
    for (const auto& f : s.frames) out.push_back(&f);
  return out;
}

template <typename T>
PartBatch<T> gather_batch(const std::vector<const PoseTripletUnit*>& frames, std::span<const std::size_t> idx,
                          bool mirror_left) {
  std::vector<PoseTripletUnit> units;
  units.reserve(idx.size());
  for (std::size_t i : idx) units.push_back(*frames[i]);
  return to_part_batch<T>(units, mirror_left);
}

/// Fixed-capacity uniform sample of latent rows seen during an epoch.
template <typename T>
class LatentReservoir {
 public:
  explicit LatentReservoir(std::size_t capacity) : capacity_(capacity) {}
  template <typename Rng>
  void add(const Matrix<T>& rows, Rng& rng) {
    for (Index i = 0; i < rows.rows(); ++i) {
      ++seen_;
      if (rows_.size() < capacity_) {
        rows_.push_back(rows.row(i));
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, seen_ - 1);
        const std::size_t j = pick(rng);
        if (j < capacity_) rows_[j] = rows.row(i);
      }
    }
  }
  bool empty() const { return rows_.empty(); }
  template <typename Rng>
  const Matrix<T>& sample(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, rows_.size() - 1);
    return rows_[pick(rng)];
  }

 private:
  std::size_t capacity_;
  std::size_t seen_ = 0;
  std::vector<Matrix<T>> rows_;
};

template <typename T, typename Rng>
void seed_codebook(Codebook<T>& book, const Matrix<T>& pool, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(pool.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Matrix<T>& w = book.codewords.mutable_value();
  std::uniform_int_distribution<Index> any(0, pool.rows() - 1);
  for (Index k = 0; k < w.rows(); ++k)
    w.row(k) = pool.row(k < pool.rows() ? order[static_cast<std::size_t>(k)] : any(rng));
}

}  // namespace detail

/// Trains a coupled or separate-VQ tokenizer with Adam under a step-decay
/// schedule. Throws a numeric error on a non-finite loss.
template <typename T>
TokenizerModel<T> train_tokenizer(const PoseDataset& ds, const TokenizerConfig& cfg, std::uint64_t seed,
                                  TrainLog* log = nullptr) {
  if (cfg.kind == TokenizerKind::kmeans) throw Error(ErrorKind::config, "train_tokenizer: use fit_baseline_tokenizer for kmeans");
  const auto frames = detail::all_frames(ds);
  if (frames.empty()) throw Error(ErrorKind::data, "train_tokenizer: dataset is empty");
  if (cfg.batch < 1 || cfg.epochs < 0) throw Error(ErrorKind::config, "train_tokenizer: invalid schedule");

  TokenizerModel<T> m = init_tokenizer<T>(cfg, seed);
  auto rng = make_rng(seed, 0x702);

  {  // codebooks start on encoder outputs of a warmup batch
    ag::NoGradGuard guard;
    std::vector<std::size_t> idx(frames.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), 4096));
    const auto z = encode_vars(m, detail::gather_batch<T>(frames, idx, cfg.mirror_left));
    Matrix<T> hands(2 * z.left.rows(), z.left.cols());
    hands << z.left.value(), z.right.value();
    detail::seed_codebook(m.hand_codebook, hands, rng);
    detail::seed_codebook(m.body_codebook, z.body.value(), rng);
  }

  Adam<T> opt(parameters_of<T>(m));
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_decay_lr(cfg.lr, epoch, cfg.lr_decay_every, cfg.lr_decay);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint64_t> hand_use(static_cast<std::size_t>(cfg.hand_codes), 0);
    std::vector<std::uint64_t> body_use(static_cast<std::size_t>(cfg.body_codes), 0);
    detail::LatentReservoir<T> hand_pool(2048), body_pool(2048);
    double sums[5] = {0, 0, 0, 0, 0};
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      const auto x = detail::gather_batch<T>(frames, std::span(order).subspan(start, n), cfg.mirror_left);
      auto f = dvae_forward(m, x);
      const double total = static_cast<double>(f.loss.total.scalar());
      if (!std::isfinite(total))
        throw Error(ErrorKind::numeric, "tokenizer loss became non-finite at epoch " + std::to_string(epoch) +
                                            " step " + std::to_string(steps));
      opt.zero_grad();
      ag::backward(f.loss.total);
      opt.step(lr);

      for (Index k : f.q.left) ++hand_use[static_cast<std::size_t>(k)];
      for (Index k : f.q.right) ++hand_use[static_cast<std::size_t>(k)];
      for (Index k : f.q.body) ++body_use[static_cast<std::size_t>(k)];
      hand_pool.add(f.z.left.value(), rng);
      hand_pool.add(f.z.right.value(), rng);
      body_pool.add(f.z.body.value(), rng);
      sums[0] += total;
      sums[1] += static_cast<double>(f.loss.hand_recon.scalar());
      sums[2] += static_cast<double>(f.loss.body_recon.scalar());
      sums[3] += static_cast<double>(f.loss.codebook.scalar());
      sums[4] += static_cast<double>(f.loss.commitment.scalar());
      ++steps;
    }
    m.hand_codebook.usage_counts = hand_use;
    m.body_codebook.usage_counts = body_use;
    const auto used = [](const std::vector<std::uint64_t>& u) {
      return std::count_if(u.begin(), u.end(), [](std::uint64_t c) { return c > 0; });
    };
    if (log) {
      const double s = static_cast<double>(std::max<std::size_t>(steps, 1));
      log->records.push_back({{"stage", "tokenizer"},
                              {"epoch", epoch},
                              {"split", "train"},
                              {"loss", sums[0] / s},
                              {"lr", lr},
                              {"hand_recon", sums[1] / s},
                              {"body_recon", sums[2] / s},
                              {"codebook_term", sums[3] / s},
                              {"commitment_term", sums[4] / s},
                              {"hand_codes_used", used(hand_use)},
                              {"body_codes_used", used(body_use)}});
    }
    if (cfg.reinit_epochs < 0 || epoch < cfg.reinit_epochs) {
      auto reseed = [&rng](Codebook<T>& book, const std::vector<std::uint64_t>& use,
                           const detail::LatentReservoir<T>& pool) {
        if (pool.empty()) return;
        for (std::size_t k = 0; k < use.size(); ++k)
          if (use[k] == 0) book.codewords.mutable_value().row(static_cast<Index>(k)) = pool.sample(rng);
      };
      reseed(m.hand_codebook, hand_use, hand_pool);
      reseed(m.body_codebook, body_use, body_pool);
    }
  }
  return m;
}

/// K-Means over raw keypoints (hands pooled) or a separate-VQ d-VAE.
template <typename T>
TokenizerModel<T> fit_baseline_tokenizer(const PoseDataset& ds, TokenizerKind kind, std::pair<int, int> sizes,
                                         std::uint64_t seed, TokenizerConfig base = {}, TrainLog* log = nullptr) {
  base.hand_codes = sizes.first;
  base.body_codes = sizes.second;
  base.kind = kind;
  if (kind == TokenizerKind::coupled) throw Error(ErrorKind::config, "coupled tokenizer is not a baseline");
  if (kind == TokenizerKind::separate_vq) return train_tokenizer<T>(ds, base, seed, log);

  const auto frames = detail::all_frames(ds);
  if (frames.empty()) throw Error(ErrorKind::data, "fit_baseline_tokenizer: dataset is empty");
  std::vector<PoseTripletUnit> units;
  for (const auto* f : frames) units.push_back(*f);
  const auto x = to_part_batch<T>(units, base.mirror_left);
  Matrix<T> hands(2 * x.left.rows(), x.left.cols());
  hands << x.left, x.right;
  TokenizerModel<T> m = init_tokenizer<T>(base, seed);
  Matrix<T> hand_centers, body_centers;
  kmeans<T>(hands, base.hand_codes, seed ^ 0x4b4d, hand_centers, base.kmeans_iters);
  kmeans<T>(x.body, base.body_codes, seed ^ 0x4b4e, body_centers, base.kmeans_iters);
  m.hand_codebook.codewords = ag::parameter<T>(std::move(hand_centers));
  m.body_codebook.codewords = ag::parameter<T>(std::move(body_centers));
  if (log) log->records.push_back({{"stage", "tokenizer"}, {"kind", "kmeans"}, {"hand_codes", base.hand_codes},
                                   {"body_codes", base.body_codes}});
  return m;
}

/// Dispatches on config.kind.
template <typename T>
TokenizerModel<T> build_tokenizer(const PoseDataset& ds, const TokenizerConfig& cfg, std::uint64_t seed,
                                  TrainLog* log = nullptr) {
  if (cfg.kind == TokenizerKind::coupled) return train_tokenizer<T>(ds, cfg, seed, log);
  return fit_baseline_tokenizer<T>(ds, cfg.kind, {cfg.hand_codes, cfg.body_codes}, seed, cfg, log);
}

}  // namespace best
