#pragma once

// Pose embedding, temporal encoding and masked-unit corruption.
//
// Each part of a frame goes through a two-layer graph convolution over its
// skeleton (hands share weights) and is mean-pooled over joints. The three
// part features are concatenated in the order left, right, body.

#include "best/autograd.hpp"
#include "best/error.hpp"
#include "best/nn.hpp"
#include "best/pose.hpp"
#include "best/skeleton.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace best {

template <typename T>
struct EmbeddingParams {
  Linear<T> hand1, hand2;  ///< shared by left and right
  Linear<T> body1, body2;
  LayerNorm<T> hand_norm, body_norm;
  Matrix<T> hand_adjacency;
  Matrix<T> body_adjacency;

  Index part_dim() const { return hand2.out_features(); }

  template <typename Rng>
  static EmbeddingParams init(Index part_dim, Index hidden, Rng& rng) {
    EmbeddingParams p;
    p.hand1 = Linear<T>::init(2, hidden, rng);
    p.hand2 = Linear<T>::init(hidden, part_dim, rng);
    p.body1 = Linear<T>::init(2, hidden, rng);
    p.body2 = Linear<T>::init(hidden, part_dim, rng);
    p.hand_norm = LayerNorm<T>::init(part_dim);
    p.body_norm = LayerNorm<T>::init(part_dim);
    p.hand_adjacency = part_adjacency<T>(Part::left);
    p.body_adjacency = part_adjacency<T>(Part::body);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    hand1.visit(prefix + ".hand1", f);
    hand2.visit(prefix + ".hand2", f);
    body1.visit(prefix + ".body1", f);
    body2.visit(prefix + ".body2", f);
    hand_norm.visit(prefix + ".hand_norm", f);
    body_norm.visit(prefix + ".body_norm", f);
  }
};

/// Joint coordinates of one part for every frame, stacked as
/// (frames * joints) x 2.
template <typename T>
Matrix<T> part_nodes(std::span<const PoseTripletUnit> frames, Part p) {
  const Index joints = joint_count(p);
  Matrix<T> x(static_cast<Index>(frames.size()) * joints, 2);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto pts = frames[t].part(p);
    for (Index j = 0; j < joints; ++j) {
      x(static_cast<Index>(t) * joints + j, 0) = static_cast<T>(pts[static_cast<std::size_t>(j)].x);
      x(static_cast<Index>(t) * joints + j, 1) = static_cast<T>(pts[static_cast<std::size_t>(j)].y);
    }
  }
  return x;
}

/// Frames x part_dim features for one part.
template <typename T>
ag::Var<T> embed_part(const ag::Var<T>& nodes, Part p, const EmbeddingParams<T>& e) {
  const bool body = p == Part::body;
  const Matrix<T>& adj = body ? e.body_adjacency : e.hand_adjacency;
  const Linear<T>& l1 = body ? e.body1 : e.hand1;
  const Linear<T>& l2 = body ? e.body2 : e.hand2;
  auto h = ag::gelu(ag::graph_propagate(l1(nodes), adj));
  h = ag::gelu(ag::graph_propagate(l2(h), adj));
  // pooled features are normalized so pose content is not swamped by the
  // unit-amplitude temporal table
  return (body ? e.body_norm : e.hand_norm)(ag::group_mean(h, static_cast<Index>(joint_count(p))));
}

/// Frames x 3*part_dim embedding of a frame sequence.
template <typename T>
ag::Var<T> embed_sequence(std::span<const PoseTripletUnit> frames, const EmbeddingParams<T>& e) {
  if (frames.empty()) throw Error(ErrorKind::data, "embed_sequence: no frames");
  std::vector<ag::Var<T>> parts;
  for (Part p : kParts) parts.push_back(embed_part(ag::constant<T>(part_nodes<T>(frames, p)), p, e));
  return ag::concat_cols(parts);
}

template <typename T>
struct UnitEmbedding {
  Matrix<T> left, right, body;  ///< 1 x part_dim each

  Matrix<T> concatenated() const {
    Matrix<T> out(1, left.cols() + right.cols() + body.cols());
    out << left, right, body;
    return out;
  }
};

template <typename T>
UnitEmbedding<T> embed_unit(const PoseTripletUnit& unit, const EmbeddingParams<T>& e) {
  ag::NoGradGuard guard;
  const auto f = embed_sequence<T>(std::span(&unit, 1), e).value();
  const Index d = e.part_dim();
  return {f.leftCols(d), f.middleCols(d, d), f.rightCols(d)};
}

/// Sinusoidal table: row t, column 2i is sin(t / 10000^(2i/D)), column
/// 2i+1 the matching cosine.
template <typename T>
Matrix<T> temporal_encoding(Index frames, Index dim) {
  if (frames < 1) throw Error(ErrorKind::config, "temporal_encoding: need at least one frame");
  if (dim < 2 || dim % 2 != 0) throw Error(ErrorKind::config, "temporal_encoding: dimension must be even");
  Matrix<T> pe(frames, dim);
  for (Index t = 0; t < frames; ++t)
    for (Index i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe(t, 2 * i) = static_cast<T>(std::sin(angle));
      pe(t, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  return pe;
}

// ---------------------------------------------------------------------------
// Masking

/// Which parts a selected frame may mask. `rmask` masks the whole unit of
/// every selected frame.
enum class MaskStrategy { both, hand_only, body_only, rmask };

inline const char* to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::both: return "both";
    case MaskStrategy::hand_only: return "hand_only";
    case MaskStrategy::body_only: return "body_only";
    case MaskStrategy::rmask: return "rmask";
  }
  return "?";
}

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "both" || s == "mum") return MaskStrategy::both;
  if (s == "hand_only") return MaskStrategy::hand_only;
  if (s == "body_only") return MaskStrategy::body_only;
  if (s == "rmask") return MaskStrategy::rmask;
  throw Error(ErrorKind::config, "unknown mask strategy '" + s + "'");
}

struct MaskedFrame {
  int frame = 0;
  std::array<bool, 3> parts{};  ///< indexed by Part

  bool masks(Part p) const { return parts[static_cast<std::size_t>(index(p))]; }
  friend bool operator==(const MaskedFrame&, const MaskedFrame&) = default;
};

struct MaskPlan {
  int length = 0;
  std::vector<MaskedFrame> frames;  ///< ascending frame order

  bool empty() const { return frames.empty(); }
  std::vector<int> masked_frames() const {
    std::vector<int> out;
    for (const auto& f : frames) out.push_back(f.frame);
    return out;
  }
  std::vector<int> positions(Part p) const {
    std::vector<int> out;
    for (const auto& f : frames)
      if (f.masks(p)) out.push_back(f.frame);
    return out;
  }
  std::size_t slice_count() const {
    std::size_t n = 0;
    for (Part p : kParts) n += positions(p).size();
    return n;
  }
  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

inline int masked_frame_count(int length, double alpha) {
  return static_cast<int>(std::floor(alpha * length + 1e-9));
}

inline MaskPlan sample_mask(int length, double alpha, std::uint64_t seed, MaskStrategy strategy = MaskStrategy::both) {
  if (length < 1) throw Error(ErrorKind::config, "sample_mask: length must be at least 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::config, "sample_mask: alpha must lie in [0, 1]");
  auto rng = make_rng(seed, 0x3a5c);
  const int count = masked_frame_count(length, alpha);
  // partial Fisher-Yates
  std::vector<int> order(static_cast<std::size_t>(length));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, length - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> chosen(order.begin(), order.begin() + count);
  std::sort(chosen.begin(), chosen.end());

  std::bernoulli_distribution coin(0.5);
  MaskPlan plan;
  plan.length = length;
  for (int t : chosen) {
    MaskedFrame f{t, {}};
    switch (strategy) {
      case MaskStrategy::both:
        do {
          for (auto& b : f.parts) b = coin(rng);
        } while (!f.parts[0] && !f.parts[1] && !f.parts[2]);
        break;
      case MaskStrategy::hand_only:
        do {
          f.parts[0] = coin(rng);
          f.parts[1] = coin(rng);
        } while (!f.parts[0] && !f.parts[1]);
        break;
      case MaskStrategy::body_only: f.parts = {false, false, true}; break;
      case MaskStrategy::rmask: f.parts = {true, true, true}; break;
    }
    plan.frames.push_back(f);
  }
  return plan;
}

/// Learnable replacement feature; one row shared by all parts or one row
/// per part.
template <typename T>
struct MaskToken {
  ag::Var<T> value;

  template <typename Rng>
  static MaskToken init(Index part_dim, bool per_part, Rng& rng) {
    std::normal_distribution<double> n(0.0, 0.02);
    Matrix<T> v(per_part ? 3 : 1, part_dim);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(n(rng));
    return {ag::parameter<T>(std::move(v))};
  }
  bool per_part() const { return value.rows() == 3; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix, value);
  }
};

/// Replaces masked part slices with the mask token, then adds the temporal
/// table to every frame.
template <typename T>
ag::Var<T> apply_mask(const ag::Var<T>& embeddings, const MaskPlan& plan, const MaskToken<T>& token,
                      const Matrix<T>& temporal) {
  const Index frames = embeddings.rows();
  if (plan.length != 0 && plan.length != frames)
    throw Error(ErrorKind::data, "apply_mask: plan length " + std::to_string(plan.length) + " does not match " +
                                     std::to_string(frames) + " frames");
  if (temporal.rows() != frames || temporal.cols() != embeddings.cols())
    throw Error(ErrorKind::data, "apply_mask: temporal table shape mismatch");
  std::vector<std::pair<Index, Index>> slots;
  for (const auto& f : plan.frames) {
    if (f.frame < 0 || f.frame >= frames)
      throw Error(ErrorKind::data, "apply_mask: masked frame " + std::to_string(f.frame) + " out of range");
    for (Part p : kParts)
      if (f.masks(p)) slots.emplace_back(f.frame, index(p));
  }
  auto x = slots.empty() ? embeddings : ag::replace_slices(embeddings, token.value, slots);
  return ag::add(x, ag::constant<T>(temporal));
}

}  // namespace best
