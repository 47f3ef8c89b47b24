#pragma once

// Pose-sequence data model: raw detector frames, normalized triplet units,
// frame sampling and coordinate jitter.

#include "best/error.hpp"
#include "best/skeleton.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace best {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct RawJoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

/// One frame of detector output in pixel coordinates.
struct RawPoseFrame {
  std::array<RawJoint, kTotalJoints> joints{};

  std::span<const RawJoint> part(Part p) const {
    const int offset = p == Part::body ? kBodyOffset : p == Part::left ? kLeftOffset : kRightOffset;
    return {joints.data() + offset, static_cast<std::size_t>(joint_count(p))};
  }
  std::span<RawJoint> part(Part p) {
    const int offset = p == Part::body ? kBodyOffset : p == Part::left ? kLeftOffset : kRightOffset;
    return {joints.data() + offset, static_cast<std::size_t>(joint_count(p))};
  }
};

/// Throws a schema error if any coordinate is non-finite or a confidence
/// falls outside [0, 1].
inline void validate(const RawPoseFrame& f) {
  for (std::size_t i = 0; i < f.joints.size(); ++i) {
    const auto& j = f.joints[i];
    if (!std::isfinite(j.x) || !std::isfinite(j.y))
      throw Error(ErrorKind::schema, "joint " + std::to_string(i) + " has non-finite coordinates");
    if (!(j.confidence >= 0.0 && j.confidence <= 1.0))
      throw Error(ErrorKind::schema, "joint " + std::to_string(i) + " confidence outside [0,1]");
  }
}

/// Per-frame (left hand, right hand, upper body) keypoints in normalized
/// per-part crop coordinates.
struct PoseTripletUnit {
  std::array<Point, kHandJoints> left{};
  std::array<Point, kHandJoints> right{};
  std::array<Point, kBodyJoints> body{};
  std::array<bool, 3> part_valid{true, true, true};

  std::span<const Point> part(Part p) const {
    switch (p) {
      case Part::left: return left;
      case Part::right: return right;
      case Part::body: return body;
    }
    return {};
  }
  std::span<Point> part(Part p) {
    switch (p) {
      case Part::left: return left;
      case Part::right: return right;
      case Part::body: return body;
    }
    return {};
  }
  bool valid(Part p) const { return part_valid[static_cast<std::size_t>(index(p))]; }

  friend bool operator==(const PoseTripletUnit&, const PoseTripletUnit&) = default;
};

struct PoseSequence {
  std::vector<PoseTripletUnit> frames;
  std::string id;
  std::optional<int> label;

  friend bool operator==(const PoseSequence&, const PoseSequence&) = default;
};

struct PoseDataset {
  std::vector<PoseSequence> sequences;
  int num_classes = 0;
  std::vector<std::string> class_names;

  bool empty() const { return sequences.empty(); }
  std::size_t size() const { return sequences.size(); }
  bool labeled() const {
    return !sequences.empty() &&
           std::all_of(sequences.begin(), sequences.end(), [](const PoseSequence& s) { return s.label.has_value(); });
  }
};

// ---------------------------------------------------------------------------
// Cropping

struct CropOptions {
  double conf_threshold = 0.3;
  /// Fraction of the box side added on every side before normalizing.
  double margin = 0.2;
};

/// Fits a square box (side = longer extent of the confident joints, grown by
/// `margin` per side) around each part and maps it onto the unit square.
/// Low-confidence joints are mapped with the same transform but do not shape
/// the box. A part with no confident joints is zero-filled and marked invalid.
inline PoseTripletUnit crop_and_rescale(const RawPoseFrame& frame, const CropOptions& opts = {}) {
  PoseTripletUnit unit;
  for (Part p : kParts) {
    auto raw = frame.part(p);
    auto out = unit.part(p);
    double min_x = INFINITY, max_x = -INFINITY, min_y = INFINITY, max_y = -INFINITY;
    bool any = false;
    for (const auto& j : raw) {
      if (j.confidence < opts.conf_threshold) continue;
      any = true;
      min_x = std::min(min_x, j.x);
      max_x = std::max(max_x, j.x);
      min_y = std::min(min_y, j.y);
      max_y = std::max(max_y, j.y);
    }
    if (!any) {
      std::fill(out.begin(), out.end(), Point{});
      unit.part_valid[static_cast<std::size_t>(index(p))] = false;
      continue;
    }
    const double cx = (min_x + max_x) / 2.0;
    const double cy = (min_y + max_y) / 2.0;
    double side = std::max(max_x - min_x, max_y - min_y);
    if (!(side > 0.0)) side = 1.0;  // coincident joints collapse to the centre
    const double extent = side * (1.0 + 2.0 * opts.margin);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      out[i].x = std::clamp((raw[i].x - cx) / extent + 0.5, 0.0, 1.0);
      out[i].y = std::clamp((raw[i].y - cy) / extent + 0.5, 0.0, 1.0);
    }
  }
  return unit;
}

// ---------------------------------------------------------------------------
// Temporal sampling

enum class SampleMode { random, center };

/// Frame indices for a sequence of `length` frames resampled to `frames`.
/// Sequences shorter than `frames` keep every frame and repeat the last one.
inline std::vector<std::size_t> sample_indices(std::size_t length, std::size_t frames, SampleMode mode,
                                               std::uint64_t seed) {
  if (length == 0) throw Error(ErrorKind::data, "cannot sample frames from an empty sequence");
  if (frames == 0) throw Error(ErrorKind::config, "frame count must be at least 1");
  std::vector<std::size_t> idx;
  idx.reserve(frames);
  if (length <= frames) {
    for (std::size_t i = 0; i < frames; ++i) idx.push_back(std::min(i, length - 1));
    return idx;
  }
  if (mode == SampleMode::center) {
    for (std::size_t i = 0; i < frames; ++i) idx.push_back(((2 * i + 1) * length) / (2 * frames));
    return idx;
  }
  // Selection sampling: each index kept with probability needed/remaining,
  // which yields a uniformly random sorted subset.
  auto rng = make_rng(seed, 0x5a3b1e);
  std::size_t needed = frames;
  for (std::size_t i = 0; i < length && needed > 0; ++i) {
    const std::size_t remaining = length - i;
    std::uniform_int_distribution<std::size_t> pick(0, remaining - 1);
    if (pick(rng) < needed) {
      idx.push_back(i);
      --needed;
    }
  }
  return idx;
}

inline PoseSequence sample_frames(const PoseSequence& seq, std::size_t frames, SampleMode mode, std::uint64_t seed) {
  PoseSequence out;
  out.id = seq.id;
  out.label = seq.label;
  for (std::size_t i : sample_indices(seq.frames.size(), frames, mode, seed)) out.frames.push_back(seq.frames[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Jitter

struct JitterParams {
  double scale_bound = 0.1;      ///< scale drawn from [1 - b, 1 + b]
  double rotation_deg = 10.0;    ///< rotation drawn from [-r, r] degrees
  double translation = 0.05;     ///< per-axis shift drawn from [-t, t]
  double joint_sigma = 0.01;     ///< per-joint Gaussian noise

  static JitterParams none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct AffineJitter {
  double scale = 1.0;
  double rotation = 0.0;  ///< radians
  double tx = 0.0;
  double ty = 0.0;

  Point apply(Point p) const {
    const double dx = p.x - 0.5, dy = p.y - 0.5;
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {0.5 + scale * (c * dx - s * dy) + tx, 0.5 + scale * (s * dx + c * dy) + ty};
  }
};

template <typename Rng>
AffineJitter draw_jitter(Rng& rng, const JitterParams& params) {
  auto uniform = [&rng](double bound) {
    if (bound <= 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-bound, bound)(rng);
  };
  AffineJitter j;
  j.scale = 1.0 + uniform(params.scale_bound);
  j.rotation = uniform(params.rotation_deg) * std::numbers::pi / 180.0;
  j.tx = uniform(params.translation);
  j.ty = uniform(params.translation);
  return j;
}

/// One affine jitter per sequence about the crop centre plus per-joint noise,
/// clamped to the unit square. Invalid parts stay zero-filled.
inline PoseSequence perturb(const PoseSequence& seq, std::uint64_t seed, const JitterParams& params) {
  auto rng = make_rng(seed, 0x7e47);
  const AffineJitter jitter = draw_jitter(rng, params);
  const bool affine = params.scale_bound > 0.0 || params.rotation_deg > 0.0 || params.translation > 0.0;
  const bool noisy = params.joint_sigma > 0.0;
  PoseSequence out = seq;
  if (!affine && !noisy) return out;
  std::normal_distribution<double> noise(0.0, noisy ? params.joint_sigma : 1.0);
  for (auto& frame : out.frames) {
    for (Part p : kParts) {
      if (!frame.valid(p)) continue;
      for (auto& pt : frame.part(p)) {
        Point q = affine ? jitter.apply(pt) : pt;
        if (noisy) {
          q.x += noise(rng);
          q.y += noise(rng);
        }
        pt = {std::clamp(q.x, 0.0, 1.0), std::clamp(q.y, 0.0, 1.0)};
      }
    }
  }
  return out;
}

}  // namespace best
