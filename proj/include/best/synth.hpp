#pragma once

// Synthetic sign corpus. Every class is a fixed sequence of key poses (one
// upper-body pose and two hand shapes each, drawn from a kinematic model in
// pixel space and then cropped exactly like detector output). A sample
// walks through its class's key poses over T frames and adds Gaussian
// noise in normalized coordinates.
//
// Class key poses depend only on `seed`; sample noise depends on
// (`seed`, `noise_stream`), so several splits of one task can be drawn by
// varying `noise_stream`. With the default sizes classes stay separable by
// a nearest-prototype rule up to noise_sigma = 0.05.

#include "best/pose.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace best {

struct SynthParams {
  int num_classes = 4;
  int samples_per_class = 8;
  int frames = 8;
  int prototypes_per_class = 2;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  std::uint64_t noise_stream = 0;
  /// Fraction of each key-pose segment spent easing into the next key pose.
  /// Zero holds every key pose for its whole segment.
  double transition = 0.0;
};

namespace detail {

template <typename Rng>
void synth_hand(Rng& rng, std::span<RawJoint> out, double ox, double oy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double base_rotation = (unit(rng) - 0.5) * std::numbers::pi * 0.8;
  static constexpr std::array<double, 5> spread{-1.0, -0.45, 0.0, 0.35, 0.7};
  static constexpr std::array<double, 4> length{22.0, 16.0, 12.0, 10.0};
  out[0] = {ox, oy, 1.0};
  for (int f = 0; f < 5; ++f) {
    const double curl = unit(rng) * 1.6;
    double angle = -std::numbers::pi / 2 + base_rotation + spread[static_cast<std::size_t>(f)];
    double x = ox, y = oy;
    for (int k = 0; k < 4; ++k) {
      if (k > 0) angle += curl * 0.6;
      x += length[static_cast<std::size_t>(k)] * std::cos(angle);
      y += length[static_cast<std::size_t>(k)] * std::sin(angle);
      out[static_cast<std::size_t>(1 + 4 * f + k)] = {x, y, 1.0};
    }
  }
}

template <typename Rng>
RawPoseFrame synth_key_frame(Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> lift(-0.4, 0.4);
  RawPoseFrame f;
  auto body = f.part(Part::body);
  body[0] = {200.0, 90.0 + 30.0 * lift(rng), 1.0};
  body[1] = {160.0, 150.0, 1.0};
  body[2] = {240.0, 150.0 + 20.0 * lift(rng), 1.0};
  for (int side = 0; side < 2; ++side) {
    const RawJoint& shoulder = body[static_cast<std::size_t>(1 + side)];
    const double a = angle(rng), b = angle(rng);
    RawJoint elbow{shoulder.x + 60.0 * std::cos(a), shoulder.y + 60.0 * std::sin(a), 1.0};
    RawJoint wrist{elbow.x + 50.0 * std::cos(b), elbow.y + 50.0 * std::sin(b), 1.0};
    body[static_cast<std::size_t>(3 + side)] = elbow;
    body[static_cast<std::size_t>(5 + side)] = wrist;
  }
  synth_hand(rng, f.part(Part::left), body[5].x, body[5].y);
  synth_hand(rng, f.part(Part::right), body[6].x, body[6].y);
  return f;
}

inline PoseTripletUnit blend(const PoseTripletUnit& a, const PoseTripletUnit& b, double w) {
  PoseTripletUnit out = a;
  for (Part p : kParts) {
    auto pa = a.part(p), pb = b.part(p);
    auto po = out.part(p);
    for (std::size_t i = 0; i < po.size(); ++i)
      po[i] = {(1.0 - w) * pa[i].x + w * pb[i].x, (1.0 - w) * pa[i].y + w * pb[i].y};
  }
  return out;
}

}  // namespace detail

/// Noise-free class trajectories (num_classes sequences of `frames` frames).
inline std::vector<std::vector<PoseTripletUnit>> synth_class_trajectories(const SynthParams& p) {
  auto rng = make_rng(p.seed, 0x51);
  std::vector<std::vector<PoseTripletUnit>> out;
  for (int c = 0; c < p.num_classes; ++c) {
    std::vector<PoseTripletUnit> keys;
    for (int k = 0; k < p.prototypes_per_class; ++k) keys.push_back(crop_and_rescale(detail::synth_key_frame(rng)));
    std::vector<PoseTripletUnit> traj;
    const int keys_n = p.prototypes_per_class;
    for (int t = 0; t < p.frames; ++t) {
      const double u = (t + 0.5) * keys_n / p.frames;
      const int s = std::min(static_cast<int>(u), keys_n - 1);
      const double local = u - s;
      if (p.transition > 0.0 && s + 1 < keys_n && local > 1.0 - p.transition) {
        const double w = (local - (1.0 - p.transition)) / p.transition;
        traj.push_back(detail::blend(keys[static_cast<std::size_t>(s)], keys[static_cast<std::size_t>(s + 1)],
                                     0.5 - 0.5 * std::cos(std::numbers::pi * w)));
      } else {
        traj.push_back(keys[static_cast<std::size_t>(s)]);
      }
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline PoseDataset synth_generate(const SynthParams& p) {
  if (p.num_classes < 1 || p.samples_per_class < 1 || p.frames < 1 || p.prototypes_per_class < 1)
    throw Error(ErrorKind::config, "synthetic generator counts must all be at least 1");
  const auto trajectories = synth_class_trajectories(p);
  auto rng = make_rng(p.seed, 0xA000 + p.noise_stream);
  std::normal_distribution<double> noise(0.0, 1.0);
  PoseDataset ds;
  ds.num_classes = p.num_classes;
  for (int c = 0; c < p.num_classes; ++c) ds.class_names.push_back("sign_" + std::to_string(c));
  for (int c = 0; c < p.num_classes; ++c) {
    for (int s = 0; s < p.samples_per_class; ++s) {
      PoseSequence seq;
      seq.id = "c" + std::to_string(c) + "_s" + std::to_string(s);
      seq.label = c;
      seq.frames = trajectories[static_cast<std::size_t>(c)];
      for (auto& f : seq.frames)
        for (Part part : kParts)
          for (auto& pt : f.part(part)) {
            const double nx = noise(rng), ny = noise(rng);
            if (p.noise_sigma > 0.0) {
              pt.x = std::clamp(pt.x + p.noise_sigma * nx, 0.0, 1.0);
              pt.y = std::clamp(pt.y + p.noise_sigma * ny, 0.0, 1.0);
            }
          }
      ds.sequences.push_back(std::move(seq));
    }
  }
  return ds;
}

inline PoseDataset synth_generate(int num_classes, int samples_per_class, int frames, int prototypes_per_class,
                                  double noise_sigma, std::uint64_t seed) {
  return synth_generate(SynthParams{num_classes, samples_per_class, frames, prototypes_per_class, noise_sigma, seed});
}

}  // namespace best
