#pragma once

// Joint layout of the 49-keypoint detector output and the skeleton graphs
// used by the pose embedding.
//
// Raw frame order: 7 upper-body joints, 21 left-hand joints, 21 right-hand
// joints. Upper body: 0 nose, 1 left shoulder, 2 right shoulder, 3 left
// elbow, 4 right elbow, 5 left wrist, 6 right wrist. Hand: 0 wrist, then
// four joints per finger from thumb (1-4) to little finger (17-20).

#include "best/autograd.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <utility>

namespace best {

inline constexpr int kBodyJoints = 7;
inline constexpr int kHandJoints = 21;
inline constexpr int kTotalJoints = kBodyJoints + 2 * kHandJoints;
inline constexpr int kBodyOffset = 0;
inline constexpr int kLeftOffset = kBodyJoints;
inline constexpr int kRightOffset = kBodyJoints + kHandJoints;

/// Internal part order for features, tokens and masks.
enum class Part : int { left = 0, right = 1, body = 2 };
inline constexpr std::array<Part, 3> kParts{Part::left, Part::right, Part::body};
inline constexpr int index(Part p) { return static_cast<int>(p); }
inline constexpr int joint_count(Part p) { return p == Part::body ? kBodyJoints : kHandJoints; }
inline constexpr const char* to_string(Part p) {
  return p == Part::left ? "left" : p == Part::right ? "right" : "body";
}

inline constexpr std::array<std::pair<int, int>, 20> kHandEdges{{
    {0, 1}, {1, 2}, {2, 3}, {3, 4},
    {0, 5}, {5, 6}, {6, 7}, {7, 8},
    {0, 9}, {9, 10}, {10, 11}, {11, 12},
    {0, 13}, {13, 14}, {14, 15}, {15, 16},
    {0, 17}, {17, 18}, {18, 19}, {19, 20},
}};

inline constexpr std::array<std::pair<int, int>, 7> kBodyEdges{{
    {0, 1}, {0, 2}, {1, 2}, {1, 3}, {3, 5}, {2, 4}, {4, 6},
}};

/// D^-1/2 (A + I) D^-1/2 for an undirected edge list.
template <typename T, std::size_t E>
Matrix<T> normalized_adjacency(int nodes, const std::array<std::pair<int, int>, E>& edges) {
  Matrix<T> a = Matrix<T>::Identity(nodes, nodes);
  for (const auto& [i, j] : edges) {
    a(i, j) = T(1);
    a(j, i) = T(1);
  }
  Eigen::Matrix<T, Eigen::Dynamic, 1> d = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * a * d.asDiagonal();
}

template <typename T>
Matrix<T> part_adjacency(Part p) {
  return p == Part::body ? normalized_adjacency<T>(kBodyJoints, kBodyEdges)
                         : normalized_adjacency<T>(kHandJoints, kHandEdges);
}

/// Independent deterministic random stream for (seed, stream).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// Derives a child seed from a parent seed and two counters (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return step(step(step(seed) ^ a) ^ b);
}

}  // namespace best
