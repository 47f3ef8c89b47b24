#pragma once

#include "best/autograd.hpp"
#include "best/error.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <vector>

namespace best {

/// Index of the row of `codebook` closest to `x` in Euclidean distance.
/// Ties resolve to the lowest index.
template <typename T, typename Derived>
Index nearest_row(const Matrix<T>& codebook, const Eigen::MatrixBase<Derived>& x) {
  if (codebook.rows() == 0) throw Error(ErrorKind::data, "nearest_row: empty codebook");
  Index best = 0;
  T best_d = std::numeric_limits<T>::infinity();
  for (Index k = 0; k < codebook.rows(); ++k) {
    const T d = (codebook.row(k) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

template <typename T>
std::vector<Index> nearest_rows(const Matrix<T>& codebook, const Matrix<T>& points) {
  std::vector<Index> out(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) out[static_cast<std::size_t>(i)] = nearest_row<T>(codebook, points.row(i));
  return out;
}

template <typename T>
std::size_t count_distinct_rows(const Matrix<T>& points) {
  std::set<std::vector<T>> seen;
  for (Index i = 0; i < points.rows(); ++i) seen.emplace(points.row(i).data(), points.row(i).data() + points.cols());
  return seen.size();
}

struct KMeansResult {
  std::vector<Index> assignment;
  int iterations = 0;
};

/// Lloyd iterations from k-means++ seeding. Requires at least `k` distinct
/// points; centres are returned in `centers` (k x dim).
template <typename T>
KMeansResult kmeans(const Matrix<T>& points, Index k, std::uint64_t seed, Matrix<T>& centers, int max_iters = 100) {
  if (k < 1) throw Error(ErrorKind::config, "kmeans: cluster count must be at least 1");
  if (count_distinct_rows(points) < static_cast<std::size_t>(k))
    throw Error(ErrorKind::data, "kmeans: fewer distinct points than clusters (" + std::to_string(k) + ")");
  std::mt19937_64 rng(seed);
  const Index n = points.rows();
  centers.resize(k, points.cols());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centers.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Index c = 1; c < k; ++c) {
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)],
                                                 static_cast<double>((points.row(i) - centers.row(c - 1)).squaredNorm()));
    std::discrete_distribution<Index> pick(d2.begin(), d2.end());
    centers.row(c) = points.row(pick(rng));
  }

  KMeansResult res;
  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index a = nearest_row<T>(centers, points.row(i));
      if (a != res.assignment[static_cast<std::size_t>(i)]) {
        res.assignment[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix<T> sums = Matrix<T>::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(res.assignment[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<T>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Empty cluster: move it onto the point worst served by its centre.
        Index worst = 0;
        T worst_d = -1;
        for (Index i = 0; i < n; ++i) {
          const T d = (points.row(i) - centers.row(res.assignment[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > worst_d) {
            worst_d = d;
            worst = i;
          }
        }
        centers.row(c) = points.row(worst);
      }
    }
  }
  res.assignment = nearest_rows<T>(centers, points);
  return res;
}

}  // namespace best
