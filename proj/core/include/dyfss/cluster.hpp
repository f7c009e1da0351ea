#pragma once

#include "dyfss/types.hpp"

namespace dyfss {

struct KMeansResult {
  Matrix centers;
  Labels assignment;
  double inertia = 0.0;
  // Within-cluster sum of squares after each Lloyd iteration of the best run.
  std::vector<double> inertia_trace;
};

/// Best of `n_init` k-means++ seeded Lloyd runs (lowest inertia). Empty
/// clusters are reseeded with the point farthest from its center. The
/// returned assignment is the nearest-center labelling of the returned
/// centers (ties to the lowest index).
KMeansResult kmeans(const Matrix& points, int k, int n_init, int max_iter, std::uint64_t seed);

/// Minimum-cost perfect matching on a square cost matrix. Returns perm with
/// perm[row] = assigned column.
std::vector<int> hungarian(const Matrix& cost);

}  // namespace dyfss
