#include "dyfss/cluster.hpp"

#include <algorithm>
#include <limits>

#include "dyfss/linalg.hpp"

namespace dyfss {

namespace {

Matrix seed_plus_plus(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  centers.row(0) = x.row(first);
  chosen[static_cast<std::size_t>(first)] = true;

  Vector closest(n);
  for (Eigen::Index i = 0; i < n; ++i) closest[i] = (x.row(i) - centers.row(0)).squaredNorm();

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = closest.sum();
    Eigen::Index next = -1;
    if (total > 0) {
      double target = unit(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= closest[i];
        if (target < 0 && closest[i] > 0) {
          next = i;
          break;
        }
      }
      if (next < 0)
        for (Eigen::Index i = n - 1; i >= 0; --i)
          if (closest[i] > 0) {
            next = i;
            break;
          }
    } else {
      // Every point coincides with a center already; take any unused point.
      std::vector<Eigen::Index> unused;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) unused.push_back(i);
      std::uniform_int_distribution<std::size_t> u(0, unused.size() - 1);
      next = unused[u(rng)];
    }
    centers.row(c) = x.row(next);
    chosen[static_cast<std::size_t>(next)] = true;
    for (Eigen::Index i = 0; i < n; ++i) closest[i] = std::min(closest[i], (x.row(i) - centers.row(c)).squaredNorm());
  }
  return centers;
}

double assign_nearest(const Matrix& x, const Matrix& centers, Labels& assignment, Vector& dist) {
  const Matrix d = squared_distances(x, centers);
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < d.cols(); ++j)
      if (d(i, j) < d(i, best)) best = j;
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
    dist[i] = d(i, best);
    inertia += d(i, best);
  }
  return inertia;
}

KMeansResult lloyd(const Matrix& x, int k, int max_iter, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  KMeansResult r;
  r.centers = seed_plus_plus(x, k, rng);
  r.assignment.assign(static_cast<std::size_t>(n), -1);
  Labels previous;
  Vector dist(n);
  for (int it = 0;; ++it) {
    r.inertia = assign_nearest(x, r.centers, r.assignment, dist);
    r.inertia_trace.push_back(r.inertia);
    if (r.assignment == previous || it >= max_iter) break;
    previous = r.assignment;

    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.assignment[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      r.centers.row(c) = x.row(far);
      dist[far] = 0.0;
    }
  }
  return r;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, int n_init, int max_iter, std::uint64_t seed) {
  if (k < 1) throw Error("kmeans: k must be positive");
  if (k > points.rows())
    throw Error("kmeans: k (" + std::to_string(k) + ") exceeds number of points (" + std::to_string(points.rows()) +
                ")");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(n_init, 1); ++run) {
    auto rng = make_rng(seed, stream::kKMeans, static_cast<std::uint64_t>(run));
    KMeansResult r = lloyd(points, k, max_iter, rng);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

std::vector<int> hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("hungarian: cost matrix must be square");
  if (!cost.allFinite()) throw Error("hungarian: non-finite cost");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting path with row/column potentials, 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> perm(n, -1);
  for (int j = 1; j <= n; ++j) perm[match[j] - 1] = j - 1;
  return perm;
}

}  // namespace dyfss
