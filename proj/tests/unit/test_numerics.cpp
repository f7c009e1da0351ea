#include <doctest.h>

#include <cmath>
#include <set>

#include "dyfss/cluster.hpp"
#include "dyfss/linalg.hpp"
#include "dyfss/optim.hpp"
#include "helpers.hpp"

using namespace dyfss;

namespace {

SparseMatrix random_sparse(int rows, int cols, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::normal_distribution<double> val;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      if (keep(rng)) t.emplace_back(i, j, val(rng));
  SparseMatrix s(rows, cols);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

double brute_force_min_cost(const Matrix& cost) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : testing::all_permutations(static_cast<int>(cost.rows()))) {
    double c = 0;
    for (std::size_t r = 0; r < p.size(); ++r) c += cost(static_cast<Eigen::Index>(r), p[r]);
    best = std::min(best, c);
  }
  return best;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& perm) {
  double c = 0;
  for (std::size_t r = 0; r < perm.size(); ++r) c += cost(static_cast<Eigen::Index>(r), perm[r]);
  return c;
}

double inertia_of(const Matrix& x, const Labels& a, int k) {
  Matrix centers = Matrix::Zero(k, x.cols());
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    centers.row(a[static_cast<std::size_t>(i)]) += x.row(i);
    ++counts[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])];
  }
  for (int j = 0; j < k; ++j)
    if (counts[static_cast<std::size_t>(j)]) centers.row(j) /= counts[static_cast<std::size_t>(j)];
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += (x.row(i) - centers.row(a[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("spmm with identity returns the dense operand") {
    std::mt19937_64 rng(1);
    SparseMatrix eye(5, 5);
    eye.setIdentity();
    Matrix b = testing::random_matrix(5, 3, rng);
    CHECK(spmm(eye, b) == b);
  }

  TEST_CASE("spmm on a 1x1 matrix") {
    SparseMatrix a(1, 1);
    a.insert(0, 0) = 0.5;
    Matrix b(1, 1);
    b << 2.0;
    CHECK(spmm(a, b)(0, 0) == 1.0);
  }

  TEST_CASE("spmm matches dense multiplication") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      SparseMatrix a = random_sparse(10, 10, 0.3, rng);
      Matrix b = testing::random_matrix(10, 4, rng);
      Matrix dense = to_dense(a);
      Matrix expected = Matrix::Zero(10, 4);
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 4; ++j)
          for (int k = 0; k < 10; ++k) expected(i, j) += dense(i, k) * b(k, j);
      CHECK((spmm(a, b) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("spmm rejects mismatched shapes") {
    SparseMatrix a(3, 4);
    CHECK_THROWS_AS(spmm(a, Matrix::Zero(3, 2)), ShapeError);
  }

  TEST_CASE("softmax_rows examples") {
    Matrix z(1, 2);
    z << 0, 0;
    Matrix s = softmax_rows(z);
    CHECK(s(0, 0) == 0.5);
    CHECK(s(0, 1) == 0.5);

    Matrix v(1, 3);
    v << 1, 2, 3;
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    s = softmax_rows(v);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(s(0, j) - std::exp(j + 1.0) / denom) < 1e-12);

    Matrix shifted = v.array() + 123.0;
    CHECK((softmax_rows(shifted) - s).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("softmax_rows rows sum to one for large inputs") {
    std::mt19937_64 rng(3);
    Matrix m = testing::random_matrix(50, 6, rng, 1e3);
    Matrix s = softmax_rows(m);
    for (int i = 0; i < 50; ++i) {
      CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-9);
      CHECK(s.row(i).minCoeff() >= 0.0);
    }
  }

  TEST_CASE("squared_distances and argmax_rows") {
    Matrix x(2, 2), c(2, 2);
    x << 0, 0, 1, 1;
    c << 0, 0, 3, 1;
    Matrix d = squared_distances(x, c);
    CHECK(d(0, 0) == 0.0);
    CHECK(d(0, 1) == 10.0);
    CHECK(d(1, 0) == 2.0);
    CHECK(d(1, 1) == 4.0);

    Matrix m(3, 3);
    m << 1, 3, 3, 2, 2, 2, -1, -5, 0;
    CHECK(argmax_rows(m) == Labels{1, 0, 2});
  }

  TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    ParameterSet params;
    Parameter& p = params.add("w", Matrix::Constant(2, 2, 0.7));
    params.zero_grad();
    adam_step(params, 0.1);
    CHECK(p.value == Matrix::Constant(2, 2, 0.7));
  }

  TEST_CASE("adam step descends") {
    ParameterSet params;
    Parameter& p = params.add("w", Matrix::Constant(1, 1, 1.0));
    p.grad(0, 0) = 2.0;  // d(w²)/dw at w = 1
    adam_step(params, 0.1);
    CHECK(p.value(0, 0) < 1.0);
    CHECK(p.grad(0, 0) == 0.0);
    CHECK(params.step() == 1);
  }

  TEST_CASE("adam trajectory matches a scalar reference") {
    // f(w) = 0.5·a·(w − b)², five steps.
    const double a = 3.0, b = -0.4, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ParameterSet params;
    Parameter& p = params.add("w", Matrix::Constant(1, 1, 2.0));
    double w = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
      const double g = a * (w - b);
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      w -= lr * mhat / (std::sqrt(vhat) + eps);

      p.grad(0, 0) = a * (p.value(0, 0) - b);
      adam_step(params, lr, b1, b2, eps);
      CHECK(std::abs(p.value(0, 0) - w) < 1e-10);
    }
  }

  TEST_CASE("finite_diff_check on linear and quadratic losses") {
    ParameterSet params;
    std::mt19937_64 rng(4);
    params.add("w", testing::random_matrix(3, 4, rng));
    DifferentiableLoss linear = [](ParameterSet& ps) {
      Parameter& w = ps.at("w");
      w.grad.array() += 1.0;
      return w.value.sum();
    };
    CHECK(finite_diff_check(linear, params, 100, 1e-4) < 1e-8);

    DifferentiableLoss quadratic = [](ParameterSet& ps) {
      Parameter& w = ps.at("w");
      w.grad += 2.0 * w.value;
      return w.value.squaredNorm();
    };
    CHECK(finite_diff_check(quadratic, params, 100, 1e-4) < 1e-6);

    DifferentiableLoss wrong = [](ParameterSet& ps) {
      Parameter& w = ps.at("w");
      w.grad += 3.0 * w.value;
      return w.value.squaredNorm();
    };
    CHECK(finite_diff_check(wrong, params, 100, 1e-4) > 0.1);
  }

  TEST_CASE("finite_diff_check restores parameter values") {
    ParameterSet params;
    std::mt19937_64 rng(5);
    Parameter& w = params.add("w", testing::random_matrix(2, 2, rng));
    const Matrix before = w.value;
    DifferentiableLoss cube = [](ParameterSet& ps) {
      Parameter& p = ps.at("w");
      p.grad += 3.0 * p.value.array().square().matrix();
      return p.value.array().cube().sum();
    };
    finite_diff_check(cube, params, 4, 1e-4);
    CHECK(w.value == before);
    CHECK(w.grad.isZero(0));
  }

  TEST_CASE("hungarian on an identity-favouring cost") {
    Matrix cost = Matrix::Ones(4, 4) - Matrix::Identity(4, 4);
    CHECK(hungarian(cost) == std::vector<int>{0, 1, 2, 3});
  }

  TEST_CASE("hungarian matches permutation enumeration") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> val(0, 20);
    for (int n = 1; n <= 7; ++n)
      for (int trial = 0; trial < 20; ++trial) {
        Matrix cost(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) cost(i, j) = val(rng);
        auto perm = hungarian(cost);
        std::set<int> cols(perm.begin(), perm.end());
        CHECK(static_cast<int>(cols.size()) == n);
        CHECK(assignment_cost(cost, perm) == brute_force_min_cost(cost));
      }
  }

  TEST_CASE("hungarian is invariant to shifting a row") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix cost = testing::random_matrix(5, 5, rng);
      const auto perm = hungarian(cost);
      Matrix shifted = cost;
      shifted.row(trial % 5).array() += 17.0;
      CHECK(std::abs(assignment_cost(shifted, hungarian(shifted)) - assignment_cost(shifted, perm)) < 1e-12);
    }
  }

  TEST_CASE("hungarian rejects bad input") {
    CHECK_THROWS_AS(hungarian(Matrix::Zero(2, 3)), ShapeError);
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(hungarian(bad), Error);
  }

  TEST_CASE("kmeans with k equal to the number of points") {
    std::mt19937_64 rng(8);
    Matrix x = testing::random_matrix(6, 3, rng);
    KMeansResult r = kmeans(x, 6, 3, 50, 1);
    CHECK(r.inertia < 1e-12);
    CHECK(std::set<int>(r.assignment.begin(), r.assignment.end()).size() == 6);
  }

  TEST_CASE("kmeans matches the exhaustive best 2-partition") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 6 + trial % 5;  // 6..10 points
      Matrix x = testing::random_matrix(n, 2, rng);
      for (int i = 0; i < n / 2; ++i) x.row(i).array() += 6.0;  // two blobs

      double best = std::numeric_limits<double>::infinity();
      Labels best_labels;
      for (int mask = 1; mask < (1 << n) - 1; ++mask) {
        Labels a(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = (mask >> i) & 1;
        const double in = inertia_of(x, a, 2);
        if (in < best) {
          best = in;
          best_labels = a;
        }
      }
      KMeansResult r = kmeans(x, 2, 10, 100, static_cast<std::uint64_t>(trial));
      CHECK(std::abs(r.inertia - best) < 1e-9);
      const bool same = r.assignment == best_labels;
      Labels flipped = best_labels;
      for (int& v : flipped) v = 1 - v;
      CHECK((same || r.assignment == flipped));
      for (int i = 0; i < n; ++i) CHECK((r.assignment[static_cast<std::size_t>(i)] == r.assignment[0]) == (i < n / 2));
    }
  }

  TEST_CASE("kmeans is invariant to duplicating the data") {
    std::mt19937_64 rng(10);
    Matrix x = testing::random_matrix(12, 2, rng);
    for (int i = 0; i < 4; ++i) x.row(i).array() += 8.0;
    for (int i = 4; i < 8; ++i) x.row(i).array() -= 8.0;
    Matrix twice(24, 2);
    twice << x, x;
    auto sorted_centers = [](const Matrix& c) {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index i = 0; i < c.rows(); ++i) rows.push_back({c(i, 0), c(i, 1)});
      std::sort(rows.begin(), rows.end());
      return rows;
    };
    auto a = sorted_centers(kmeans(x, 3, 10, 100, 3).centers);
    auto b = sorted_centers(kmeans(twice, 3, 10, 100, 3).centers);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(a[i][j] - b[i][j]) < 1e-9);
  }

  TEST_CASE("kmeans properties") {
    std::mt19937_64 rng(11);
    Matrix x = testing::random_matrix(80, 4, rng);
    KMeansResult r = kmeans(x, 5, 4, 100, 12);
    for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) CHECK(r.inertia_trace[i] <= r.inertia_trace[i - 1] + 1e-9);
    std::set<int> used(r.assignment.begin(), r.assignment.end());
    CHECK(used.size() == 5);
    // Assignment is the nearest-center labelling of the returned centers.
    CHECK(argmax_rows(-squared_distances(x, r.centers)) == r.assignment);
    CHECK(std::abs(inertia_of(x, r.assignment, 5) - r.inertia) < 1e-9);

    KMeansResult again = kmeans(x, 5, 4, 100, 12);
    CHECK(again.centers == r.centers);
    CHECK(again.assignment == r.assignment);
    CHECK_THROWS_AS(kmeans(x.topRows(3), 4, 1, 10, 0), Error);
  }
}
