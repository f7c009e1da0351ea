#include <doctest.h>

#include <cmath>

#include "dyfss/fusion.hpp"
#include "dyfss/linalg.hpp"
#include "helpers.hpp"

using namespace dyfss;

namespace {

struct Net {
  ParameterSet params;
  FusionNetwork net;

  Net(int k, int d, std::uint64_t seed, Activation act = Activation::Relu) {
    std::mt19937_64 rng(seed);
    net = add_fusion_network(params, k, d, act, rng);
  }
};

PreparedAdjacency identity_adjacency(int n) {
  PreparedAdjacency adj;
  adj.self_loop.resize(n, n);
  adj.self_loop.setIdentity();
  adj.normalized = adj.self_loop;
  adj.degree = Vector::Ones(n);
  return adj;
}

Matrix softmax_oracle(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) out(i, j) = std::exp(logits(i, j)) / z;
  }
  return out;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("identity expert on identity adjacency returns its input") {
    Net n(2, 3, 1, Activation::Identity);
    n.net.experts[0]->value = Matrix::Identity(3, 3);
    std::mt19937_64 rng(2);
    Matrix z = testing::random_matrix(5, 3, rng);
    CHECK(expert_forward(z, identity_adjacency(5), n.net, 0) == z);
  }

  TEST_CASE("zero expert weights give phi(0)") {
    Net n(2, 3, 1);
    n.net.experts[1]->value.setZero();
    std::mt19937_64 rng(3);
    Graph g = testing::random_graph(6, 0.4, 3, 4);
    CHECK(expert_forward(testing::random_matrix(6, 3, rng), normalize_adjacency(g), n.net, 1) == Matrix::Zero(6, 3));
    CHECK_THROWS_AS(expert_forward(Matrix::Zero(6, 3), normalize_adjacency(g), n.net, 2), Error);
    CHECK_THROWS_AS(expert_forward(Matrix::Zero(6, 4), normalize_adjacency(g), n.net, 0), ShapeError);
  }

  TEST_CASE("expert output matches a dense product") {
    Net n(3, 4, 5);
    Graph g = testing::random_graph(8, 0.3, 4, 6);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(7);
    Matrix z = testing::random_matrix(8, 4, rng);
    for (int k = 0; k < 3; ++k) {
      Matrix expected = (to_dense(adj.normalized) * z * n.net.experts[static_cast<std::size_t>(k)]->value).cwiseMax(0.0);
      CHECK((expert_forward(z, adj, n.net, k) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("gate examples") {
    Net n(3, 4, 8);
    std::mt19937_64 rng(9);
    Matrix z = testing::random_matrix(5, 4, rng);
    CHECK((gate(z, n.net) - softmax_oracle(z * n.net.gate->value)).cwiseAbs().maxCoeff() < 1e-12);

    z.row(3) = z.row(1);
    Matrix g = gate(z, n.net);
    CHECK(g.row(3) == g.row(1));

    n.net.gate->value.setZero();
    g = gate(z, n.net);
    CHECK((g.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  }

  TEST_CASE("gate rows are distributions and logit shifts leave them unchanged") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix logits = testing::random_matrix(6, 5, rng, 4.0);
      Matrix g = softmax_rows(logits);
      CHECK(g.minCoeff() >= 0.0);
      for (Eigen::Index i = 0; i < 6; ++i) CHECK(std::abs(g.row(i).sum() - 1.0) < 1e-9);
      Matrix shifted = logits;
      shifted.row(2).array() += 123.0;
      CHECK((softmax_rows(shifted) - g).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("fuse examples") {
    std::mt19937_64 rng(11);
    Matrix e = testing::random_matrix(4, 3, rng);
    CHECK(fuse({e}, Matrix::Ones(4, 1)) == e);

    std::vector<Matrix> experts;
    for (int k = 0; k < 5; ++k) experts.push_back(testing::random_matrix(4, 3, rng));
    Matrix mean = Matrix::Zero(4, 3);
    for (const auto& m : experts) mean += m / 5.0;
    CHECK((fuse(experts, Matrix::Constant(4, 5, 0.2)) - mean).cwiseAbs().maxCoeff() < 1e-12);

    Matrix gates = softmax_rows(testing::random_matrix(4, 5, rng));
    Matrix got = fuse(experts, gates);
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += gates(i, k) * experts[static_cast<std::size_t>(k)](i, c);
        CHECK(std::abs(got(i, c) - s) < 1e-12);
      }

    CHECK_THROWS_AS(fuse(experts, Matrix::Constant(4, 4, 0.25)), ShapeError);
    CHECK_THROWS_AS(fuse({e, Matrix::Zero(4, 2)}, Matrix::Constant(4, 2, 0.5)), ShapeError);
    CHECK_THROWS_AS(fuse({}, Matrix::Zero(4, 0)), ShapeError);
  }

  TEST_CASE("fused rows lie inside the expert hull") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Matrix> experts;
      for (int k = 0; k < 5; ++k) experts.push_back(testing::random_matrix(7, 4, rng, 3.0));
      Matrix fused = fuse(experts, softmax_rows(testing::random_matrix(7, 5, rng, 3.0)));
      for (int i = 0; i < 7; ++i)
        for (int c = 0; c < 4; ++c) {
          double lo = experts[0](i, c), hi = lo;
          for (const auto& m : experts) {
            lo = std::min(lo, m(i, c));
            hi = std::max(hi, m(i, c));
          }
          CHECK(fused(i, c) >= lo - 1e-12);
          CHECK(fused(i, c) <= hi + 1e-12);
        }
    }
  }

  TEST_CASE("raising an expert logit raises its weight in the fused row") {
    Net n(3, 4, 13);
    std::mt19937_64 rng(14);
    Matrix z = testing::random_matrix(5, 4, rng);
    Matrix before = gate(z, n.net);
    // Shifting column k of W_n along z_i raises logit k for node i only through z_i.
    n.net.gate->value.col(1) += 0.5 * z.row(2).transpose() / z.row(2).squaredNorm();
    Matrix after = gate(z, n.net);
    CHECK(after(2, 1) > before(2, 1));
  }

  TEST_CASE("plain and tape forward agree bitwise") {
    Net n(5, 4, 15);
    Graph g = testing::random_graph(9, 0.3, 4, 16);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(17);
    Matrix z = testing::random_matrix(9, 4, rng);
    ad::Tape tape;
    FusionVars v = fusion_forward(tape, tape.constant(z), adj, n.net);
    std::vector<Matrix> outs;
    for (int k = 0; k < 5; ++k) {
      outs.push_back(expert_forward(z, adj, n.net, k));
      CHECK(outs.back() == v.experts[static_cast<std::size_t>(k)].value());
    }
    CHECK(gate(z, n.net) == v.gates.value());
    CHECK(fuse(outs, gate(z, n.net)) == v.fused.value());
  }

  TEST_CASE("gradients reach every expert and the gate") {
    for (Activation act : {Activation::Relu, Activation::Identity}) {
      Net n(3, 3, 18, act);
      Graph g = testing::random_graph(7, 0.4, 3, 19);
      PreparedAdjacency adj = normalize_adjacency(g);
      std::mt19937_64 rng(20);
      Matrix z = testing::random_matrix(7, 3, rng);
      Matrix probe = testing::random_matrix(7, 3, rng);
      DifferentiableLoss loss = [&](ParameterSet&) {
        ad::Tape tape;
        FusionVars v = fusion_forward(tape, tape.constant(z), adj, n.net);
        ad::Var l = ad::sum(ad::hadamard(v.fused, tape.constant(probe)));
        tape.backward(l);
        return l.scalar();
      };
      CHECK(finite_diff_check(loss, n.params, -1, 1e-5) < 1e-4);
      loss(n.params);
      for (const auto& p : n.params) CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
      n.params.zero_grad();
    }
  }

  TEST_CASE("find_fusion_network validates shapes") {
    Net n(3, 4, 21);
    CHECK(find_fusion_network(n.params, 3, Activation::Relu).dim() == 4);
    CHECK_THROWS_AS(find_fusion_network(n.params, 2, Activation::Relu), ShapeError);
    CHECK_THROWS_AS(find_fusion_network(n.params, 4, Activation::Relu), Error);
  }
}
