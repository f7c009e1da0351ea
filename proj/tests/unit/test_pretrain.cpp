#include <doctest.h>

#include <cmath>

#include "dyfss/linalg.hpp"
#include "dyfss/pretrain.hpp"
#include "helpers.hpp"

using namespace dyfss;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

PretrainConfig small_config(int epochs) {
  PretrainConfig cfg;
  cfg.epochs = epochs;
  cfg.hidden_dim = 16;
  cfg.embedding_dim = 8;
  cfg.lr = 1e-2;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("pretrain") {
  TEST_CASE("gcn layer examples") {
    Graph one = make_graph(Matrix::Ones(1, 1), {});
    PreparedAdjacency adj1 = normalize_adjacency(one);
    Matrix z(1, 1), w(1, 1);
    z << 2;
    w << 3;
    CHECK(gcn_layer(z, adj1, w, Activation::Identity)(0, 0) == 6.0);

    Graph g = testing::random_graph(8, 0.3, 4, 1);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(2);
    Matrix x = testing::random_matrix(8, 4, rng), w2 = testing::random_matrix(4, 5, rng);
    CHECK(gcn_layer(x, adj, Matrix::Zero(4, 5), Activation::Relu) == Matrix::Zero(8, 5));
    Matrix dense = to_dense(adj.normalized) * x * w2;
    CHECK((gcn_layer(x, adj, w2, Activation::Identity) - dense).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((gcn_layer(x, adj, w2, Activation::Relu) - dense.cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(gcn_layer(x, adj, Matrix::Zero(3, 5), Activation::Relu), ShapeError);
    CHECK_THROWS_AS(gcn_layer(Matrix::Zero(7, 4), adj, w2, Activation::Relu), ShapeError);
  }

  TEST_CASE("gcn layer gradients w.r.t. weights and input") {
    Graph g = testing::random_graph(9, 0.3, 3, 4);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(5);
    ParameterSet params;
    Parameter& x = params.add("x", testing::random_matrix(9, 3, rng));
    Parameter& w = params.add("w", testing::random_matrix(3, 4, rng));
    Matrix probe = testing::random_matrix(9, 4, rng);
    for (Activation act : {Activation::Relu, Activation::Identity}) {
      DifferentiableLoss loss = [&](ParameterSet&) {
        ad::Tape tape;
        ad::Var out = gcn_layer(tape.parameter(x), adj, tape.parameter(w), act);
        ad::Var l = ad::sum(ad::hadamard(out, tape.constant(probe)));
        tape.backward(l);
        return l.scalar();
      };
      CHECK(finite_diff_check(loss, params, -1, 1e-4) < 1e-4);
    }
  }

  TEST_CASE("reconstruction loss examples") {
    Graph g = testing::random_graph(6, 0.4, 2, 6);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(7);
    ReconstructionSample sample = sample_reconstruction(adj, rng);
    CHECK(std::abs(reconstruction_loss(Matrix::Zero(6, 3), adj, sample) - std::log(2.0)) < 1e-15);
    CHECK(std::abs(reconstruction_loss(Matrix::Zero(6, 3), adj, full_reconstruction()) - std::log(2.0)) < 1e-15);

    // Positives and negatives are balanced and carry the right targets.
    std::size_t pos = 0;
    for (std::size_t k = 0; k < sample.first.size(); ++k) {
      const bool edge = adj.self_loop.coeff(sample.first[k], sample.second[k]) != 0.0;
      CHECK(edge == (sample.targets[k] == 1.0));
      pos += edge;
    }
    CHECK(pos == static_cast<std::size_t>(adj.self_loop.nonZeros()));
    CHECK(2 * pos == sample.first.size());

    Matrix z = testing::random_matrix(6, 3, rng);
    double oracle = 0;
    for (std::size_t k = 0; k < sample.first.size(); ++k) {
      const double logit = z.row(sample.first[k]).dot(z.row(sample.second[k]));
      oracle += sample.targets[k] == 1.0 ? softplus(-logit) : softplus(logit);
    }
    CHECK(std::abs(reconstruction_loss(z, adj, sample) - oracle / static_cast<double>(sample.first.size())) < 1e-10);

    Matrix a = to_dense(adj.self_loop);
    double dense = 0;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const double logit = z.row(i).dot(z.row(j));
        dense += a(i, j) == 1.0 ? softplus(-logit) : softplus(logit);
      }
    CHECK(std::abs(reconstruction_loss(z, adj, full_reconstruction()) - dense / 36) < 1e-10);
  }

  TEST_CASE("reconstruction loss vanishes when logits separate") {
    // Two disjoint cliques; embeddings aligned within a clique and opposed across.
    Graph g = make_graph(Matrix::Ones(4, 1), {{0, 1}, {2, 3}});
    PreparedAdjacency adj = normalize_adjacency(g);
    Matrix z(4, 1);
    z << 1, 1, -1, -1;
    ReconstructionSample s;
    s.first = {0, 1, 2, 0, 3};
    s.second = {1, 1, 3, 2, 1};
    s.targets = {1, 1, 1, 0, 0};
    double prev = reconstruction_loss(z, adj, s);
    for (double scale : {4.0, 16.0, 64.0}) {
      const double l = reconstruction_loss(scale * z, adj, s);
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev < 1e-12);
  }

  TEST_CASE("reconstruction gradients") {
    Graph g = testing::random_graph(7, 0.4, 2, 8);
    PreparedAdjacency adj = normalize_adjacency(g);
    std::mt19937_64 rng(9);
    ReconstructionSample sample = sample_reconstruction(adj, rng);
    ParameterSet params;
    Parameter& z = params.add("z", testing::random_matrix(7, 3, rng));
    for (const ReconstructionSample& s : {sample, full_reconstruction()}) {
      DifferentiableLoss loss = [&](ParameterSet&) {
        ad::Tape tape;
        ad::Var l = reconstruction_loss(tape.parameter(z), adj, s);
        tape.backward(l);
        return l.scalar();
      };
      CHECK(finite_diff_check(loss, params, -1, 1e-4) < 1e-4);
    }
  }

  TEST_CASE("an empty task set trains on reconstruction alone") {
    Graph g = testing::random_graph(20, 0.2, 5, 10);
    PreparedAdjacency adj = normalize_adjacency(g);
    PretrainResult none = pretrain(g, adj, SslTaskSet{}, small_config(5));
    REQUIRE(none.trace.size() == 5);
    for (const auto& e : none.trace) {
      CHECK(e.task_losses.empty());
      CHECK(e.total == e.reconstruction);
    }
    // Zero-weighted tasks leave the encoder's trajectory untouched.
    SslConfig ssl;
    ssl.n_parts = 3;
    ssl.clu_clusters = 3;
    PretrainConfig cfg = small_config(5);
    cfg.ssl_weight = 0.0;
    PretrainResult muted = pretrain(g, adj, make_task_set(g, ssl, 1), cfg);
    for (std::size_t e = 0; e < 5; ++e) CHECK(muted.trace[e].reconstruction == none.trace[e].reconstruction);
    CHECK(muted.z == none.z);
  }

  TEST_CASE("pretraining lowers the loss on the reference sbm") {
    SbmSpec spec;
    Graph g = generate_sbm(spec);
    PreparedAdjacency adj = normalize_adjacency(g);
    SslTaskSet tasks = make_task_set(g, SslConfig{}, 0);
    PretrainConfig cfg;
    cfg.epochs = 100;
    PretrainResult r = pretrain(g, adj, tasks, cfg);
    REQUIRE(r.trace.size() == 100);
    CHECK(r.trace.back().total < r.trace.front().total);
    for (const auto& e : r.trace) {
      CHECK(std::isfinite(e.total));
      CHECK(e.task_losses.size() == 5);
    }
    CHECK(r.z.rows() == 150);
    CHECK(r.z.cols() == 128);
    CHECK(r.encoder.forward(g.features, adj) == r.z);
  }

  TEST_CASE("pretraining is bitwise reproducible") {
    Graph g = testing::random_graph(30, 0.15, 6, 11, 3);
    PreparedAdjacency adj = normalize_adjacency(g);
    SslConfig ssl;
    ssl.n_parts = 3;
    ssl.clu_clusters = 3;
    SslTaskSet tasks = make_task_set(g, ssl, 4);
    PretrainResult a = pretrain(g, adj, tasks, small_config(8)), b = pretrain(g, adj, tasks, small_config(8));
    CHECK(a.z == b.z);
    for (std::size_t e = 0; e < 8; ++e) CHECK(a.trace[e].total == b.trace[e].total);
    PretrainConfig other = small_config(8);
    other.seed = 4;
    CHECK(pretrain(g, adj, tasks, other).z != a.z);
  }

  TEST_CASE("divergence names the offending term") {
    Graph g = make_graph(Matrix::Constant(4, 2, 1e300), {{0, 1}, {2, 3}});
    PreparedAdjacency adj = normalize_adjacency(g);
    try {
      pretrain(g, adj, SslTaskSet{}, small_config(2));
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("reconstruction") != std::string::npos);
    }
    PretrainConfig bad = small_config(0);
    CHECK_THROWS_AS(pretrain(g, adj, SslTaskSet{}, bad), Error);
  }

  TEST_CASE("corruption permutations are seeded per stage and epoch") {
    auto p = corruption_permutation(50, 1, 1, 0);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
    CHECK(corruption_permutation(50, 1, 1, 0) == p);
    CHECK(corruption_permutation(50, 1, 1, 1) != p);
    CHECK(corruption_permutation(50, 1, 2, 0) != p);
    CHECK(corruption_permutation(50, 2, 1, 0) != p);
  }
}
