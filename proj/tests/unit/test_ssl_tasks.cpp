#include <doctest.h>

#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "dyfss/metrics.hpp"
#include "dyfss/ssl_tasks.hpp"
#include "helpers.hpp"

using namespace dyfss;

namespace {

Graph two_triangles() {
  return make_graph(Matrix::Ones(6, 2), {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
}

// Unbounded BFS hop count, -1 when unreachable.
int hops(const Graph& g, int s, int t) {
  const auto adj = g.neighbours();
  std::vector<int> d(adj.size(), -1);
  std::deque<int> q{s};
  d[s] = 0;
  while (!q.empty()) {
    int v = q.front();
    q.pop_front();
    for (int w : adj[v])
      if (d[w] < 0) {
        d[w] = d[v] + 1;
        q.push_back(w);
      }
  }
  return d[t];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ce_row(const RowVector& logits, int label) {
  double z = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) z += std::exp(logits(j));
  return -std::log(std::exp(logits(label)) / z);
}

struct Fixture {
  Graph g = testing::random_graph(10, 0.35, 4, 21, 2);
  std::mt19937_64 rng{22};
  Matrix z = testing::random_matrix(10, 3, rng);
  Matrix z_corrupt = testing::random_matrix(10, 3, rng);
};

}  // namespace

TEST_SUITE("ssltasks") {
  TEST_CASE("partition of two triangles follows the components") {
    Labels part = make_par_labels(two_triangles(), 2, 0);
    CHECK(part[0] == part[1]);
    CHECK(part[1] == part[2]);
    CHECK(part[3] == part[4]);
    CHECK(part[4] == part[5]);
    CHECK(part[0] != part[3]);
  }

  TEST_CASE("partition with one part per node") {
    Graph g = testing::random_graph(12, 0.3, 2, 5);
    Labels part = make_par_labels(g, 12, 1);
    CHECK(std::set<int>(part.begin(), part.end()).size() == 12);
  }

  TEST_CASE("partition parts are balanced on connected graphs") {
    SbmSpec s;
    s.seed = 4;
    Graph g = generate_sbm(s);
    for (int parts : {3, 5, 10}) {
      Labels part = make_par_labels(g, parts, 9);
      std::vector<int> sizes(static_cast<std::size_t>(parts), 0);
      for (int p : part) {
        REQUIRE(p >= 0);
        REQUIRE(p < parts);
        ++sizes[static_cast<std::size_t>(p)];
      }
      const double target = 150.0 / parts;
      for (int sz : sizes) {
        CHECK(sz >= target / 2);
        CHECK(sz <= target * 2);
      }
    }
    CHECK_THROWS_AS(make_par_labels(g, 1, 0), Error);
    CHECK_THROWS_AS(make_par_labels(g, 151, 0), Error);
  }

  TEST_CASE("attribute clusters separate duplicate groups") {
    Matrix x(8, 2);
    x << 0, 0, 0, 0, 0, 0, 0, 0, 5, 1, 5, 1, 5, 1, 5, 1;
    Labels l = make_clu_labels(x, 2, 3);
    for (int i = 1; i < 4; ++i) CHECK(l[static_cast<std::size_t>(i)] == l[0]);
    for (int i = 5; i < 8; ++i) CHECK(l[static_cast<std::size_t>(i)] == l[4]);
    CHECK(l[0] != l[4]);
  }

  TEST_CASE("attribute clusters on identical features are a valid labelling") {
    Labels l = make_clu_labels(Matrix::Ones(6, 3), 2, 0);
    for (int v : l) CHECK((v == 0 || v == 1));
  }

  TEST_CASE("attribute clusters recover shifted sbm blocks") {
    SbmSpec s;
    s.feature_shift = 2.0;
    s.seed = 2;
    Graph g = generate_sbm(s);
    Labels l = make_clu_labels(g.features, 3, 1);
    CHECK(clustering_accuracy(make_result(l, *g.labels)) >= 0.9);
  }

  TEST_CASE("pair distance classes") {
    Graph path = testing::path_graph(4);
    auto nb = path.neighbours();
    CHECK(pair_distance_class(nb, 0, 3, 4) == 2);
    CHECK(pair_distance_class(nb, 1, 2, 4) == 0);
    CHECK(pair_distance_class(nb, 0, 3, 2) == 1);
    Graph split = two_triangles();
    CHECK(pair_distance_class(split.neighbours(), 0, 4, 4) == 3);
  }

  TEST_CASE("pair distance samples carry their BFS class and are balanced") {
    SbmSpec s;
    s.p_in = 0.08;
    s.p_out = 0.005;
    s.seed = 3;
    Graph g = generate_sbm(s);
    const int max_hop = 4;
    PairSample p = sample_pairdis(g, 4 * g.n_nodes(), max_hop, 5);
    REQUIRE(p.size() > 0);
    std::vector<int> counts(max_hop, 0);
    for (std::size_t k = 0; k < p.size(); ++k) {
      CHECK(p.first[k] != p.second[k]);
      const int h = hops(g, p.first[k], p.second[k]);
      const int expected = (h < 0 || h >= max_hop) ? max_hop - 1 : h - 1;
      CHECK(p.targets[k] == expected);
      ++counts[static_cast<std::size_t>(p.targets[k])];
    }
    const double mean = static_cast<double>(p.size()) / max_hop;
    for (int c : counts) CHECK(std::abs(c - mean) <= 0.1 * mean);

    PairSample again = sample_pairdis(g, 4 * g.n_nodes(), max_hop, 5);
    CHECK(again.first == p.first);
    CHECK(again.second == p.second);
    CHECK_THROWS_AS(sample_pairdis(make_graph(Matrix::Ones(1, 1), {}), 4, 4, 0), Error);
  }

  TEST_CASE("pair similarity positives come from the top-3 cosine neighbours") {
    SbmSpec s;
    s.nodes_per_block = 10;
    s.feature_shift = 2.0;
    s.seed = 8;
    Graph g = generate_sbm(s);
    PairSample p = sample_pairsim(g, 1, 4);
    CHECK(p.size() == 60);
    int pos = 0, neg = 0, intra = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const int a = p.first[k], b = p.second[k];
      CHECK(a != b);
      // Rank of b among a's neighbours by cosine, ties to the lower index.
      auto cosine = [&](int u, int v) {
        return g.features.row(u).dot(g.features.row(v)) / (g.features.row(u).norm() * g.features.row(v).norm());
      };
      int better = 0;
      for (int v = 0; v < g.n_nodes(); ++v) {
        if (v == a || v == b) continue;
        const double cv = cosine(a, v), cb = cosine(a, b);
        if (cv > cb || (cv == cb && v < b)) ++better;
      }
      if (p.targets[k] == 1) {
        ++pos;
        CHECK(better < 3);
        if ((*g.labels)[static_cast<std::size_t>(a)] == (*g.labels)[static_cast<std::size_t>(b)]) ++intra;
      } else {
        ++neg;
        CHECK(better >= 3);
      }
    }
    CHECK(pos == neg);
    CHECK(intra >= 0.8 * pos);
  }

  TEST_CASE("pair similarity with duplicates and one-hot ties") {
    Matrix x(6, 3);
    x << 1, 2, 0, 1, 2, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0, 0, 0, 5;
    Graph g = make_graph(x, {});
    PairSample p = sample_pairsim(g, 20, 1);
    bool dup_pair = false;
    for (std::size_t k = 0; k < p.size(); ++k)
      if (p.targets[k] == 1 && p.first[k] == 0 && p.second[k] == 1) dup_pair = true;
    CHECK(dup_pair);

    Graph onehot = make_graph(Matrix::Identity(6, 6), {});
    PairSample q = sample_pairsim(onehot, 2, 3);
    int pos = 0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      pos += q.targets[k];
      if (q.targets[k] == 1) {
        // All cosines are 0, so the top-3 are the three lowest other indices.
        const int a = q.first[k];
        std::vector<int> top;
        for (int v = 0; v < 6 && top.size() < 3; ++v)
          if (v != a) top.push_back(v);
        CHECK(std::find(top.begin(), top.end(), q.second[k]) != top.end());
      }
    }
    CHECK(2 * pos == static_cast<int>(q.size()));
  }

  TEST_CASE("zeroed heads give closed-form losses") {
    Fixture f;
    ad::Tape tape;
    ad::Var z = tape.constant(f.z);
    ParameterSet params;
    SslTask par;
    par.kind = TaskKind::Partition;
    par.labels = make_par_labels(f.g, 4, 0);
    par.n_outputs = 4;
    TaskHead h;
    h.weight = &params.add("w", Matrix::Zero(3, 4));
    h.bias = &params.add("b", Matrix::Zero(1, 4));
    CHECK(std::abs(task_loss(par, h, z).scalar() - std::log(4.0)) < 1e-14);

    SslTask dgi;
    dgi.kind = TaskKind::Infomax;
    TaskHead hd;
    hd.weight = &params.add("wd", Matrix::Zero(3, 3));
    CHECK(std::abs(task_loss(dgi, hd, z, tape.constant(f.z_corrupt)).scalar() - std::log(2.0)) < 1e-14);
    CHECK_THROWS_AS(task_loss(dgi, hd, z), Error);

    SslTask missing;
    missing.kind = TaskKind::PairSimilarity;
    CHECK_THROWS_AS(task_loss(missing, h, z), Error);
  }

  TEST_CASE("task losses match scalar recomputation") {
    Fixture f;
    SslConfig cfg;
    cfg.n_parts = 3;
    cfg.clu_clusters = 3;
    SslTaskSet set = make_task_set(f.g, cfg, 6);
    REQUIRE(set.size() == 5);
    ParameterSet params;
    std::mt19937_64 rng(7);
    std::vector<TaskHead> heads;
    for (std::size_t k = 0; k < set.size(); ++k)
      heads.push_back(add_task_head(params, head_prefix("t", k, set.tasks[k].kind), set.tasks[k], 3, rng));
    // Nonzero biases so they enter the oracle.
    for (auto& h : heads)
      if (h.bias) h.bias->value = testing::random_matrix(1, static_cast<int>(h.bias->value.cols()), rng);

    ad::Tape tape;
    ad::Var z = tape.constant(f.z), zc = tape.constant(f.z_corrupt);
    double sum = 0;
    for (std::size_t k = 0; k < set.size(); ++k) {
      const SslTask& t = set.tasks[k];
      const Matrix& w = heads[k].weight->value;
      double oracle = 0;
      switch (t.kind) {
        case TaskKind::Partition:
        case TaskKind::AttributeCluster: {
          for (int i = 0; i < 10; ++i)
            oracle += ce_row(f.z.row(i) * w + heads[k].bias->value, t.labels[static_cast<std::size_t>(i)]);
          oracle /= 10;
          break;
        }
        case TaskKind::PairDistance: {
          for (std::size_t p = 0; p < t.pairs.size(); ++p) {
            RowVector d = (f.z.row(t.pairs.first[p]) - f.z.row(t.pairs.second[p])).cwiseAbs();
            oracle += ce_row(d * w + heads[k].bias->value, t.pairs.targets[p]);
          }
          oracle /= static_cast<double>(t.pairs.size());
          break;
        }
        case TaskKind::PairSimilarity: {
          for (std::size_t p = 0; p < t.pairs.size(); ++p) {
            RowVector e = f.z.row(t.pairs.first[p]).cwiseProduct(f.z.row(t.pairs.second[p]));
            const double s = sigmoid((e * w)(0) + heads[k].bias->value(0, 0));
            oracle -= t.pairs.targets[p] ? std::log(s) : std::log(1 - s);
          }
          oracle /= static_cast<double>(t.pairs.size());
          break;
        }
        case TaskKind::Infomax: {
          RowVector mean = f.z.colwise().mean();
          RowVector summary(mean.size());
          for (Eigen::Index j = 0; j < mean.size(); ++j) summary(j) = sigmoid(mean(j));
          double pos = 0, neg = 0;
          for (int i = 0; i < 10; ++i) {
            pos -= std::log(sigmoid(f.z.row(i).dot(w * summary.transpose())));
            neg -= std::log(1 - sigmoid(f.z_corrupt.row(i).dot(w * summary.transpose())));
          }
          oracle = 0.5 * (pos / 10 + neg / 10);
          break;
        }
      }
      const double got = task_loss(t, heads[k], z, zc).scalar();
      CHECK(std::abs(got - oracle) < 1e-10);
      sum += got;
    }

    std::vector<ad::Var> zs(set.size(), z), zcs(set.size(), zc);
    CHECK(std::abs(ssl_total_loss(set, heads, zs, zcs).scalar() - sum) < 1e-12);
    SslTaskSet one;
    one.tasks.push_back(set.tasks[0]);
    CHECK(ssl_total_loss(one, {heads[0]}, {z}, {zc}).scalar() == task_loss(set.tasks[0], heads[0], z).scalar());
    CHECK_THROWS_AS(ssl_total_loss(set, heads, {z}, {zc}), Error);
  }

  TEST_CASE("task loss gradients") {
    Fixture f;
    SslConfig cfg;
    cfg.n_parts = 3;
    cfg.clu_clusters = 3;
    cfg.pairdis_pairs_per_node = 2;
    SslTaskSet set = make_task_set(f.g, cfg, 2);
    for (std::size_t k = 0; k < set.size(); ++k) {
      CAPTURE(task_name(set.tasks[k].kind));
      ParameterSet params;
      std::mt19937_64 rng(k);
      Parameter& pz = params.add("z", f.z);
      Parameter& pzc = params.add("zc", f.z_corrupt);
      TaskHead head = add_task_head(params, "h", set.tasks[k], 3, rng);
      DifferentiableLoss loss = [&](ParameterSet&) {
        ad::Tape tape;
        ad::Var l = task_loss(set.tasks[k], head, tape.parameter(pz), tape.parameter(pzc));
        tape.backward(l);
        return l.scalar();
      };
      CHECK(finite_diff_check(loss, params, -1, 1e-5) < 1e-6);
    }
  }

  TEST_CASE("supervision is deterministic per seed") {
    Graph g = testing::random_graph(40, 0.1, 5, 1);
    SslConfig cfg;
    cfg.n_parts = 4;
    cfg.clu_clusters = 4;
    SslTaskSet a = make_task_set(g, cfg, 77), b = make_task_set(g, cfg, 77);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a.tasks[k].labels == b.tasks[k].labels);
      CHECK(a.tasks[k].pairs.first == b.tasks[k].pairs.first);
      CHECK(a.tasks[k].pairs.second == b.tasks[k].pairs.second);
      CHECK(a.tasks[k].pairs.targets == b.tasks[k].pairs.targets);
    }
    testing::TempDir dir("supervision");
    dump_supervision(a, dir.path());
    CHECK(std::filesystem::exists(dir / "ssl_0_par.csv"));
    CHECK(std::filesystem::exists(dir / "ssl_3_pairsim.csv"));
    CHECK(!std::filesystem::exists(dir / "ssl_4_dgi.csv"));
  }

  TEST_CASE("task names round-trip") {
    for (auto k : {TaskKind::Partition, TaskKind::AttributeCluster, TaskKind::PairDistance, TaskKind::PairSimilarity,
                   TaskKind::Infomax})
      CHECK(parse_task_kind(task_name(k)) == k);
    CHECK_THROWS_AS(parse_task_kind("metis"), Error);
  }
}
