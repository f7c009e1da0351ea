#include "dyfss/ssl_tasks.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>

#include "dyfss/cluster.hpp"
#include "dyfss/csv.hpp"

namespace dyfss {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Partition: return "par";
    case TaskKind::AttributeCluster: return "clu";
    case TaskKind::PairDistance: return "pairdis";
    case TaskKind::PairSimilarity: return "pairsim";
    case TaskKind::Infomax: return "dgi";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  for (auto k : {TaskKind::Partition, TaskKind::AttributeCluster, TaskKind::PairDistance, TaskKind::PairSimilarity,
                 TaskKind::Infomax})
    if (task_name(k) == name) return k;
  throw Error("unknown SSL task '" + std::string(name) + "'");
}

namespace {

// Marks every node within `radius` hops of `source`.
void mark_ball(const std::vector<std::vector<int>>& adj, int source, int radius, std::vector<char>& marked) {
  std::vector<int> depth(adj.size(), -1);
  std::deque<int> queue{source};
  depth[source] = 0;
  marked[source] = 1;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (depth[v] == radius) continue;
    for (int w : adj[v])
      if (depth[w] < 0) {
        depth[w] = depth[v] + 1;
        marked[w] = 1;
        queue.push_back(w);
      }
  }
}

}  // namespace

Labels make_par_labels(const Graph& g, int n_parts, std::uint64_t seed) {
  const int n = g.n_nodes();
  if (n_parts < 2) throw Error("partition: n_parts must be at least 2");
  if (n_parts > n) throw Error("partition: n_parts exceeds node count");
  const auto adj = g.neighbours();

  auto rng = make_rng(seed, stream::kPartition);
  std::vector<std::uint64_t> tie(n);
  for (auto& t : tie) t = rng();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (adj[a].size() != adj[b].size()) return adj[a].size() > adj[b].size();
    if (tie[a] != tie[b]) return tie[a] < tie[b];
    return a < b;
  });

  std::vector<int> seeds;
  std::vector<char> is_seed(n, 0);
  for (int radius = 2; radius >= 0 && static_cast<int>(seeds.size()) < n_parts; --radius) {
    std::vector<char> blocked(n, 0);
    for (int s : seeds) mark_ball(adj, s, radius, blocked);
    for (int v : order) {
      if (static_cast<int>(seeds.size()) == n_parts) break;
      if (blocked[v] || is_seed[v]) continue;
      seeds.push_back(v);
      is_seed[v] = 1;
      mark_ball(adj, v, radius, blocked);
    }
  }

  Labels part(n, -1);
  std::vector<int> sizes(n_parts, 0);
  std::vector<std::deque<int>> frontier(n_parts);
  for (int p = 0; p < n_parts; ++p) {
    part[seeds[p]] = p;
    sizes[p] = 1;
    for (int w : adj[seeds[p]]) frontier[p].push_back(w);
  }
  bool progress = true;
  while (progress) {
    progress = false;
    for (int p = 0; p < n_parts; ++p) {
      auto& q = frontier[p];
      while (!q.empty() && part[q.front()] != -1) q.pop_front();
      if (q.empty()) continue;
      const int v = q.front();
      q.pop_front();
      part[v] = p;
      ++sizes[p];
      for (int w : adj[v])
        if (part[w] == -1) q.push_back(w);
      progress = true;
    }
  }
  for (int v = 0; v < n; ++v) {
    if (part[v] != -1) continue;
    const int smallest = static_cast<int>(std::min_element(sizes.begin(), sizes.end()) - sizes.begin());
    part[v] = smallest;
    ++sizes[smallest];
  }
  return part;
}

Labels make_clu_labels(const Matrix& x, int n_clusters, std::uint64_t seed) {
  if (n_clusters < 2) throw Error("attribute clustering: n_clusters must be at least 2");
  return kmeans(x, n_clusters, 10, 100, make_rng(seed, stream::kClu)()).assignment;
}

int pair_distance_class(const std::vector<std::vector<int>>& neighbours, int i, int j, int max_hop) {
  if (i == j) throw Error("pair_distance_class: identical endpoints");
  std::vector<int> depth(neighbours.size(), -1);
  std::deque<int> queue{i};
  depth[i] = 0;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (v == j) return std::min(depth[v], max_hop) - 1;
    if (depth[v] >= max_hop) continue;
    for (int w : neighbours[v])
      if (depth[w] < 0) {
        depth[w] = depth[v] + 1;
        queue.push_back(w);
      }
  }
  return max_hop - 1;
}

PairSample sample_pairdis(const Graph& g, int n_pairs, int max_hop, std::uint64_t seed) {
  const int n = g.n_nodes();
  if (n < 2) throw Error("pair distance sampling needs at least 2 nodes");
  if (max_hop < 2) throw Error("pair distance sampling: max_hop must be at least 2");
  const auto adj = g.neighbours();
  auto rng = make_rng(seed, stream::kPairDis);
  std::uniform_int_distribution<int> pick_node(0, n - 1);

  std::vector<int> quota(max_hop, n_pairs / max_hop);
  for (int c = 0; c < n_pairs % max_hop; ++c) ++quota[c];
  int remaining = n_pairs;

  PairSample out;
  std::vector<int> depth(n, -1);
  std::vector<int> touched;
  std::vector<std::vector<int>> shells(max_hop);
  const long budget = 4L * n_pairs + 100;
  for (long attempt = 0; attempt < budget && remaining > 0; ++attempt) {
    const int anchor = pick_node(rng);
    for (auto& s : shells) s.clear();
    touched.assign(1, anchor);
    depth[anchor] = 0;
    for (std::size_t head = 0; head < touched.size(); ++head) {
      const int v = touched[head];
      if (depth[v] == max_hop - 1) continue;
      for (int w : adj[v])
        if (depth[w] < 0) {
          depth[w] = depth[v] + 1;
          shells[depth[w]].push_back(w);
          touched.push_back(w);
        }
    }
    auto emit = [&](int other, int cls) {
      out.first.push_back(anchor);
      out.second.push_back(other);
      out.targets.push_back(cls);
      --quota[cls];
      --remaining;
    };
    for (int cls = 0; cls + 1 < max_hop; ++cls) {
      const auto& shell = shells[cls + 1];
      if (quota[cls] == 0 || shell.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, shell.size() - 1);
      emit(shell[pick(rng)], cls);
    }
    const int far = max_hop - 1;
    if (quota[far] > 0 && static_cast<int>(touched.size()) < n) {
      // Uniform over nodes outside the ball: index into the complement.
      std::uniform_int_distribution<int> pick(0, n - static_cast<int>(touched.size()) - 1);
      int k = pick(rng);
      for (int v = 0; v < n; ++v) {
        if (depth[v] >= 0) continue;
        if (k-- == 0) {
          emit(v, far);
          break;
        }
      }
    }
    for (int v : touched) depth[v] = -1;
  }
  return out;
}

PairSample sample_pairsim(const Graph& g, int n_pairs_per_node, std::uint64_t seed) {
  const int n = g.n_nodes();
  PairSample out;
  if (n < 2 || n_pairs_per_node < 1) return out;
  const int top_k = std::min(3, n - 1);

  Matrix unit = g.features;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0) unit.row(i) /= norm;
  }
  auto rng = make_rng(seed, stream::kPairSim);

  const Eigen::Index block = 256;
  std::vector<int> idx(n);
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index rows = std::min<Eigen::Index>(block, n - start);
    const Matrix sims = unit.middleRows(start, rows) * unit.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int anchor = static_cast<int>(start + r);
      std::iota(idx.begin(), idx.end(), 0);
      auto better = [&](int a, int b) {
        if (a == anchor || b == anchor) return b == anchor && a != anchor;
        if (sims(r, a) != sims(r, b)) return sims(r, a) > sims(r, b);
        return a < b;
      };
      std::partial_sort(idx.begin(), idx.begin() + top_k, idx.end(), better);
      std::vector<char> excluded(n, 0);
      excluded[anchor] = 1;
      for (int k = 0; k < top_k; ++k) excluded[idx[k]] = 1;
      const int n_candidates = n - 1 - top_k;
      if (n_candidates <= 0) continue;
      std::uniform_int_distribution<int> pick_pos(0, top_k - 1);
      std::uniform_int_distribution<int> pick_neg(0, n_candidates - 1);
      for (int rep = 0; rep < n_pairs_per_node; ++rep) {
        out.first.push_back(anchor);
        out.second.push_back(idx[pick_pos(rng)]);
        out.targets.push_back(1);
        int k = pick_neg(rng);
        for (int v = 0; v < n; ++v) {
          if (excluded[v]) continue;
          if (k-- == 0) {
            out.first.push_back(anchor);
            out.second.push_back(v);
            out.targets.push_back(0);
            break;
          }
        }
      }
    }
  }
  return out;
}

SslTaskSet make_task_set(const Graph& g, const SslConfig& cfg, std::uint64_t seed) {
  SslTaskSet set;
  for (TaskKind kind : cfg.kinds) {
    SslTask t;
    t.kind = kind;
    switch (kind) {
      case TaskKind::Partition:
        t.labels = make_par_labels(g, std::min(cfg.n_parts, g.n_nodes()), seed);
        t.n_outputs = *std::max_element(t.labels.begin(), t.labels.end()) + 1;
        break;
      case TaskKind::AttributeCluster:
        t.labels = make_clu_labels(g.features, std::min(cfg.clu_clusters, g.n_nodes()), seed);
        t.n_outputs = *std::max_element(t.labels.begin(), t.labels.end()) + 1;
        break;
      case TaskKind::PairDistance:
        t.pairs = sample_pairdis(g, cfg.pairdis_pairs_per_node * g.n_nodes(), cfg.pairdis_max_hop, seed);
        t.n_outputs = cfg.pairdis_max_hop;
        break;
      case TaskKind::PairSimilarity:
        t.pairs = sample_pairsim(g, cfg.pairsim_pairs_per_node, seed);
        t.n_outputs = 1;
        break;
      case TaskKind::Infomax:
        t.n_outputs = 1;
        break;
    }
    set.tasks.push_back(std::move(t));
  }
  return set;
}

std::string head_prefix(const std::string& scope, std::size_t index, TaskKind kind) {
  return scope + ".head" + std::to_string(index) + "." + std::string(task_name(kind));
}

TaskHead add_task_head(ParameterSet& params, const std::string& prefix, const SslTask& task, int dim,
                       std::mt19937_64& rng) {
  TaskHead h;
  if (task.kind == TaskKind::Infomax) {
    h.weight = &params.add_uniform(prefix + ".w", dim, dim, rng);
    return h;
  }
  h.weight = &params.add_uniform(prefix + ".w", dim, task.n_outputs, rng);
  h.bias = &params.add(prefix + ".b", Matrix::Zero(1, task.n_outputs));
  return h;
}

TaskHead find_task_head(ParameterSet& params, const std::string& prefix, const SslTask& task) {
  TaskHead h;
  h.weight = &params.at(prefix + ".w");
  if (task.kind != TaskKind::Infomax) h.bias = &params.at(prefix + ".b");
  return h;
}

namespace {

ad::Var linear(const TaskHead& head, const ad::Var& x) {
  ad::Tape& t = x.tape();
  ad::Var out = ad::matmul(x, t.parameter(*head.weight));
  if (head.bias) out = ad::add_row(out, t.parameter(*head.bias));
  return out;
}

void require_pairs(const SslTask& task) {
  if (task.pairs.size() == 0)
    throw Error("SSL task " + std::string(task_name(task.kind)) + ": pair supervision missing");
}

}  // namespace

ad::Var task_loss(const SslTask& task, const TaskHead& head, const ad::Var& z, const ad::Var& z_corrupt) {
  if (!head.weight) throw Error("SSL task " + std::string(task_name(task.kind)) + ": head not initialised");
  switch (task.kind) {
    case TaskKind::Partition:
    case TaskKind::AttributeCluster:
      if (static_cast<Eigen::Index>(task.labels.size()) != z.rows())
        throw Error("SSL task " + std::string(task_name(task.kind)) + ": label supervision missing");
      return ad::softmax_cross_entropy(linear(head, z), task.labels);
    case TaskKind::PairDistance: {
      require_pairs(task);
      ad::Var diff = ad::abs(ad::gather_rows(z, task.pairs.first) - ad::gather_rows(z, task.pairs.second));
      return ad::softmax_cross_entropy(linear(head, diff), task.pairs.targets);
    }
    case TaskKind::PairSimilarity: {
      require_pairs(task);
      ad::Var prod = ad::hadamard(ad::gather_rows(z, task.pairs.first), ad::gather_rows(z, task.pairs.second));
      std::vector<double> targets(task.pairs.targets.begin(), task.pairs.targets.end());
      return ad::bce_with_logits(linear(head, prod), targets);
    }
    case TaskKind::Infomax: {
      if (!z_corrupt.valid()) throw Error("SSL task dgi: corrupted embeddings missing");
      ad::Tape& t = z.tape();
      ad::Var summary = ad::sigmoid(ad::mean_rows(z));
      ad::Var projected = ad::matmul(t.parameter(*head.weight), ad::transpose(summary));
      ad::Var pos = ad::matmul(z, projected);
      ad::Var neg = ad::matmul(z_corrupt, projected);
      ad::Var l_pos = ad::bce_with_logits(pos, std::vector<double>(static_cast<std::size_t>(pos.rows()), 1.0));
      ad::Var l_neg = ad::bce_with_logits(neg, std::vector<double>(static_cast<std::size_t>(neg.rows()), 0.0));
      return 0.5 * (l_pos + l_neg);
    }
  }
  throw Error("unknown task kind");
}

ad::Var ssl_total_loss(const SslTaskSet& tasks, const std::vector<TaskHead>& heads, const std::vector<ad::Var>& z,
                       const std::vector<ad::Var>& z_corrupt) {
  if (tasks.size() != z.size() || tasks.size() != heads.size() || tasks.size() != z_corrupt.size())
    throw Error("ssl_total_loss: " + std::to_string(tasks.size()) + " tasks but " + std::to_string(z.size()) +
                " embeddings");
  if (tasks.empty()) throw Error("ssl_total_loss: empty task set");
  ad::Var total = task_loss(tasks.tasks[0], heads[0], z[0], z_corrupt[0]);
  for (std::size_t k = 1; k < tasks.size(); ++k) total = total + task_loss(tasks.tasks[k], heads[k], z[k], z_corrupt[k]);
  return total;
}

void dump_supervision(const SslTaskSet& tasks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& t = tasks.tasks[k];
    const auto path = dir / ("ssl_" + std::to_string(k) + "_" + std::string(task_name(t.kind)) + ".csv");
    if (!t.labels.empty()) {
      csv::write_labels(path, t.labels, "label");
    } else if (t.pairs.size() > 0) {
      std::ofstream out(path);
      if (!out) throw Error("cannot write " + path.string());
      out << "first,second,target\n";
      for (std::size_t i = 0; i < t.pairs.size(); ++i)
        out << t.pairs.first[i] << ',' << t.pairs.second[i] << ',' << t.pairs.targets[i] << '\n';
    }
  }
}

}  // namespace dyfss
