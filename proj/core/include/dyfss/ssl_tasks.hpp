#pragma once

#include <string>
#include <string_view>

#include "dyfss/autodiff.hpp"
#include "dyfss/graph.hpp"
#include "dyfss/optim.hpp"

namespace dyfss {

enum class TaskKind { Partition, AttributeCluster, PairDistance, PairSimilarity, Infomax };

/// Short lowercase name: par, clu, pairdis, pairsim, dgi.
std::string_view task_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct PairSample {
  std::vector<int> first;
  std::vector<int> second;
  std::vector<int> targets;  // class id (PAIRDIS) or 0/1 (PAIRSIM)

  std::size_t size() const { return first.size(); }
};

struct SslTask {
  TaskKind kind = TaskKind::Partition;
  Labels labels;      // PAR and CLU
  PairSample pairs;   // PAIRDIS and PAIRSIM
  int n_outputs = 1;  // head output width
};

struct SslConfig {
  std::vector<TaskKind> kinds = {TaskKind::Partition, TaskKind::AttributeCluster, TaskKind::PairDistance,
                                 TaskKind::PairSimilarity, TaskKind::Infomax};
  int n_parts = 10;
  int clu_clusters = 10;
  int pairdis_max_hop = 4;
  int pairdis_pairs_per_node = 4;
  int pairsim_pairs_per_node = 1;
};

struct SslTaskSet {
  std::vector<SslTask> tasks;

  std::size_t size() const { return tasks.size(); }
  bool empty() const { return tasks.empty(); }
};

/// Graph partition labels from seeded multi-source BFS growth. Seeds are the
/// highest-degree nodes (seeded tie-break) kept at least three hops apart,
/// relaxing to two hops and then to none if too few qualify. Parts claim one
/// frontier node per round; nodes no frontier reaches go to the currently
/// smallest part.
Labels make_par_labels(const Graph& g, int n_parts, std::uint64_t seed);

/// k-means (10 restarts) on the raw feature matrix.
Labels make_clu_labels(const Matrix& x, int n_clusters, std::uint64_t seed);

/// Hop-distance class of a pair: min(hops, max_hop) − 1; disconnected pairs
/// fall into the last class.
int pair_distance_class(const std::vector<std::vector<int>>& neighbours, int i, int j, int max_hop);

/// Class-balanced pairs: per anchor, one node from each BFS shell below
/// max_hop and one node outside the ball, until every class holds
/// n_pairs / max_hop pairs (or the attempt budget runs out).
PairSample sample_pairdis(const Graph& g, int n_pairs, int max_hop, std::uint64_t seed);

/// For every anchor: a positive drawn from its top-3 feature-cosine
/// neighbours (ties to the lower index) and a negative drawn uniformly from
/// the remaining non-anchor nodes.
PairSample sample_pairsim(const Graph& g, int n_pairs_per_node, std::uint64_t seed);

/// Generates the supervision for every configured task. Deterministic in
/// (g, cfg, seed).
SslTaskSet make_task_set(const Graph& g, const SslConfig& cfg, std::uint64_t seed);

/// Linear head on one task. DGI uses a bilinear weight and no bias.
struct TaskHead {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

std::string head_prefix(const std::string& scope, std::size_t index, TaskKind kind);

TaskHead add_task_head(ParameterSet& params, const std::string& prefix, const SslTask& task, int dim,
                       std::mt19937_64& rng);
TaskHead find_task_head(ParameterSet& params, const std::string& prefix, const SslTask& task);

/// Task loss on the embeddings this task reads. `z_corrupt` is the same
/// encoder applied to row-permuted input and is required for DGI only.
ad::Var task_loss(const SslTask& task, const TaskHead& head, const ad::Var& z, const ad::Var& z_corrupt = {});

/// Unweighted sum of per-task losses; one embedding (and corruption, for DGI)
/// per task.
ad::Var ssl_total_loss(const SslTaskSet& tasks, const std::vector<TaskHead>& heads, const std::vector<ad::Var>& z,
                       const std::vector<ad::Var>& z_corrupt);

/// Writes every task's supervision as CSV into `dir` (one file per task).
void dump_supervision(const SslTaskSet& tasks, const std::filesystem::path& dir);

}  // namespace dyfss
