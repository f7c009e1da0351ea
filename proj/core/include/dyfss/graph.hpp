#pragma once

#include <filesystem>
#include <optional>

#include "dyfss/types.hpp"

namespace dyfss {

/// Attributed, undirected, unweighted graph. Adjacency is symmetric 0/1 with
/// an empty diagonal; labels are ground truth used only for evaluation.
struct Graph {
  Matrix features;
  SparseMatrix adjacency;
  std::optional<Labels> labels;

  int n_nodes() const { return static_cast<int>(features.rows()); }
  int n_features() const { return static_cast<int>(features.cols()); }
  // Number of distinct ground-truth classes (max label + 1), 0 without labels.
  int n_classes() const;
  long n_edges() const { return adjacency.nonZeros() / 2; }

  // Neighbour lists in ascending order, derived from the adjacency.
  std::vector<std::vector<int>> neighbours() const;
};

/// Derived adjacency operators: Ã = A + I, its degrees, and
/// Â = D̃^{-1/2} Ã D̃^{-1/2}.
struct PreparedAdjacency {
  SparseMatrix self_loop;
  Vector degree;
  SparseMatrix normalized;

  int n_nodes() const { return static_cast<int>(self_loop.rows()); }
};

/// Builds a graph from an undirected edge list. Duplicates and reversed
/// duplicates collapse to one symmetric pair; self loops are dropped.
Graph make_graph(Matrix features, const std::vector<std::pair<int, int>>& edges,
                 std::optional<Labels> labels = std::nullopt);

/// Reads `node_id,f_1,...,f_d` rows, `u,v` edge rows and optional
/// `node_id,label` rows. A leading non-numeric header line is skipped in each
/// file. Errors name the file and line.
Graph load_graph(const std::filesystem::path& node_file, const std::filesystem::path& edge_file,
                 const std::optional<std::filesystem::path>& label_file = std::nullopt);

/// Writes the three CSV files read by load_graph. Each undirected edge is
/// written once as (u, v) with u < v. Features use 17 significant digits.
void save_graph(const Graph& g, const std::filesystem::path& node_file,
                const std::filesystem::path& edge_file,
                const std::optional<std::filesystem::path>& label_file = std::nullopt);

PreparedAdjacency normalize_adjacency(const Graph& g);

struct SbmSpec {
  int blocks = 3;
  int nodes_per_block = 50;
  double p_in = 0.2;
  double p_out = 0.01;
  int feature_dim = 16;
  double feature_shift = 1.0;
  std::uint64_t seed = 0;
};

/// Planted-partition graph: node i belongs to block i / nodes_per_block. Each
/// pair is an edge independently with p_in (same block) or p_out. Feature
/// columns are split into `blocks` contiguous groups; features are
/// feature_shift on the node's own group plus N(0, I).
Graph generate_sbm(const SbmSpec& spec);

}  // namespace dyfss
