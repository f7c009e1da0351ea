#include "dyfss/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include "dyfss/csv.hpp"

namespace dyfss {

namespace {

std::string where(const std::filesystem::path& file, long line_no) {
  return file.string() + ":" + std::to_string(line_no) + ": ";
}

bool is_header(std::string_view line) {
  const auto fields = csv::split(line);
  double v = 0;
  return !fields.empty() && !csv::parse_double(fields[0], v);
}

void check_features(const Matrix& x) {
  if (!x.allFinite()) throw Error("feature matrix contains NaN or Inf");
}

}  // namespace

int Graph::n_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

std::vector<std::vector<int>> Graph::neighbours() const {
  std::vector<std::vector<int>> adj(n_nodes());
  for (int i = 0; i < adjacency.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) adj[i].push_back(static_cast<int>(it.col()));
  return adj;
}

Graph make_graph(Matrix features, const std::vector<std::pair<int, int>>& edges, std::optional<Labels> labels) {
  check_features(features);
  const int n = static_cast<int>(features.rows());
  if (labels) {
    if (static_cast<int>(labels->size()) != n) throw Error("labels must cover every node");
    for (int l : *labels)
      if (l < 0) throw Error("labels must be non-negative");
  }
  std::vector<std::pair<int, int>> sym;
  sym.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw Error("edge (" + std::to_string(u) + "," + std::to_string(v) + ") references unknown node");
    if (u == v) continue;
    sym.emplace_back(u, v);
    sym.emplace_back(v, u);
  }
  std::sort(sym.begin(), sym.end());
  sym.erase(std::unique(sym.begin(), sym.end()), sym.end());

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(sym.size());
  for (auto [u, v] : sym) triplets.emplace_back(u, v, 1.0);
  Graph g;
  g.features = std::move(features);
  g.adjacency.resize(n, n);
  g.adjacency.setFromTriplets(triplets.begin(), triplets.end());
  g.adjacency.makeCompressed();
  g.labels = std::move(labels);
  return g;
}

Graph load_graph(const std::filesystem::path& node_file, const std::filesystem::path& edge_file,
                 const std::optional<std::filesystem::path>& label_file) {
  std::ifstream nodes(node_file);
  if (!nodes) throw Error("cannot open node file " + node_file.string());

  std::map<long, std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  std::size_t width = 0;
  while (std::getline(nodes, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line_no == 1 && is_header(line)) continue;
    const auto fields = csv::split(line);
    long id = 0;
    if (!csv::parse_int(fields[0], id) || id < 0) throw Error(where(node_file, line_no) + "bad node id");
    std::vector<double> feats;
    feats.reserve(fields.size() - 1);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      double v = 0;
      if (!csv::parse_double(fields[c], v) || !std::isfinite(v))
        throw Error(where(node_file, line_no) + "bad feature value '" + std::string(fields[c]) + "'");
      feats.push_back(v);
    }
    if (rows.empty()) {
      width = feats.size();
    } else if (feats.size() != width) {
      throw Error(where(node_file, line_no) + "ragged feature row: expected " + std::to_string(width) +
                  " features, got " + std::to_string(feats.size()));
    }
    if (!rows.emplace(id, std::move(feats)).second)
      throw Error(where(node_file, line_no) + "duplicate node id " + std::to_string(id));
  }
  const long n = static_cast<long>(rows.size());
  if (n == 0) throw Error("node file " + node_file.string() + " has no nodes");
  if (rows.rbegin()->first != n - 1) throw Error("node ids in " + node_file.string() + " are not dense 0..N-1");

  Matrix x(n, static_cast<Eigen::Index>(width));
  for (const auto& [id, feats] : rows)
    for (std::size_t c = 0; c < width; ++c) x(id, static_cast<Eigen::Index>(c)) = feats[c];

  std::ifstream edge_in(edge_file);
  if (!edge_in) throw Error("cannot open edge file " + edge_file.string());
  std::vector<std::pair<int, int>> edges;
  line_no = 0;
  while (std::getline(edge_in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line_no == 1 && is_header(line)) continue;
    const auto fields = csv::split(line);
    long u = 0, v = 0;
    if (fields.size() != 2 || !csv::parse_int(fields[0], u) || !csv::parse_int(fields[1], v))
      throw Error(where(edge_file, line_no) + "expected 'u,v'");
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw Error(where(edge_file, line_no) + "edge references unknown node id");
    edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
  }

  std::optional<Labels> labels;
  if (label_file) {
    std::ifstream lab(*label_file);
    if (!lab) throw Error("cannot open label file " + label_file->string());
    Labels l(n, -1);
    line_no = 0;
    while (std::getline(lab, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (line_no == 1 && is_header(line)) continue;
      const auto fields = csv::split(line);
      long id = 0, c = 0;
      if (fields.size() != 2 || !csv::parse_int(fields[0], id) || !csv::parse_int(fields[1], c) || c < 0)
        throw Error(where(*label_file, line_no) + "expected 'node_id,label'");
      if (id < 0 || id >= n) throw Error(where(*label_file, line_no) + "label for unknown node id");
      if (l[id] != -1) throw Error(where(*label_file, line_no) + "duplicate node id " + std::to_string(id));
      l[id] = static_cast<int>(c);
    }
    for (long i = 0; i < n; ++i)
      if (l[i] < 0) throw Error("label file " + label_file->string() + " has no label for node " + std::to_string(i));
    labels = std::move(l);
  }
  return make_graph(std::move(x), edges, std::move(labels));
}

void save_graph(const Graph& g, const std::filesystem::path& node_file, const std::filesystem::path& edge_file,
                const std::optional<std::filesystem::path>& label_file) {
  {
    std::ofstream out(node_file);
    if (!out) throw Error("cannot open " + node_file.string() + " for writing");
    for (int i = 0; i < g.n_nodes(); ++i) {
      out << i;
      for (int c = 0; c < g.n_features(); ++c) out << ',' << csv::format_double(g.features(i, c));
      out << '\n';
    }
  }
  {
    std::ofstream out(edge_file);
    if (!out) throw Error("cannot open " + edge_file.string() + " for writing");
    for (int i = 0; i < g.adjacency.outerSize(); ++i)
      for (SparseMatrix::InnerIterator it(g.adjacency, i); it; ++it)
        if (it.col() > i) out << i << ',' << it.col() << '\n';
  }
  if (label_file) {
    if (!g.labels) throw Error("graph has no labels to write");
    csv::write_labels(*label_file, *g.labels, "label");
  }
}

PreparedAdjacency normalize_adjacency(const Graph& g) {
  const int n = g.n_nodes();
  PreparedAdjacency p;
  SparseMatrix eye(n, n);
  eye.setIdentity();
  p.self_loop = g.adjacency + eye;
  p.self_loop.makeCompressed();

  p.degree = Vector::Zero(n);
  for (int i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(p.self_loop, i); it; ++it) p.degree[i] += it.value();

  p.normalized = p.self_loop;
  for (int i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(p.normalized, i); it; ++it)
      it.valueRef() = it.value() / std::sqrt(p.degree[i] * p.degree[it.col()]);
  return p;
}

Graph generate_sbm(const SbmSpec& spec) {
  if (spec.blocks < 1) throw Error("sbm: need at least one block");
  if (spec.nodes_per_block < 1) throw Error("sbm: zero nodes per block");
  if (!(spec.p_out >= 0.0 && spec.p_out < spec.p_in && spec.p_in <= 1.0))
    throw Error("sbm: require 0 <= p_out < p_in <= 1");
  if (spec.feature_dim < spec.blocks) throw Error("sbm: feature_dim must be >= blocks");

  const int n = spec.blocks * spec.nodes_per_block;
  auto rng = make_rng(spec.seed, stream::kSbm);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  Labels labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i / spec.nodes_per_block;

  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double p = labels[i] == labels[j] ? spec.p_in : spec.p_out;
      if (unit(rng) < p) edges.emplace_back(i, j);
    }

  // Feature columns are split into `blocks` contiguous groups; a node's mean
  // is feature_shift on its block's group.
  Matrix x(n, spec.feature_dim);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < spec.feature_dim; ++c) {
      const int owner = static_cast<int>(static_cast<long>(c) * spec.blocks / spec.feature_dim);
      x(i, c) = noise(rng) + (owner == labels[i] ? spec.feature_shift : 0.0);
    }
  return make_graph(std::move(x), edges, std::move(labels));
}

}  // namespace dyfss
