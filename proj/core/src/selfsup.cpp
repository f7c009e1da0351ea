#include "dyfss/selfsup.hpp"

#include <algorithm>
#include <cmath>

#include "dyfss/cluster.hpp"

namespace dyfss {

namespace {

template <typename Fn>
Matrix evaluate_constant(const Matrix& input, Fn&& fn) {
  ad::Tape tape;
  return fn(tape.constant(input)).value();
}

}  // namespace

Matrix soft_assign(const Matrix& z, const Matrix& centers) {
  ad::Tape tape;
  return ad::student_t(tape.constant(z), tape.constant(centers)).value();
}

double nearest_rank_percentile(std::vector<double> values, double m) {
  if (values.empty()) throw Error("percentile of an empty set");
  if (!(m > 0.0 && m < 100.0)) throw Error("percentile m must lie in (0, 100)");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(m * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

PseudoLabelSet select_pseudo_labels(const Matrix& q, double m) {
  std::vector<double> row_max(static_cast<std::size_t>(q.rows()));
  Labels argmax(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < q.cols(); ++j)
      if (q(i, j) > q(i, best)) best = j;
    row_max[static_cast<std::size_t>(i)] = q(i, best);
    argmax[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  PseudoLabelSet out;
  out.percentile = m;
  out.threshold = nearest_rank_percentile(row_max, m);
  for (std::size_t i = 0; i < row_max.size(); ++i)
    if (row_max[i] >= out.threshold) {
      out.nodes.push_back(static_cast<int>(i));
      out.raw_labels.push_back(argmax[i]);
    }
  return out;
}

PseudoLabelSet align_labels(PseudoLabelSet pseudo, const Labels& reference, int n_clusters) {
  Matrix counts = Matrix::Zero(n_clusters, n_clusters);
  for (std::size_t k = 0; k < pseudo.nodes.size(); ++k) {
    const int y = pseudo.raw_labels[k];
    const int o = reference.at(static_cast<std::size_t>(pseudo.nodes[k]));
    if (y < 0 || y >= n_clusters || o < 0 || o >= n_clusters) throw Error("align_labels: label out of range");
    counts(y, o) += 1.0;
  }
  const auto map = hungarian(-counts);
  pseudo.aligned_labels.resize(pseudo.raw_labels.size());
  for (std::size_t k = 0; k < pseudo.raw_labels.size(); ++k)
    pseudo.aligned_labels[k] = map[static_cast<std::size_t>(pseudo.raw_labels[k])];
  return pseudo;
}

ad::Var pseudo_label_loss(const ad::Var& q_fused, const PseudoLabelSet& pseudo) {
  if (pseudo.nodes.empty()) throw Error("pseudo_label_loss: empty pseudo-label set");
  if (!pseudo.aligned()) throw Error("pseudo_label_loss: pseudo labels are not aligned");
  return ad::nll_selected(q_fused, pseudo.nodes, pseudo.aligned_labels);
}

double pseudo_label_loss(const Matrix& q_fused, const PseudoLabelSet& pseudo) {
  return evaluate_constant(q_fused, [&](const ad::Var& q) { return pseudo_label_loss(q, pseudo); })(0, 0);
}

ad::Var structure_similarity(const ad::Var& z_fused) {
  if (z_fused.rows() < 2) throw Error("structure_similarity: need at least two nodes");
  return ad::cosine_similarity(ad::minmax_scale_cols(z_fused));
}

Matrix structure_similarity(const Matrix& z_fused) {
  return evaluate_constant(z_fused, [](const ad::Var& z) { return structure_similarity(z); });
}

ad::Var structure_loss(const ad::Var& s, const SparseMatrix& self_loop) { return ad::structure_bce(s, self_loop); }

double structure_loss(const Matrix& s, const SparseMatrix& self_loop) {
  return evaluate_constant(s, [&](const ad::Var& v) { return structure_loss(v, self_loop); })(0, 0);
}

StructureSample sample_structure_entries(const SparseMatrix& self_loop, int n_samples, std::mt19937_64& rng) {
  const Eigen::Index n = self_loop.rows();
  const double total = static_cast<double>(n) * static_cast<double>(n);
  const double positives = static_cast<double>(self_loop.nonZeros());
  const int half = std::max(1, n_samples / 2);

  std::vector<std::pair<int, int>> entries;
  entries.reserve(static_cast<std::size_t>(self_loop.nonZeros()));
  for (Eigen::Index i = 0; i < self_loop.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(self_loop, i); it; ++it)
      entries.emplace_back(static_cast<int>(i), static_cast<int>(it.col()));

  StructureSample s;
  std::uniform_int_distribution<std::size_t> pick_entry(0, entries.size() - 1);
  for (int k = 0; k < half; ++k) {
    auto [i, j] = entries[pick_entry(rng)];
    s.first.push_back(i);
    s.second.push_back(j);
    s.targets.push_back(1.0);
    s.weights.push_back(positives / half);
  }
  if (total > positives) {
    std::uniform_int_distribution<int> pick_node(0, static_cast<int>(n) - 1);
    for (int k = 0; k < half; ++k) {
      int i = 0, j = 0;
      do {
        i = pick_node(rng);
        j = pick_node(rng);
      } while (self_loop.coeff(i, j) != 0.0);
      s.first.push_back(i);
      s.second.push_back(j);
      s.targets.push_back(0.0);
      s.weights.push_back((total - positives) / half);
    }
  }
  return s;
}

ad::Var sampled_structure_loss(const ad::Var& z_fused, const StructureSample& sample) {
  ad::Var unit = ad::row_normalize(ad::minmax_scale_cols(z_fused));
  ad::Var cos = ad::row_sum(ad::hadamard(ad::gather_rows(unit, sample.first), ad::gather_rows(unit, sample.second)));
  return ad::bce_probs(cos, sample.targets, sample.weights);
}

Matrix target_distribution(const Matrix& q) {
  const RowVector freq = q.colwise().sum();
  Matrix p(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) p(i, j) = freq[j] > 0 ? q(i, j) * q(i, j) / freq[j] : 0.0;
    const double total = p.row(i).sum();
    if (total > 0) p.row(i) /= total;
  }
  return p;
}

ad::Var clustering_loss(const ad::Var& q_fused) { return ad::kl_to_target(q_fused, target_distribution(q_fused.value())); }

double clustering_loss(const Matrix& q_fused) {
  return evaluate_constant(q_fused, [](const ad::Var& q) { return clustering_loss(q); })(0, 0);
}

double total_loss(double l_nl, double l_ns, double l_ssl, double l_pq, double lambda1, double lambda2) {
  return l_nl + l_ns + lambda1 * l_ssl + lambda2 * l_pq;
}

}  // namespace dyfss
