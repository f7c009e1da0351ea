#pragma once

#include "dyfss/autodiff.hpp"
#include "dyfss/types.hpp"

namespace dyfss {

/// Student's t soft assignment (one degree of freedom):
/// q_ij ∝ (1 + ‖z_i − μ_j‖²)^{-1}, rows normalised.
Matrix soft_assign(const Matrix& z, const Matrix& centers);

/// High-confidence node subset. `threshold` is the nearest-rank m-th
/// percentile of the per-node maximum assignment score.
struct PseudoLabelSet {
  std::vector<int> nodes;     // M, ascending
  Labels raw_labels;          // Y restricted to M (argmax, ties to lowest)
  Labels aligned_labels;      // Y' restricted to M; empty until aligned
  double threshold = 0.0;     // γ
  double percentile = 50.0;   // m

  std::size_t size() const { return nodes.size(); }
  bool aligned() const { return aligned_labels.size() == nodes.size() && !nodes.empty(); }
};

/// Nearest-rank percentile: the ceil(m·N/100)-th smallest value (1-based,
/// at least the first).
double nearest_rank_percentile(std::vector<double> values, double m);

PseudoLabelSet select_pseudo_labels(const Matrix& q, double m);

/// Relabels Y through the maximum-agreement bijection between Y and the
/// reference clustering O on the selected nodes (Hungarian on negated
/// co-occurrence counts).
PseudoLabelSet align_labels(PseudoLabelSet pseudo, const Labels& reference, int n_clusters);

/// L_nl = −(1/|M|) Σ_{i∈M} log q̃_{i, y'_i}.
double pseudo_label_loss(const Matrix& q_fused, const PseudoLabelSet& pseudo);
ad::Var pseudo_label_loss(const ad::Var& q_fused, const PseudoLabelSet& pseudo);

/// Min-max scale each embedding dimension to [0,1], then cosine similarity of
/// every node pair.
Matrix structure_similarity(const Matrix& z_fused);
ad::Var structure_similarity(const ad::Var& z_fused);

/// Mean binary cross-entropy between S̃ and Ã over all N² entries.
double structure_loss(const Matrix& s, const SparseMatrix& self_loop);
ad::Var structure_loss(const ad::Var& s, const SparseMatrix& self_loop);

/// Structure loss on a sampled entry set for graphs too large for a dense
/// N×N similarity. Positives (entries of Ã) and zero entries are drawn in
/// equal numbers and reweighted by their true share of the N² entries, so the
/// estimate targets the dense mean.
struct StructureSample {
  std::vector<int> first;
  std::vector<int> second;
  std::vector<double> targets;
  std::vector<double> weights;
};
StructureSample sample_structure_entries(const SparseMatrix& self_loop, int n_samples, std::mt19937_64& rng);
ad::Var sampled_structure_loss(const ad::Var& z_fused, const StructureSample& sample);

/// Sharpened target p_ij = (q_ij² / f_j) / Σ_j' (q_ij'² / f_j'), f_j = Σ_i q_ij.
Matrix target_distribution(const Matrix& q);

/// KL(P ‖ Q̃)/N with P = target_distribution(Q̃) held constant.
double clustering_loss(const Matrix& q_fused);
ad::Var clustering_loss(const ad::Var& q_fused);

struct LossWeights {
  double ssl = 0.1;      // λ1
  double cluster = 1.0;  // λ2
};

/// L = L_nl + L_ns + λ1·L_ssl + λ2·L_pq.
double total_loss(double l_nl, double l_ns, double l_ssl, double l_pq, double lambda1, double lambda2);

}  // namespace dyfss
