#pragma once

#include "dyfss/types.hpp"

namespace dyfss {

struct ClusteringResult {
  Labels predicted;
  Labels truth;
  int n_classes = 0;  // number of ground-truth classes C
};

/// Validates lengths and id ranges; builds a ClusteringResult with
/// n_classes = max(truth) + 1 when n_classes is 0.
ClusteringResult make_result(Labels predicted, Labels truth, int n_classes = 0);

/// Zero-padded square confusion matrix, rows = predicted id, cols = class.
Matrix confusion(const ClusteringResult& r);

/// Cluster → class mapping maximising agreement (Hungarian on negated counts).
/// Among equally good matchings the one with the highest macro F1 wins, so
/// the result does not depend on how predicted ids are numbered. Entry p gives the class for predicted id p; ids mapped to padding columns
/// get a value ≥ n_classes.
std::vector<int> best_mapping(const ClusteringResult& r);

double clustering_accuracy(const ClusteringResult& r);

/// Mutual information over the arithmetic mean of the two entropies. Returns
/// 0 when either labelling has zero entropy.
double nmi(const ClusteringResult& r);

/// Macro F1 over the n_classes true classes after the ACC matching; classes
/// that are never predicted contribute 0.
double macro_f1(const ClusteringResult& r);

struct Metrics {
  double acc = 0.0;
  double nmi = 0.0;
  double f1 = 0.0;
};

Metrics evaluate_all(const ClusteringResult& r);

}  // namespace dyfss
