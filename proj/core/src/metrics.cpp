#include "dyfss/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dyfss/cluster.hpp"

namespace dyfss {

namespace {

int n_predicted_ids(const ClusteringResult& r) {
  return r.predicted.empty() ? 0 : *std::max_element(r.predicted.begin(), r.predicted.end()) + 1;
}

double entropy(const Vector& counts, double n) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) h -= counts[i] / n * std::log(counts[i] / n);
  return h;
}

}  // namespace

ClusteringResult make_result(Labels predicted, Labels truth, int n_classes) {
  if (predicted.size() != truth.size()) throw Error("predicted and truth labellings differ in length");
  if (predicted.empty()) throw Error("empty labelling");
  for (int p : predicted)
    if (p < 0) throw Error("negative predicted id");
  int c = 0;
  for (int t : truth) {
    if (t < 0) throw Error("negative class id");
    c = std::max(c, t + 1);
  }
  if (n_classes == 0) n_classes = c;
  if (c > n_classes) throw Error("class id exceeds n_classes");
  return ClusteringResult{std::move(predicted), std::move(truth), n_classes};
}

Matrix confusion(const ClusteringResult& r) {
  const int size = std::max(n_predicted_ids(r), r.n_classes);
  Matrix m = Matrix::Zero(size, size);
  for (std::size_t i = 0; i < r.predicted.size(); ++i) m(r.predicted[i], r.truth[i]) += 1.0;
  return m;
}

// Maximum-agreement matching. Ties between optimal matchings are broken by
// the macro-F1 they induce, which is a per-pair sum 2·m_pc / (rows_p + cols_c);
// the F1 term is scaled below one match so it never changes the agreement.
std::vector<int> best_mapping(const ClusteringResult& r) {
  const Matrix m = confusion(r);
  const Vector rows = m.rowwise().sum();
  const Vector cols = m.colwise().sum().transpose();
  const double scale = 1.0 / (2.0 * static_cast<double>(m.rows() + 1));
  Matrix score = m;
  for (Eigen::Index p = 0; p < m.rows(); ++p)
    for (Eigen::Index c = 0; c < std::min<Eigen::Index>(m.cols(), r.n_classes); ++c)
      if (m(p, c) > 0) score(p, c) += scale * 2.0 * m(p, c) / (rows[p] + cols[c]);
  return hungarian(-score);
}

double clustering_accuracy(const ClusteringResult& r) {
  const Matrix m = confusion(r);
  const auto map = best_mapping(r);
  double matched = 0.0;
  for (std::size_t p = 0; p < map.size(); ++p) matched += m(static_cast<Eigen::Index>(p), map[p]);
  return matched / static_cast<double>(r.predicted.size());
}

double nmi(const ClusteringResult& r) {
  const Matrix m = confusion(r);
  const double n = static_cast<double>(r.predicted.size());
  const Vector rows = m.rowwise().sum();
  const Vector cols = m.colwise().sum().transpose();
  const double h_pred = entropy(rows, n);
  const double h_true = entropy(cols, n);
  if (h_pred <= 0.0 || h_true <= 0.0) return 0.0;
  double mi = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) > 0) mi += m(i, j) / n * std::log(n * m(i, j) / (rows[i] * cols[j]));
  return std::clamp(mi / (0.5 * (h_pred + h_true)), 0.0, 1.0);
}

double macro_f1(const ClusteringResult& r) {
  const auto map = best_mapping(r);
  std::vector<double> tp(r.n_classes, 0.0), predicted(r.n_classes, 0.0), actual(r.n_classes, 0.0);
  for (std::size_t i = 0; i < r.predicted.size(); ++i) {
    const int mapped = map[static_cast<std::size_t>(r.predicted[i])];
    const int truth = r.truth[i];
    actual[truth] += 1.0;
    if (mapped < r.n_classes) {
      predicted[mapped] += 1.0;
      if (mapped == truth) tp[truth] += 1.0;
    }
  }
  double total = 0.0;
  for (int c = 0; c < r.n_classes; ++c) {
    if (tp[c] == 0.0) continue;
    const double precision = tp[c] / predicted[c];
    const double recall = tp[c] / actual[c];
    total += 2.0 * precision * recall / (precision + recall);
  }
  return total / r.n_classes;
}

Metrics evaluate_all(const ClusteringResult& r) { return Metrics{clustering_accuracy(r), nmi(r), macro_f1(r)}; }

}  // namespace dyfss
