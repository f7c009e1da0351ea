#include "dyfss/linalg.hpp"

namespace dyfss {

Matrix spmm(const SparseMatrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("spmm: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(a, i); it; ++it) out.row(i).noalias() += it.value() * b.row(it.col());
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out.row(i) = (m.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix squared_distances(const Matrix& x, const Matrix& centers) {
  if (x.cols() != centers.cols()) throw ShapeError("squared_distances: dimension mismatch");
  Matrix d(x.rows(), centers.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < centers.rows(); ++j) d(i, j) = (x.row(i) - centers.row(j)).squaredNorm();
  return d;
}

Labels argmax_rows(const Matrix& m) {
  Labels out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j)
      if (m(i, j) > m(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Matrix to_dense(const SparseMatrix& s) { return Matrix(s); }

}  // namespace dyfss
