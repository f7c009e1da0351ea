#pragma once

#include "dyfss/types.hpp"

namespace dyfss {

/// Sparse-dense product a * b.
Matrix spmm(const SparseMatrix& a, const Matrix& b);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

/// ‖x_i − c_j‖² for every row of x against every row of centers, evaluated
/// directly (no expansion) so that argmin decisions are exact.
Matrix squared_distances(const Matrix& x, const Matrix& centers);

/// Index of the largest entry of each row; ties resolve to the lowest index.
Labels argmax_rows(const Matrix& m);

/// Dense copy of a sparse matrix (tests and small-graph paths).
Matrix to_dense(const SparseMatrix& s);

}  // namespace dyfss
