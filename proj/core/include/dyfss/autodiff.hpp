#pragma once

// Minimal reverse-mode tape over dense matrices. The operation set is fixed
// to what the training objectives need; each op records its value and a
// closure that pushes the output gradient to its parents.

#include <functional>
#include <initializer_list>
#include <vector>

#include "dyfss/optim.hpp"
#include "dyfss/types.hpp"

namespace dyfss::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter; backward() adds its gradient to p.grad.
  Var parameter(Parameter& p);

  /// Appends an op node. `fn` is only invoked when some parent needs a
  /// gradient and the node received one.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward fn);
  Var record(Matrix value, const std::vector<Var>& parents, Backward fn);

  const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  /// Adds g to v's gradient; no-op for nodes that do not require one.
  void accumulate(const Var& v, const Matrix& g);

  /// Seeds d(root)/d(root) = 1 for a 1×1 root and runs the reverse sweep.
  /// A tape supports a single backward pass.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  void check_owner(const Var& v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * bᵀ
Var transpose(const Var& a);
/// s * b for a constant sparse s that must outlive the tape.
Var spmm(const SparseMatrix& s, const Var& b);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_row(const Var& a, const Var& row);  // broadcast 1×c over rows
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

// Shape.
Var gather_rows(const Var& a, const std::vector<int>& rows);
Var mean_rows(const Var& a);  // 1×c
Var row_sum(const Var& a);    // N×1
Var sum(const Var& a);        // 1×1
Var row_softmax(const Var& a);

// Graph-clustering specific.
/// Node-wise convex combination: out[i,:] = Σ_k gates[i,k] · experts[k][i,:].
Var fuse(const std::vector<Var>& experts, const Var& gates);
/// Student's t (one degree of freedom) soft assignment of rows of z to centers.
Var student_t(const Var& z, const Var& centers);
/// Per-column min-max scaling to [0,1]; constant columns map to 0.5.
Var minmax_scale_cols(const Var& a);
/// Cosine similarity of all row pairs; zero rows get 0 off-diagonal and 1 on
/// the diagonal.
Var cosine_similarity(const Var& a);
/// Rows scaled to unit L2 norm; zero rows stay zero.
Var row_normalize(const Var& a);

// Losses (all return 1×1).
/// Mean over rows of −log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
/// Mean of weight·(softplus(l) − t·l) over a column of logits; unit weights
/// when `weights` is empty (then normalised by the count, else by Σ weights).
Var bce_with_logits(const Var& logits, const std::vector<double>& targets, const std::vector<double>& weights = {});
/// Mean of softplus(l_ij) − a_ij·l_ij over every entry of a dense logit
/// matrix against sparse 0/1 targets.
Var bce_with_logits_dense(const Var& logits, const SparseMatrix& targets);
/// −(1/|rows|) Σ log max(q[r, label_r], 1e-12).
Var nll_selected(const Var& q, const std::vector<int>& rows, const std::vector<int>& labels);
/// (1/N) Σ p log(p / max(q, 1e-12)) with p held constant.
Var kl_to_target(const Var& q, const Matrix& target);
/// (1/N²) Σ_ij −a_ij log max(s_ij, ε) − (1 − a_ij) log max(1 − s_ij, ε).
Var structure_bce(const Var& s, const SparseMatrix& targets);
/// Weighted mean BCE on probabilities with the same clamping as structure_bce.
Var bce_probs(const Var& probs, const std::vector<double>& targets, const std::vector<double>& weights = {});

inline constexpr double kLogFloor = 1e-12;

}  // namespace dyfss::ad
