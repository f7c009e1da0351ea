#include "dyfss/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dyfss/linalg.hpp"

namespace dyfss::ad {

namespace {

double clamp_log(double x) { return std::log(std::max(x, kLogFloor)); }
// d/dx log max(x, ε)
double clamp_log_grad(double x) { return x >= kLogFloor ? 1.0 / x : 0.0; }

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     ")");
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): not a 1x1 value");
  return v(0, 0);
}

void Tape::check_owner(const Var& v) const {
  if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size()))
    throw Error("variable does not belong to this tape");
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward fn) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    check_owner(p);
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root) {
  check_owner(root);
  if (consumed_) throw Error("tape already consumed by a backward pass");
  consumed_ = true;
  if (nodes_[root.id_].value.size() != 1) throw ShapeError("backward: root must be 1x1");
  accumulate(root, scalar_matrix(1.0));
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param) n.param->grad += n.grad;
    if (n.backward) n.backward(*this, n.grad);
    n.grad = Matrix();
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Tape& t = a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: column counts differ");
  Tape& t = a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var transpose(const Var& a) {
  Tape& t = a.tape();
  return t.record(a.value().transpose(), {a},
                  [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var spmm(const SparseMatrix& s, const Var& b) {
  if (s.cols() != b.rows()) throw ShapeError("spmm: inner dimensions differ");
  Tape& t = b.tape();
  Matrix out = dyfss::spmm(s, b.value());
  return t.record(std::move(out), {b}, [&s, b](Tape& t, const Matrix& g) {
    Matrix gb = s.transpose() * g;
    t.accumulate(b, gb);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tape& t = a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tape& t = a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  Tape& t = a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double c) {
  Tape& t = a.tape();
  return t.record(c * a.value(), {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, c * g); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols");
  Tape& t = a.tape();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var relu(const Var& a) {
  Tape& t = a.tape();
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(const Var& a) {
  Tape& t = a.tape();
  Matrix out = a.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  Matrix saved = out;
  return t.record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(saved.cwiseProduct((1.0 - saved.array()).matrix())));
  });
}

Var abs(const Var& a) {
  Tape& t = a.tape();
  return t.record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    Matrix sign = a.value().unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    t.accumulate(a, g.cwiseProduct(sign));
  });
}

Var gather_rows(const Var& a, const std::vector<int>& rows) {
  Tape& t = a.tape();
  const Matrix& v = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= v.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = v.row(rows[r]);
  }
  return t.record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) ga.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(a, ga);
  });
}

Var mean_rows(const Var& a) {
  Tape& t = a.tape();
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  return t.record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g) {
    Matrix ga = g.replicate(a.rows(), 1) / n;
    t.accumulate(a, ga);
  });
}

Var row_sum(const Var& a) {
  Tape& t = a.tape();
  Matrix out = a.value().rowwise().sum();
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix ga = g.replicate(1, a.cols());
    t.accumulate(a, ga);
  });
}

Var sum(const Var& a) {
  Tape& t = a.tape();
  return t.record(scalar_matrix(a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var row_softmax(const Var& a) {
  Tape& t = a.tape();
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = a.value().row(i).maxCoeff();
    out.row(i) = (a.value().row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  Matrix saved = out;
  return t.record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix ga(saved.rows(), saved.cols());
    for (Eigen::Index i = 0; i < saved.rows(); ++i) {
      const double dot = g.row(i).dot(saved.row(i));
      ga.row(i) = saved.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.accumulate(a, ga);
  });
}

Var fuse(const std::vector<Var>& experts, const Var& gates) {
  if (experts.empty()) throw ShapeError("fuse: no experts");
  if (static_cast<std::size_t>(gates.cols()) != experts.size())
    throw ShapeError("fuse: gate columns must equal expert count");
  const Eigen::Index n = experts[0].rows(), d = experts[0].cols();
  for (const auto& e : experts)
    if (e.rows() != n || e.cols() != d) throw ShapeError("fuse: expert outputs differ in shape");
  if (gates.rows() != n) throw ShapeError("fuse: gate rows must equal node count");

  Tape& t = gates.tape();
  const Matrix& gv = gates.value();
  Matrix out = Matrix::Zero(n, d);
  for (std::size_t k = 0; k < experts.size(); ++k) {
    const Matrix& ev = experts[k].value();
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) += gv(i, static_cast<Eigen::Index>(k)) * ev.row(i);
  }
  std::vector<Var> parents = experts;
  parents.push_back(gates);
  return t.record(std::move(out), parents, [experts, gates](Tape& t, const Matrix& g) {
    const Matrix& gv = gates.value();
    Matrix ggates(gv.rows(), gv.cols());
    for (std::size_t k = 0; k < experts.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const Matrix& ev = experts[k].value();
      ggates.col(kk) = g.cwiseProduct(ev).rowwise().sum();
      if (t.requires_grad(experts[k])) {
        Matrix ge = g.array().colwise() * gv.col(kk).array();
        t.accumulate(experts[k], ge);
      }
    }
    t.accumulate(gates, ggates);
  });
}

Var student_t(const Var& z, const Var& centers) {
  if (z.cols() != centers.cols()) throw ShapeError("student_t: embedding and center dimensions differ");
  Tape& t = z.tape();
  const Matrix& zv = z.value();
  const Matrix& cv = centers.value();
  const Eigen::Index n = zv.rows(), c = cv.rows();
  Matrix kernel(n, c);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < c; ++j) kernel(i, j) = 1.0 / (1.0 + (zv.row(i) - cv.row(j)).squaredNorm());
  Vector totals = kernel.rowwise().sum();
  Matrix q = kernel.array().colwise() / totals.array();
  return t.record(q, {z, centers},
                  [z, centers, kernel = std::move(kernel), totals = std::move(totals), q](Tape& t, const Matrix& g) {
                    const Matrix& zv = z.value();
                    const Matrix& cv = centers.value();
                    Matrix gz = Matrix::Zero(zv.rows(), zv.cols());
                    Matrix gc = Matrix::Zero(cv.rows(), cv.cols());
                    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
                      const double inner = g.row(i).dot(q.row(i));
                      for (Eigen::Index j = 0; j < cv.rows(); ++j) {
                        // dL/dk_ij, then dk/dd = −k², dd/dz_i = 2(z_i − μ_j)
                        const double dk = (g(i, j) - inner) / totals[i];
                        const double dd = -dk * kernel(i, j) * kernel(i, j);
                        RowVector diff = zv.row(i) - cv.row(j);
                        gz.row(i) += 2.0 * dd * diff;
                        gc.row(j) -= 2.0 * dd * diff;
                      }
                    }
                    t.accumulate(z, gz);
                    t.accumulate(centers, gc);
                  });
}

Var minmax_scale_cols(const Var& a) {
  Tape& t = a.tape();
  const Matrix& v = a.value();
  const Eigen::Index n = v.rows(), d = v.cols();
  std::vector<Eigen::Index> argmin(d), argmax(d);
  Matrix out(n, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    Eigen::Index lo = 0, hi = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
      if (v(i, c) < v(lo, c)) lo = i;
      if (v(i, c) > v(hi, c)) hi = i;
    }
    argmin[c] = lo;
    argmax[c] = hi;
    const double range = v(hi, c) - v(lo, c);
    if (range > 0) {
      out.col(c) = (v.col(c).array() - v(lo, c)) / range;
    } else {
      out.col(c).setConstant(0.5);
    }
  }
  return t.record(std::move(out), {a}, [a, argmin, argmax](Tape& t, const Matrix& g) {
    const Matrix& v = a.value();
    Matrix ga = Matrix::Zero(v.rows(), v.cols());
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      const double lo = v(argmin[c], c), hi = v(argmax[c], c);
      const double range = hi - lo;
      if (!(range > 0)) continue;
      ga.col(c) = g.col(c) / range;
      // y = (x − lo)/(hi − lo): ∂y/∂lo = (x − hi)/r², ∂y/∂hi = −(x − lo)/r²
      const double r2 = range * range;
      ga(argmin[c], c) += (g.col(c).array() * (v.col(c).array() - hi)).sum() / r2;
      ga(argmax[c], c) -= (g.col(c).array() * (v.col(c).array() - lo)).sum() / r2;
    }
    t.accumulate(a, ga);
  });
}

Var row_normalize(const Var& a) {
  Tape& t = a.tape();
  const Matrix& v = a.value();
  Vector norms = v.rowwise().norm();
  Matrix u = Matrix::Zero(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (norms[i] > 0) u.row(i) = v.row(i) / norms[i];
  Matrix saved = u;
  return t.record(std::move(u), {a}, [a, norms = std::move(norms), u = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      if (norms[i] > 0) ga.row(i) = (g.row(i) - g.row(i).dot(u.row(i)) * u.row(i)) / norms[i];
    t.accumulate(a, ga);
  });
}

Var cosine_similarity(const Var& a) {
  Tape& t = a.tape();
  const Matrix& v = a.value();
  Vector norms = v.rowwise().norm();
  Matrix u = Matrix::Zero(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (norms[i] > 0) u.row(i) = v.row(i) / norms[i];
  Matrix s = u * u.transpose();
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (!(norms[i] > 0)) s(i, i) = 1.0;
  return t.record(std::move(s), {a}, [a, norms = std::move(norms), u = std::move(u)](Tape& t, const Matrix& g) {
    Matrix gu = (g + g.transpose()) * u;
    Matrix ga = Matrix::Zero(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      if (norms[i] > 0) ga.row(i) = (gu.row(i) - gu.row(i).dot(u.row(i)) * u.row(i)) / norms[i];
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw ShapeError("softmax_cross_entropy: one label per row required");
  if (labels.empty()) throw Error("softmax_cross_entropy: empty batch");
  Tape& t = logits.tape();
  const Matrix& l = logits.value();
  const double n = static_cast<double>(l.rows());
  Matrix probs(l.rows(), l.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= l.cols()) throw ShapeError("softmax_cross_entropy: label out of range");
    const double mx = l.row(i).maxCoeff();
    probs.row(i) = (l.row(i).array() - mx).exp();
    const double total = probs.row(i).sum();
    probs.row(i) /= total;
    loss += mx + std::log(total) - l(i, y);
  }
  return t.record(scalar_matrix(loss / n), {logits},
                  [logits, labels, probs = std::move(probs), n](Tape& t, const Matrix& g) {
                    Matrix gl = probs;
                    for (Eigen::Index i = 0; i < gl.rows(); ++i) gl(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                    gl *= g(0, 0) / n;
                    t.accumulate(logits, gl);
                  });
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets, const std::vector<double>& weights) {
  const Matrix& l = logits.value();
  if (l.cols() != 1 || static_cast<std::size_t>(l.rows()) != targets.size())
    throw ShapeError("bce_with_logits: expected a column of logits matching targets");
  if (!weights.empty() && weights.size() != targets.size()) throw ShapeError("bce_with_logits: weight count");
  if (targets.empty()) throw Error("bce_with_logits: empty batch");
  Tape& t = logits.tape();
  double norm = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double v = l(static_cast<Eigen::Index>(i), 0);
    loss += w * (softplus(v) - targets[i] * v);
    norm += w;
  }
  return t.record(scalar_matrix(loss / norm), {logits}, [logits, targets, weights, norm](Tape& t, const Matrix& g) {
    const Matrix& l = logits.value();
    Matrix gl(l.rows(), 1);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      gl(i, 0) = g(0, 0) * w * (stable_sigmoid(l(i, 0)) - targets[static_cast<std::size_t>(i)]) / norm;
    }
    t.accumulate(logits, gl);
  });
}

Var bce_with_logits_dense(const Var& logits, const SparseMatrix& targets) {
  const Matrix& l = logits.value();
  if (l.rows() != targets.rows() || l.cols() != targets.cols()) throw ShapeError("bce_with_logits_dense: shape mismatch");
  Tape& t = logits.tape();
  const double count = static_cast<double>(l.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < l.size(); ++i) loss += softplus(l.data()[i]);
  for (Eigen::Index i = 0; i < targets.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(targets, i); it; ++it) loss -= it.value() * l(i, it.col());
  return t.record(scalar_matrix(loss / count), {logits}, [logits, &targets, count](Tape& t, const Matrix& g) {
    Matrix gl = logits.value().unaryExpr([](double v) { return stable_sigmoid(v); });
    for (Eigen::Index i = 0; i < targets.outerSize(); ++i)
      for (SparseMatrix::InnerIterator it(targets, i); it; ++it) gl(i, it.col()) -= it.value();
    gl *= g(0, 0) / count;
    t.accumulate(logits, gl);
  });
}

Var nll_selected(const Var& q, const std::vector<int>& rows, const std::vector<int>& labels) {
  if (rows.size() != labels.size()) throw ShapeError("nll_selected: rows and labels differ in length");
  if (rows.empty()) throw Error("nll_selected: empty selection");
  Tape& t = q.tape();
  const Matrix& qv = q.value();
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= qv.rows() || labels[k] < 0 || labels[k] >= qv.cols())
      throw ShapeError("nll_selected: index out of range");
    loss -= clamp_log(qv(rows[k], labels[k]));
  }
  const double m = static_cast<double>(rows.size());
  return t.record(scalar_matrix(loss / m), {q}, [q, rows, labels, m](Tape& t, const Matrix& g) {
    const Matrix& qv = q.value();
    Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
      gq(rows[k], labels[k]) -= g(0, 0) * clamp_log_grad(qv(rows[k], labels[k])) / m;
    t.accumulate(q, gq);
  });
}

Var kl_to_target(const Var& q, const Matrix& target) {
  const Matrix& qv = q.value();
  if (qv.rows() != target.rows() || qv.cols() != target.cols()) throw ShapeError("kl_to_target: shape mismatch");
  Tape& t = q.tape();
  const double n = static_cast<double>(qv.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < qv.size(); ++i) {
    const double p = target.data()[i];
    if (p > 0) loss += p * (std::log(p) - clamp_log(qv.data()[i]));
  }
  return t.record(scalar_matrix(loss / n), {q}, [q, target, n](Tape& t, const Matrix& g) {
    const Matrix& qv = q.value();
    Matrix gq(qv.rows(), qv.cols());
    for (Eigen::Index i = 0; i < qv.size(); ++i)
      gq.data()[i] = -g(0, 0) * target.data()[i] * clamp_log_grad(qv.data()[i]) / n;
    t.accumulate(q, gq);
  });
}

Var structure_bce(const Var& s, const SparseMatrix& targets) {
  const Matrix& sv = s.value();
  if (sv.rows() != targets.rows() || sv.cols() != targets.cols()) throw ShapeError("structure_bce: shape mismatch");
  Tape& t = s.tape();
  const Eigen::Index n = sv.rows();
  const double count = static_cast<double>(sv.size());
  // Row-wise dense expansion of the sparse targets keeps memory at O(N).
  double loss = 0.0;
  RowVector a = RowVector::Zero(sv.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(targets, i); it; ++it) a[it.col()] = it.value();
    for (Eigen::Index j = 0; j < sv.cols(); ++j) {
      const double x = sv(i, j);
      loss += -a[j] * clamp_log(x) - (1.0 - a[j]) * clamp_log(1.0 - x);
    }
    for (SparseMatrix::InnerIterator it(targets, i); it; ++it) a[it.col()] = 0.0;
  }
  return t.record(scalar_matrix(loss / count), {s}, [s, &targets, count](Tape& t, const Matrix& g) {
    const Matrix& sv = s.value();
    Matrix gs(sv.rows(), sv.cols());
    RowVector a = RowVector::Zero(sv.cols());
    const double scale = g(0, 0) / count;
    for (Eigen::Index i = 0; i < sv.rows(); ++i) {
      for (SparseMatrix::InnerIterator it(targets, i); it; ++it) a[it.col()] = it.value();
      for (Eigen::Index j = 0; j < sv.cols(); ++j) {
        const double x = sv(i, j);
        gs(i, j) = scale * (-a[j] * clamp_log_grad(x) + (1.0 - a[j]) * clamp_log_grad(1.0 - x));
      }
      for (SparseMatrix::InnerIterator it(targets, i); it; ++it) a[it.col()] = 0.0;
    }
    t.accumulate(s, gs);
  });
}

Var bce_probs(const Var& probs, const std::vector<double>& targets, const std::vector<double>& weights) {
  const Matrix& p = probs.value();
  if (p.cols() != 1 || static_cast<std::size_t>(p.rows()) != targets.size())
    throw ShapeError("bce_probs: expected a column of probabilities matching targets");
  if (!weights.empty() && weights.size() != targets.size()) throw ShapeError("bce_probs: weight count");
  if (targets.empty()) throw Error("bce_probs: empty batch");
  Tape& t = probs.tape();
  double loss = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double x = p(static_cast<Eigen::Index>(i), 0);
    loss += w * (-targets[i] * clamp_log(x) - (1.0 - targets[i]) * clamp_log(1.0 - x));
    norm += w;
  }
  return t.record(scalar_matrix(loss / norm), {probs}, [probs, targets, weights, norm](Tape& t, const Matrix& g) {
    const Matrix& p = probs.value();
    Matrix gp(p.rows(), 1);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double w = weights.empty() ? 1.0 : weights[k];
      const double x = p(i, 0);
      gp(i, 0) = g(0, 0) * w * (-targets[k] * clamp_log_grad(x) + (1.0 - targets[k]) * clamp_log_grad(1.0 - x)) / norm;
    }
    t.accumulate(probs, gp);
  });
}

}  // namespace dyfss::ad
