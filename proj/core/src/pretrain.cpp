#include "dyfss/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dyfss/linalg.hpp"

namespace dyfss {

Matrix gcn_layer(const Matrix& z_in, const PreparedAdjacency& adj, const Matrix& w, Activation activation) {
  if (z_in.cols() != w.rows()) throw ShapeError("gcn_layer: input width differs from weight rows");
  if (z_in.rows() != adj.n_nodes()) throw ShapeError("gcn_layer: input rows differ from node count");
  Matrix out = spmm(adj.normalized, z_in * w);
  if (activation == Activation::Relu) out = out.cwiseMax(0.0);
  return out;
}

ad::Var gcn_layer(const ad::Var& z_in, const PreparedAdjacency& adj, const ad::Var& w, Activation activation) {
  if (z_in.cols() != w.rows()) throw ShapeError("gcn_layer: input width differs from weight rows");
  ad::Var out = ad::spmm(adj.normalized, ad::matmul(z_in, w));
  return activation == Activation::Relu ? ad::relu(out) : out;
}

Matrix Encoder::forward(const Matrix& x, const PreparedAdjacency& adj) const {
  if (x.cols() != layer1.rows())
    throw ShapeError("encoder expects " + std::to_string(layer1.rows()) + " input features, got " +
                     std::to_string(x.cols()));
  return gcn_layer(gcn_layer(x, adj, layer1, Activation::Relu), adj, layer2, Activation::Identity);
}

ReconstructionSample sample_reconstruction(const PreparedAdjacency& adj, std::mt19937_64& rng) {
  const SparseMatrix& a = adj.self_loop;
  const int n = adj.n_nodes();
  ReconstructionSample s;
  for (Eigen::Index i = 0; i < a.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(a, i); it; ++it) {
      s.first.push_back(static_cast<int>(i));
      s.second.push_back(static_cast<int>(it.col()));
      s.targets.push_back(1.0);
    }
  const std::size_t positives = s.first.size();
  const double zeros = static_cast<double>(n) * n - static_cast<double>(positives);
  if (zeros <= 0) return s;
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (std::size_t k = 0; k < positives; ++k) {
    int i = 0, j = 0;
    do {
      i = pick(rng);
      j = pick(rng);
    } while (a.coeff(i, j) != 0.0);
    s.first.push_back(i);
    s.second.push_back(j);
    s.targets.push_back(0.0);
  }
  return s;
}

ad::Var reconstruction_loss(const ad::Var& z, const PreparedAdjacency& adj, const ReconstructionSample& sample) {
  if (z.rows() != adj.n_nodes()) throw ShapeError("reconstruction_loss: embedding rows differ from node count");
  if (sample.full) return ad::bce_with_logits_dense(ad::matmul_nt(z, z), adj.self_loop);
  ad::Var logits = ad::row_sum(ad::hadamard(ad::gather_rows(z, sample.first), ad::gather_rows(z, sample.second)));
  return ad::bce_with_logits(logits, sample.targets);
}

double reconstruction_loss(const Matrix& z, const PreparedAdjacency& adj, const ReconstructionSample& sample) {
  ad::Tape tape;
  return reconstruction_loss(tape.constant(z), adj, sample).scalar();
}

std::vector<int> corruption_permutation(int n, std::uint64_t seed, std::uint64_t stage, int epoch) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, stream::kDgiCorruption, (stage << 32) | static_cast<std::uint32_t>(epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

namespace {

Matrix permute_rows(const Matrix& x, const std::vector<int>& perm) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
  return out;
}

void require_finite(double v, const std::string& term, int epoch) {
  if (!std::isfinite(v))
    throw Error("pretraining diverged at epoch " + std::to_string(epoch + 1) + ": " + term + " loss is " +
                std::to_string(v));
}

}  // namespace

PretrainResult pretrain(const Graph& g, const PreparedAdjacency& adj, const SslTaskSet& tasks,
                        const PretrainConfig& cfg) {
  if (cfg.epochs < 1) throw Error("pretrain: epochs must be at least 1");
  if (cfg.full_reconstruction && g.n_nodes() > 3000)
    throw Error("pretrain: full reconstruction is limited to graphs with at most 3000 nodes");

  auto init_rng = make_rng(cfg.seed, stream::kInit, 1);
  ParameterSet params;
  Parameter& w1 = params.add_uniform("encoder.w1", g.n_features(), cfg.hidden_dim, init_rng);
  Parameter& w2 = params.add_uniform("encoder.w2", cfg.hidden_dim, cfg.embedding_dim, init_rng);
  std::vector<TaskHead> heads;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    heads.push_back(add_task_head(params, head_prefix("pretrain", k, tasks.tasks[k].kind), tasks.tasks[k],
                                  cfg.embedding_dim, init_rng));
  const bool needs_corruption = std::any_of(tasks.tasks.begin(), tasks.tasks.end(),
                                            [](const SslTask& t) { return t.kind == TaskKind::Infomax; });

  PretrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    ad::Var v1 = tape.parameter(w1);
    ad::Var v2 = tape.parameter(w2);
    auto encode = [&](Matrix input) {
      ad::Var x = tape.constant(std::move(input));
      return gcn_layer(gcn_layer(x, adj, v1, Activation::Relu), adj, v2, Activation::Identity);
    };
    ad::Var z = encode(g.features);
    ad::Var z_corrupt;
    if (needs_corruption)
      z_corrupt = encode(permute_rows(g.features, corruption_permutation(g.n_nodes(), cfg.seed, 1, epoch)));

    ReconstructionSample sample;
    if (cfg.full_reconstruction) {
      sample = full_reconstruction();
    } else {
      auto rng = make_rng(cfg.seed, stream::kReconNegatives, static_cast<std::uint64_t>(epoch));
      sample = sample_reconstruction(adj, rng);
    }

    PretrainEpoch rec;
    ad::Var total = reconstruction_loss(z, adj, sample);
    rec.reconstruction = total.scalar();
    require_finite(rec.reconstruction, "reconstruction", epoch);
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      ad::Var lk = task_loss(tasks.tasks[k], heads[k], z, z_corrupt);
      rec.task_losses.push_back(lk.scalar());
      require_finite(lk.scalar(), std::string(task_name(tasks.tasks[k].kind)), epoch);
      total = total + cfg.ssl_weight * lk;
    }
    rec.total = total.scalar();
    require_finite(rec.total, "total", epoch);
    result.trace.push_back(std::move(rec));

    tape.backward(total);
    adam_step(params, cfg.lr);
  }

  result.encoder.layer1 = w1.value;
  result.encoder.layer2 = w2.value;
  result.z = result.encoder.forward(g.features, adj);
  return result;
}

}  // namespace dyfss
