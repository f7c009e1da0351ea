#include "dyfss/fusion.hpp"

#include "dyfss/linalg.hpp"

namespace dyfss {

namespace {
std::string expert_name(int k) { return "fusion.expert" + std::to_string(k); }
}  // namespace

FusionNetwork add_fusion_network(ParameterSet& params, int n_experts, int dim, Activation activation,
                                 std::mt19937_64& rng) {
  if (n_experts < 1) throw Error("fusion network needs at least one expert");
  FusionNetwork net;
  net.activation = activation;
  for (int k = 0; k < n_experts; ++k) net.experts.push_back(&params.add_uniform(expert_name(k), dim, dim, rng));
  net.gate = &params.add_uniform("fusion.gate", dim, n_experts, rng);
  return net;
}

FusionNetwork find_fusion_network(ParameterSet& params, int n_experts, Activation activation) {
  FusionNetwork net;
  net.activation = activation;
  for (int k = 0; k < n_experts; ++k) net.experts.push_back(&params.at(expert_name(k)));
  net.gate = &params.at("fusion.gate");
  for (const Parameter* e : net.experts)
    if (e->value.rows() != net.dim() || e->value.cols() != net.dim())
      throw ShapeError("fusion: expert weights must be d'×d' with d' = " + std::to_string(net.dim()));
  if (net.gate->value.cols() != n_experts) throw ShapeError("fusion: gate width differs from expert count");
  return net;
}

Matrix expert_forward(const Matrix& z, const PreparedAdjacency& adj, const FusionNetwork& net, int k) {
  if (k < 0 || k >= net.n_experts()) throw Error("expert index " + std::to_string(k) + " out of range");
  const Matrix& w = net.experts[static_cast<std::size_t>(k)]->value;
  if (z.cols() != w.rows()) throw ShapeError("expert_forward: embedding width differs from expert input");
  Matrix out = spmm(adj.normalized, z * w);
  if (net.activation == Activation::Relu) out = out.cwiseMax(0.0);
  return out;
}

Matrix gate(const Matrix& z, const FusionNetwork& net) {
  if (z.cols() != net.gate->value.rows()) throw ShapeError("gate: embedding width differs from gate input");
  return softmax_rows(z * net.gate->value);
}

Matrix fuse(const std::vector<Matrix>& expert_outputs, const Matrix& gates) {
  if (expert_outputs.empty() || static_cast<Eigen::Index>(expert_outputs.size()) != gates.cols())
    throw ShapeError("fuse: expert count differs from gate width");
  const auto& first = expert_outputs.front();
  if (gates.rows() != first.rows()) throw ShapeError("fuse: gate rows differ from node count");
  Matrix out = Matrix::Zero(first.rows(), first.cols());
  for (std::size_t k = 0; k < expert_outputs.size(); ++k) {
    const auto& e = expert_outputs[k];
    if (e.rows() != first.rows() || e.cols() != first.cols()) throw ShapeError("fuse: expert outputs differ in shape");
    for (Eigen::Index i = 0; i < e.rows(); ++i) out.row(i) += gates(i, static_cast<Eigen::Index>(k)) * e.row(i);
  }
  return out;
}

ad::Var expert_forward(ad::Tape& tape, const ad::Var& z, const PreparedAdjacency& adj, const FusionNetwork& net,
                       int k) {
  if (k < 0 || k >= net.n_experts()) throw Error("expert index " + std::to_string(k) + " out of range");
  ad::Var out = ad::spmm(adj.normalized, ad::matmul(z, tape.parameter(*net.experts[static_cast<std::size_t>(k)])));
  return net.activation == Activation::Relu ? ad::relu(out) : out;
}

FusionVars fusion_forward(ad::Tape& tape, const ad::Var& z, const PreparedAdjacency& adj, const FusionNetwork& net) {
  FusionVars v;
  for (int k = 0; k < net.n_experts(); ++k) v.experts.push_back(expert_forward(tape, z, adj, net, k));
  v.gates = ad::row_softmax(ad::matmul(z, tape.parameter(*net.gate)));
  v.fused = ad::fuse(v.experts, v.gates);
  return v;
}

}  // namespace dyfss
