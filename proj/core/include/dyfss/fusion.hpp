#pragma once

#include <string>

#include "dyfss/autodiff.hpp"
#include "dyfss/graph.hpp"
#include "dyfss/optim.hpp"

namespace dyfss {

enum class Activation { Relu, Identity };

/// Mixture-of-experts fusion over K single-layer GCN experts. Parameters live
/// in a ParameterSet under "fusion.expert<k>" (d'×d') and "fusion.gate"
/// (d'×K); this struct holds non-owning handles.
struct FusionNetwork {
  std::vector<Parameter*> experts;
  Parameter* gate = nullptr;
  Activation activation = Activation::Relu;

  int n_experts() const { return static_cast<int>(experts.size()); }
  int dim() const { return gate ? static_cast<int>(gate->value.rows()) : 0; }
};

FusionNetwork add_fusion_network(ParameterSet& params, int n_experts, int dim, Activation activation,
                                 std::mt19937_64& rng);
FusionNetwork find_fusion_network(ParameterSet& params, int n_experts, Activation activation);

/// φ(Â Z W^(k)).
Matrix expert_forward(const Matrix& z, const PreparedAdjacency& adj, const FusionNetwork& net, int k);

/// softmax(Z W_n), row-wise.
Matrix gate(const Matrix& z, const FusionNetwork& net);

/// z̃_i = Σ_k gates(i,k) · expert_outputs[k](i,:).
Matrix fuse(const std::vector<Matrix>& expert_outputs, const Matrix& gates);

/// Forward pass on a tape. Z is a constant input (the frozen pretrained
/// embedding); gradients reach expert and gate weights.
struct FusionVars {
  std::vector<ad::Var> experts;
  ad::Var gates;
  ad::Var fused;
};
FusionVars fusion_forward(ad::Tape& tape, const ad::Var& z, const PreparedAdjacency& adj, const FusionNetwork& net);

/// Expert k applied to an already-bound input (used for DGI corruption).
ad::Var expert_forward(ad::Tape& tape, const ad::Var& z, const PreparedAdjacency& adj, const FusionNetwork& net, int k);

}  // namespace dyfss
