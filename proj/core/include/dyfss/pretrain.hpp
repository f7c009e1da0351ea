#pragma once

#include "dyfss/autodiff.hpp"
#include "dyfss/fusion.hpp"
#include "dyfss/graph.hpp"
#include "dyfss/optim.hpp"
#include "dyfss/ssl_tasks.hpp"

namespace dyfss {

/// act(Â · z_in · w).
Matrix gcn_layer(const Matrix& z_in, const PreparedAdjacency& adj, const Matrix& w, Activation activation);
ad::Var gcn_layer(const ad::Var& z_in, const PreparedAdjacency& adj, const ad::Var& w, Activation activation);

/// Two-layer GCN encoder: ReLU hidden layer, linear output layer.
struct Encoder {
  Matrix layer1;  // d × h1
  Matrix layer2;  // h1 × d'

  int input_dim() const { return static_cast<int>(layer1.rows()); }
  int output_dim() const { return static_cast<int>(layer2.cols()); }
  Matrix forward(const Matrix& x, const PreparedAdjacency& adj) const;
};

/// Entry set for the reconstruction loss: every nonzero of Ã (target 1)
/// plus an equal number of uniformly drawn zero entries (target 0). A
/// sample with `full` set stands for all N² entries of Ã instead.
struct ReconstructionSample {
  std::vector<int> first;
  std::vector<int> second;
  std::vector<double> targets;
  bool full = false;
};
ReconstructionSample sample_reconstruction(const PreparedAdjacency& adj, std::mt19937_64& rng);
inline ReconstructionSample full_reconstruction() { return ReconstructionSample{{}, {}, {}, true}; }

/// Mean BCE between sigmoid(z_i · z_j) and ã_ij over the sample.
double reconstruction_loss(const Matrix& z, const PreparedAdjacency& adj, const ReconstructionSample& sample);
ad::Var reconstruction_loss(const ad::Var& z, const PreparedAdjacency& adj, const ReconstructionSample& sample);

struct PretrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  double ssl_weight = 1.0;
  int hidden_dim = 256;
  int embedding_dim = 128;
  // Dense N² reconstruction instead of balanced sampling (N ≤ 3000 only).
  bool full_reconstruction = false;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  double reconstruction = 0.0;
  std::vector<double> task_losses;
  double total = 0.0;
};

struct PretrainResult {
  Encoder encoder;
  Matrix z;
  std::vector<PretrainEpoch> trace;
};

/// Multi-task stage: minimises reconstruction + ssl_weight · Σ L_k with every
/// task head reading the shared encoder output. Z is the encoder output at the
/// final weights. Throws on a non-finite loss term, naming it.
PretrainResult pretrain(const Graph& g, const PreparedAdjacency& adj, const SslTaskSet& tasks,
                        const PretrainConfig& cfg);

/// Row permutation used to corrupt the input for DGI at a given epoch.
std::vector<int> corruption_permutation(int n, std::uint64_t seed, std::uint64_t stage, int epoch);

}  // namespace dyfss
