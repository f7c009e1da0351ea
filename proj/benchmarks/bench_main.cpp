#include <benchmark/benchmark.h>

#include <random>

#include "dyfss/cluster.hpp"
#include "dyfss/linalg.hpp"
#include "dyfss/optim.hpp"
#include "dyfss/pipeline.hpp"

using namespace dyfss;

namespace {

Graph sbm(int nodes_per_block, int features = 16) {
  SbmSpec spec;
  spec.nodes_per_block = nodes_per_block;
  spec.p_in = 10.0 / nodes_per_block;
  spec.p_out = 0.5 / nodes_per_block;
  spec.feature_dim = features;
  spec.seed = 1;
  return generate_sbm(spec);
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  return Matrix::NullaryExpr(rows, cols, [&] { return n(rng); });
}

void BM_Spmm(benchmark::State& state) {
  const Graph g = sbm(static_cast<int>(state.range(0)));
  const PreparedAdjacency adj = normalize_adjacency(g);
  const Matrix h = gaussian(g.n_nodes(), 128, 2);
  for (auto _ : state) benchmark::DoNotOptimize(spmm(adj.normalized, h));
  state.SetItemsProcessed(state.iterations() * adj.normalized.nonZeros() * 128);
}
BENCHMARK(BM_Spmm)->Arg(50)->Arg(500)->Arg(3000);

void BM_EncoderForward(benchmark::State& state) {
  const Graph g = sbm(static_cast<int>(state.range(0)), 512);
  const PreparedAdjacency adj = normalize_adjacency(g);
  Encoder enc{gaussian(512, 256, 3), gaussian(256, 128, 4)};
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(g.features, adj));
}
BENCHMARK(BM_EncoderForward)->Arg(50)->Arg(900)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const Matrix points = gaussian(state.range(0), 16, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(points, 7, 1, 300, 6));
}
BENCHMARK(BM_KMeans)->Arg(150)->Arg(2708)->Unit(benchmark::kMillisecond);

// One stage-2 step: forward of the full objective, backward, and Adam.
void BM_FusionEpoch(benchmark::State& state) {
  RunConfig cfg;
  cfg.dataset.sbm = SbmSpec{};
  cfg.dataset.sbm->nodes_per_block = static_cast<int>(state.range(0));
  cfg.pretrain.epochs = 1;
  const Graph g = cfg.dataset.load();
  const PreparedAdjacency adj = normalize_adjacency(g);
  const StageOne s1 = run_pretrain_stage(g, adj, cfg);
  const int n = g.n_nodes(), dim = static_cast<int>(s1.z.cols());

  std::mt19937_64 rng(7);
  ParameterSet params;
  FusionNetwork net = add_fusion_network(params, static_cast<int>(s1.tasks.size()), dim, Activation::Relu, rng);
  std::vector<TaskHead> heads;
  for (std::size_t k = 0; k < s1.tasks.size(); ++k)
    heads.push_back(add_task_head(params, head_prefix("fusion", k, s1.tasks.tasks[k].kind), s1.tasks.tasks[k], dim, rng));
  Parameter& centers = params.add("cluster.centers", kmeans(s1.z, 3, 1, 50, 8).centers);
  const PseudoLabelSet pseudo =
      align_labels(select_pseudo_labels(soft_assign(s1.z, centers.value), 50), kmeans(s1.z, 3, 1, 50, 8).assignment, 3);
  const FusionLossInputs in{s1.z, adj, s1.tasks, pseudo, corruption_permutation(n, 1, 2, 0), std::nullopt, std::nullopt};

  for (auto _ : state) {
    ad::Tape tape;
    FusionLoss loss = fusion_loss(tape, in, net, heads, centers, cfg);
    tape.backward(loss.total);
    adam_step(params, cfg.fusion_lr);
  }
}
BENCHMARK(BM_FusionEpoch)->Arg(50)->Arg(300)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
