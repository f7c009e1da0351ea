#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "dyfss/checkpoint.hpp"
#include "dyfss/fusion.hpp"
#include "dyfss/graph.hpp"
#include "dyfss/metrics.hpp"
#include "dyfss/pretrain.hpp"
#include "dyfss/selfsup.hpp"
#include "dyfss/ssl_tasks.hpp"

namespace dyfss {

/// Either three CSV files or a generated SBM.
struct DatasetSource {
  std::filesystem::path nodes;
  std::filesystem::path edges;
  std::optional<std::filesystem::path> labels;
  std::optional<SbmSpec> sbm;

  bool empty() const { return nodes.empty() && edges.empty() && !sbm; }
  Graph load() const;
};

struct RunConfig {
  DatasetSource dataset;
  std::uint64_t seed = 0;

  PretrainConfig pretrain;  // its seed is replaced by `seed`
  SslConfig ssl;

  int fusion_epochs = 200;
  double fusion_lr = 1e-3;
  double lambda1 = 0.1;
  double lambda2 = 1.0;
  double percentile = 50.0;
  int n_clusters = 0;  // 0: number of ground-truth classes
  Activation expert_activation = Activation::Relu;

  bool use_pseudo_label_loss = true;
  bool use_structure_loss = true;
  int pseudo_refresh_every = 0;  // 0 keeps the initial pseudo-labels for the whole run
  int structure_dense_limit = 5000;
  int structure_samples = 200000;
  int kmeans_restarts = 10;
  int kmeans_max_iter = 300;
  // When set, the gate matrix is written as gates_epoch<e>.csv after every
  // fusion epoch's forward pass.
  std::filesystem::path gate_log_dir;

  void validate() const;
};

/// Named hyperparameter presets: default, cora, citeseer, pubmed, photo,
/// computers. Only λ1 and m differ between them.
void apply_preset(RunConfig& cfg, std::string_view name);

/// Flat key/value view of every configuration field, using the CLI flag
/// names. Values print with 17 significant digits.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string config_text(const RunConfig& cfg);

struct FusionEpoch {
  double pseudo_label = 0.0;  // L_nl
  double structure = 0.0;     // L_ns
  double ssl = 0.0;           // L_ssl (unweighted)
  double cluster = 0.0;       // L_pq
  double total = 0.0;
};

/// Weights of a trained fusion stage in plain form.
struct FusionModel {
  std::vector<Matrix> experts;
  Matrix gate;
  Matrix centers;
  Activation activation = Activation::Relu;

  int n_experts() const { return static_cast<int>(experts.size()); }
};

struct Inference {
  Matrix fused;  // Z̃
  Matrix gates;  // N×K
  Matrix q;      // Q̃
  Labels assignment;
};

Inference infer(const FusionModel& model, const Matrix& z, const PreparedAdjacency& adj);

struct GateSummary {
  std::vector<double> mean_weight;  // per expert
  double mean_max = 0.0;            // mean over nodes of the largest gate
  double mean_entropy = 0.0;        // nats
};
GateSummary summarize_gates(const Matrix& gates);

struct RunReport {
  std::optional<Metrics> metrics;
  std::vector<PretrainEpoch> pretrain_trace;
  std::vector<FusionEpoch> fusion_trace;
  GateSummary gates;
  int n_nodes = 0;
  int n_clusters = 0;
  std::size_t n_pseudo_labels = 0;
  double pseudo_threshold = 0.0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config;
};

/// Output of stage 1.
struct StageOne {
  SslTaskSet tasks;
  Encoder encoder;
  Matrix z;
  std::vector<PretrainEpoch> trace;
};

/// Output of stage 2.
struct StageTwo {
  FusionModel model;
  std::vector<Matrix> heads;  // flattened stage-2 head weights, checkpoint order
  std::vector<std::string> head_names;
  Labels initial_assignment;  // O
  PseudoLabelSet pseudo;
  std::vector<FusionEpoch> trace;
  Inference result;
};

/// Everything the stage-2 objective reads besides the trainable parameters.
struct FusionLossInputs {
  const Matrix& z;
  const PreparedAdjacency& adj;
  const SslTaskSet& tasks;
  const PseudoLabelSet& pseudo;
  std::vector<int> corruption;              // DGI row permutation; unused without a DGI task
  std::optional<StructureSample> structure;  // sampled L_ns entries; dense L_ns when empty
  std::optional<Matrix> target;              // fixed P for L_pq; taken from the current Q̃ when empty
};

struct FusionLoss {
  ad::Var total;
  FusionVars forward;
  ad::Var q;
  FusionEpoch terms;
};

/// L_nl + L_ns + λ1·L_ssl + λ2·L_pq on a tape, honouring the loss switches
/// in `cfg`. Heads are in task order.
FusionLoss fusion_loss(ad::Tape& tape, const FusionLossInputs& in, const FusionNetwork& net,
                       const std::vector<TaskHead>& heads, Parameter& centers, const RunConfig& cfg);

StageOne run_pretrain_stage(const Graph& g, const PreparedAdjacency& adj, const RunConfig& cfg);

/// Algorithm body of stage 2: initial fusion, k-means centers and O,
/// aligned pseudo-labels from Z, then `fusion_epochs` Adam steps on
/// L_nl + L_ns + λ1·L_ssl + λ2·L_pq and a final inference pass.
StageTwo run_fusion_stage(const Graph& g, const PreparedAdjacency& adj, const StageOne& stage_one,
                          const RunConfig& cfg);

/// Cluster count used for a run.
int resolve_clusters(const Graph& g, const RunConfig& cfg);

Checkpoint make_checkpoint(const StageOne& s1, const RunConfig& cfg);
Checkpoint make_checkpoint(const StageOne& s1, const StageTwo& s2, const RunConfig& cfg);

/// Restores stage 1 from a checkpoint; Z is recomputed on `g` from the
/// stored encoder. Throws ShapeError if the dataset's feature width differs.
StageOne load_stage_one(const Checkpoint& ckpt, const Graph& g, const PreparedAdjacency& adj);

RunReport make_report(const Graph& g, const StageOne& s1, const StageTwo& s2, const RunConfig& cfg, double seconds);

/// Where the SSL supervision CSVs of a checkpoint go: "<checkpoint>.supervision".
std::filesystem::path supervision_dir(const std::filesystem::path& checkpoint);

/// Full two-stage run on cfg.dataset. When `checkpoint` is given, the
/// stage-1 checkpoint is written first and replaced by the full one after
/// stage 2, so a failure in stage 2 leaves the stage-1 state on disk.
RunReport train(const RunConfig& cfg, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Recomputes Z, Z̃, Q̃, R and the metrics from a full checkpoint.
RunReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const Graph& g);

/// Writes fused.csv (Z̃), gates.csv, assignments.csv (R) and losses.csv.
void export_artifacts(const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir);

/// One-line JSON with seed, metrics (null when absent), final losses and
/// timing. Doubles print in shortest round-trip form.
std::string metrics_line(const RunReport& report, bool include_timing = true);

/// Human-readable table of the same content.
std::string metrics_table(const RunReport& report);

}  // namespace dyfss
