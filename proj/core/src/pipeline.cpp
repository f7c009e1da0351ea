#include "dyfss/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dyfss/cluster.hpp"
#include "dyfss/csv.hpp"
#include "dyfss/linalg.hpp"

namespace dyfss {

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw Error("unknown activation '" + s + "'");
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t purpose) {
  return make_rng(seed, stream::kKMeans, 1000 + purpose)();
}

Matrix permute_rows(const Matrix& x, const std::vector<int>& perm) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
  return out;
}

// Builds a non-owning FusionNetwork view over plain matrices.
struct FusionView {
  ParameterSet params;
  FusionNetwork net;

  explicit FusionView(const FusionModel& m) {
    for (int k = 0; k < m.n_experts(); ++k) params.add("fusion.expert" + std::to_string(k), m.experts[k]);
    params.add("fusion.gate", m.gate);
    net = find_fusion_network(params, m.n_experts(), m.activation);
  }
};

std::string task_key(std::size_t k, const char* field) { return "ssl." + std::to_string(k) + "." + field; }

Matrix pretrain_trace_matrix(const std::vector<PretrainEpoch>& trace) {
  if (trace.empty()) return Matrix(0, 0);
  const auto cols = static_cast<Eigen::Index>(trace.front().task_losses.size() + 2);
  Matrix m(static_cast<Eigen::Index>(trace.size()), cols);
  for (std::size_t e = 0; e < trace.size(); ++e) {
    const auto r = static_cast<Eigen::Index>(e);
    m(r, 0) = trace[e].reconstruction;
    for (std::size_t k = 0; k < trace[e].task_losses.size(); ++k)
      m(r, static_cast<Eigen::Index>(k + 1)) = trace[e].task_losses[k];
    m(r, cols - 1) = trace[e].total;
  }
  return m;
}

std::vector<PretrainEpoch> pretrain_trace_from(const Matrix& m) {
  std::vector<PretrainEpoch> trace;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    PretrainEpoch e;
    e.reconstruction = m(r, 0);
    for (Eigen::Index c = 1; c + 1 < m.cols(); ++c) e.task_losses.push_back(m(r, c));
    e.total = m(r, m.cols() - 1);
    trace.push_back(std::move(e));
  }
  return trace;
}

Matrix fusion_trace_matrix(const std::vector<FusionEpoch>& trace) {
  Matrix m(static_cast<Eigen::Index>(trace.size()), 5);
  for (std::size_t e = 0; e < trace.size(); ++e) {
    const auto r = static_cast<Eigen::Index>(e);
    m.row(r) << trace[e].pseudo_label, trace[e].structure, trace[e].ssl, trace[e].cluster, trace[e].total;
  }
  return m;
}

std::vector<FusionEpoch> fusion_trace_from(const Matrix& m) {
  std::vector<FusionEpoch> trace;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    trace.push_back(FusionEpoch{m(r, 0), m(r, 1), m(r, 2), m(r, 3), m(r, 4)});
  return trace;
}

}  // namespace

Graph DatasetSource::load() const {
  if (sbm) return generate_sbm(*sbm);
  if (nodes.empty() || edges.empty()) throw Error("no dataset given: pass node and edge files or an SBM spec");
  return load_graph(nodes, edges, labels);
}

void RunConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw Error(std::string(name) + " must be positive");
  };
  positive(pretrain.epochs, "pretrain epochs");
  positive(pretrain.hidden_dim, "hidden dimension");
  positive(pretrain.embedding_dim, "embedding dimension");
  positive(ssl.n_parts, "partition count");
  positive(ssl.clu_clusters, "attribute cluster count");
  positive(ssl.pairdis_max_hop, "pair distance classes");
  positive(ssl.pairdis_pairs_per_node, "pair distance budget");
  positive(ssl.pairsim_pairs_per_node, "pair similarity budget");
  positive(kmeans_restarts, "k-means restarts");
  positive(kmeans_max_iter, "k-means iterations");
  positive(structure_samples, "structure sample size");
  if (fusion_epochs < 0) throw Error("fusion epochs must be nonnegative");
  if (n_clusters < 0 || n_clusters == 1) throw Error("cluster count must be at least 2");
  if (!(pretrain.lr > 0) || !(fusion_lr > 0)) throw Error("learning rates must be positive");
  if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(pretrain.ssl_weight >= 0))
    throw Error("loss weights must be nonnegative");
  if (!(percentile > 0 && percentile < 100)) throw Error("percentile must lie in (0, 100)");
  if (pseudo_refresh_every < 0) throw Error("pseudo-label refresh interval must be nonnegative");
  if (ssl.kinds.empty()) throw Error("at least one SSL task is required");
}

void apply_preset(RunConfig& cfg, std::string_view name) {
  if (name == "default" || name == "cora" || name == "pubmed") {
    cfg.lambda1 = 0.1;
    cfg.percentile = 50;
  } else if (name == "citeseer") {
    cfg.lambda1 = 0.1;
    cfg.percentile = 40;
  } else if (name == "photo" || name == "computers") {
    cfg.lambda1 = 0.01;
    cfg.percentile = 50;
  } else {
    throw Error("unknown preset '" + std::string(name) + "'");
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> e;
  auto add = [&](std::string k, std::string v) { e.emplace_back(std::move(k), std::move(v)); };
  if (c.dataset.sbm) {
    const SbmSpec& s = *c.dataset.sbm;
    add("sbm", "true");
    add("sbm-blocks", std::to_string(s.blocks));
    add("sbm-block-size", std::to_string(s.nodes_per_block));
    add("sbm-p-in", fmt17(s.p_in));
    add("sbm-p-out", fmt17(s.p_out));
    add("sbm-features", std::to_string(s.feature_dim));
    add("sbm-shift", fmt17(s.feature_shift));
    add("sbm-seed", std::to_string(s.seed));
  } else {
    add("nodes", c.dataset.nodes.string());
    add("edges", c.dataset.edges.string());
    if (c.dataset.labels) add("labels", c.dataset.labels->string());
  }
  add("seed", std::to_string(c.seed));
  add("pretrain-epochs", std::to_string(c.pretrain.epochs));
  add("pretrain-lr", fmt17(c.pretrain.lr));
  add("ssl-weight", fmt17(c.pretrain.ssl_weight));
  add("hidden-dim", std::to_string(c.pretrain.hidden_dim));
  add("embedding-dim", std::to_string(c.pretrain.embedding_dim));
  add("full-reconstruction", c.pretrain.full_reconstruction ? "true" : "false");
  std::string tasks;
  for (TaskKind k : c.ssl.kinds) tasks += (tasks.empty() ? "" : ",") + std::string(task_name(k));
  add("tasks", tasks);
  add("partitions", std::to_string(c.ssl.n_parts));
  add("clu-clusters", std::to_string(c.ssl.clu_clusters));
  add("pairdis-max-hop", std::to_string(c.ssl.pairdis_max_hop));
  add("pairdis-pairs", std::to_string(c.ssl.pairdis_pairs_per_node));
  add("pairsim-pairs", std::to_string(c.ssl.pairsim_pairs_per_node));
  add("fusion-epochs", std::to_string(c.fusion_epochs));
  add("fusion-lr", fmt17(c.fusion_lr));
  add("lambda1", fmt17(c.lambda1));
  add("lambda2", fmt17(c.lambda2));
  add("percentile", fmt17(c.percentile));
  add("clusters", std::to_string(c.n_clusters));
  add("expert-activation", activation_name(c.expert_activation));
  add("pseudo-label-loss", c.use_pseudo_label_loss ? "true" : "false");
  add("structure-loss", c.use_structure_loss ? "true" : "false");
  add("pseudo-refresh", std::to_string(c.pseudo_refresh_every));
  add("structure-dense-limit", std::to_string(c.structure_dense_limit));
  add("structure-samples", std::to_string(c.structure_samples));
  add("kmeans-restarts", std::to_string(c.kmeans_restarts));
  add("kmeans-max-iter", std::to_string(c.kmeans_max_iter));
  if (!c.gate_log_dir.empty()) add("gate-log-dir", c.gate_log_dir.string());
  return e;
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

Inference infer(const FusionModel& model, const Matrix& z, const PreparedAdjacency& adj) {
  if (model.n_experts() < 1) throw Error("fusion model has no experts");
  if (z.cols() != model.gate.rows())
    throw ShapeError("embedding width " + std::to_string(z.cols()) + " differs from the fusion input width " +
                     std::to_string(model.gate.rows()));
  if (model.centers.cols() != model.gate.rows())
    throw ShapeError("cluster centers have width " + std::to_string(model.centers.cols()) + ", expected " +
                     std::to_string(model.gate.rows()));
  if (z.rows() != adj.n_nodes()) throw ShapeError("embedding rows differ from node count");
  FusionView view(model);
  Inference out;
  std::vector<Matrix> experts;
  for (int k = 0; k < model.n_experts(); ++k) experts.push_back(expert_forward(z, adj, view.net, k));
  out.gates = gate(z, view.net);
  out.fused = fuse(experts, out.gates);
  out.q = soft_assign(out.fused, model.centers);
  out.assignment = argmax_rows(out.q);
  return out;
}

GateSummary summarize_gates(const Matrix& gates) {
  GateSummary s;
  const auto n = static_cast<double>(gates.rows());
  if (gates.rows() == 0) return s;
  for (Eigen::Index k = 0; k < gates.cols(); ++k) s.mean_weight.push_back(gates.col(k).sum() / n);
  double max_sum = 0.0, entropy_sum = 0.0;
  for (Eigen::Index i = 0; i < gates.rows(); ++i) {
    max_sum += gates.row(i).maxCoeff();
    for (Eigen::Index k = 0; k < gates.cols(); ++k) {
      const double g = gates(i, k);
      if (g > 0) entropy_sum -= g * std::log(g);
    }
  }
  s.mean_max = max_sum / n;
  s.mean_entropy = entropy_sum / n;
  return s;
}

int resolve_clusters(const Graph& g, const RunConfig& cfg) {
  if (cfg.n_clusters > 0) return cfg.n_clusters;
  if (!g.labels) throw Error("cluster count not set and the dataset has no labels to infer it from");
  const int c = g.n_classes();
  if (c < 2) throw Error("labels contain fewer than two classes; set the cluster count explicitly");
  return c;
}

StageOne run_pretrain_stage(const Graph& g, const PreparedAdjacency& adj, const RunConfig& cfg) {
  StageOne s;
  s.tasks = make_task_set(g, cfg.ssl, cfg.seed);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.seed;
  PretrainResult r = pretrain(g, adj, s.tasks, pc);
  s.encoder = std::move(r.encoder);
  s.z = std::move(r.z);
  s.trace = std::move(r.trace);
  return s;
}

FusionLoss fusion_loss(ad::Tape& tape, const FusionLossInputs& in, const FusionNetwork& net,
                       const std::vector<TaskHead>& heads, Parameter& centers, const RunConfig& cfg) {
  const int k_experts = net.n_experts();
  if (static_cast<int>(in.tasks.size()) != k_experts || heads.size() != in.tasks.size())
    throw Error("fusion_loss: expert, task and head counts differ");
  FusionLoss out;
  ad::Var z = tape.constant(in.z);
  out.forward = fusion_forward(tape, z, in.adj, net);
  out.q = ad::student_t(out.forward.fused, tape.parameter(centers));

  ad::Var z_corrupt;
  ad::Var l_ssl;
  for (int k = 0; k < k_experts; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    const SslTask& t = in.tasks.tasks[idx];
    ad::Var corrupt;
    if (t.kind == TaskKind::Infomax) {
      if (!z_corrupt.valid()) {
        if (static_cast<Eigen::Index>(in.corruption.size()) != in.z.rows())
          throw Error("fusion_loss: DGI needs a row permutation of the embedding");
        z_corrupt = tape.constant(permute_rows(in.z, in.corruption));
      }
      corrupt = expert_forward(tape, z_corrupt, in.adj, net, k);
    }
    ad::Var lk = task_loss(t, heads[idx], out.forward.experts[idx], corrupt);
    l_ssl = l_ssl.valid() ? l_ssl + lk : lk;
  }
  ad::Var l_pq = in.target ? ad::kl_to_target(out.q, *in.target) : clustering_loss(out.q);
  ad::Var total = cfg.lambda1 * l_ssl + cfg.lambda2 * l_pq;
  out.terms.ssl = l_ssl.scalar();
  out.terms.cluster = l_pq.scalar();
  if (cfg.use_pseudo_label_loss) {
    ad::Var l_nl = pseudo_label_loss(out.q, in.pseudo);
    out.terms.pseudo_label = l_nl.scalar();
    total = l_nl + total;
  }
  if (cfg.use_structure_loss) {
    ad::Var l_ns = in.structure ? sampled_structure_loss(out.forward.fused, *in.structure)
                                : structure_loss(structure_similarity(out.forward.fused), in.adj.self_loop);
    out.terms.structure = l_ns.scalar();
    total = l_ns + total;
  }
  out.total = total;
  out.terms.total = total.scalar();
  return out;
}

StageTwo run_fusion_stage(const Graph& g, const PreparedAdjacency& adj, const StageOne& s1, const RunConfig& cfg) {
  const int n = g.n_nodes();
  const int c = resolve_clusters(g, cfg);
  const int k_experts = static_cast<int>(s1.tasks.size());
  const int dim = static_cast<int>(s1.z.cols());
  if (k_experts < 1) throw Error("fusion needs at least one SSL task");
  if (s1.z.rows() != n) throw ShapeError("pretrained embedding rows differ from node count");
  if (c > n) throw Error("more clusters than nodes");

  auto init_rng = make_rng(cfg.seed, stream::kInit, 2);
  ParameterSet params;
  FusionNetwork net = add_fusion_network(params, k_experts, dim, cfg.expert_activation, init_rng);
  std::vector<TaskHead> heads;
  for (int k = 0; k < k_experts; ++k) {
    const SslTask& t = s1.tasks.tasks[static_cast<std::size_t>(k)];
    heads.push_back(add_task_head(params, head_prefix("fusion", static_cast<std::size_t>(k), t.kind), t, dim, init_rng));
  }

  StageTwo out;
  auto snapshot = [&](const Matrix& centers) {
    FusionModel m;
    for (const Parameter* p : net.experts) m.experts.push_back(p->value);
    m.gate = net.gate->value;
    m.centers = centers;
    m.activation = cfg.expert_activation;
    return m;
  };

  // Initial fused embedding, centers and O.
  {
    FusionModel m0 = snapshot(Matrix::Zero(1, dim));
    FusionView view(m0);
    std::vector<Matrix> experts;
    for (int k = 0; k < k_experts; ++k) experts.push_back(expert_forward(s1.z, adj, view.net, k));
    const Matrix fused0 = fuse(experts, gate(s1.z, view.net));
    KMeansResult km = kmeans(fused0, c, cfg.kmeans_restarts, cfg.kmeans_max_iter, derived_seed(cfg.seed, 1));
    params.add("cluster.centers", km.centers);
    out.initial_assignment = std::move(km.assignment);
  }
  Parameter& centers = params.at("cluster.centers");

  // Pseudo-labels from the pretrained embedding.
  {
    KMeansResult kz = kmeans(s1.z, c, cfg.kmeans_restarts, cfg.kmeans_max_iter, derived_seed(cfg.seed, 2));
    out.pseudo = align_labels(select_pseudo_labels(soft_assign(s1.z, kz.centers), cfg.percentile),
                              out.initial_assignment, c);
  }

  if (!cfg.gate_log_dir.empty()) fs::create_directories(cfg.gate_log_dir);
  const bool dense_structure = n <= cfg.structure_dense_limit;
  const bool needs_corruption = std::any_of(s1.tasks.tasks.begin(), s1.tasks.tasks.end(),
                                            [](const SslTask& t) { return t.kind == TaskKind::Infomax; });

  for (int epoch = 0; epoch < cfg.fusion_epochs; ++epoch) {
    if (cfg.pseudo_refresh_every > 0 && epoch > 0 && epoch % cfg.pseudo_refresh_every == 0) {
      Inference now = infer(snapshot(centers.value), s1.z, adj);
      out.pseudo = align_labels(select_pseudo_labels(now.q, cfg.percentile), out.initial_assignment, c);
    }

    FusionLossInputs in{s1.z, adj, s1.tasks, out.pseudo, {}, std::nullopt, std::nullopt};
    if (needs_corruption) in.corruption = corruption_permutation(n, cfg.seed, 2, epoch);
    if (cfg.use_structure_loss && !dense_structure) {
      auto rng = make_rng(cfg.seed, stream::kStructureSample, static_cast<std::uint64_t>(epoch));
      in.structure = sample_structure_entries(adj.self_loop, cfg.structure_samples, rng);
    }
    ad::Tape tape;
    FusionLoss loss = fusion_loss(tape, in, net, heads, centers, cfg);
    if (!cfg.gate_log_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "gates_epoch%04d.csv", epoch + 1);
      csv::write_matrix(cfg.gate_log_dir / name, loss.forward.gates.value());
    }
    const FusionEpoch& rec = loss.terms;
    if (!std::isfinite(rec.total))
      throw Error("fusion training diverged at epoch " + std::to_string(epoch + 1) + ": L_nl=" +
                  fmt17(rec.pseudo_label) + " L_ns=" + fmt17(rec.structure) + " L_ssl=" + fmt17(rec.ssl) +
                  " L_pq=" + fmt17(rec.cluster));
    out.trace.push_back(rec);

    tape.backward(loss.total);
    adam_step(params, cfg.fusion_lr);
  }

  out.model = snapshot(centers.value);
  for (const Parameter& p : params)
    if (p.name.rfind("fusion.head", 0) == 0) {
      out.head_names.push_back(p.name);
      out.heads.push_back(p.value);
    }
  out.result = infer(out.model, s1.z, adj);
  return out;
}

Checkpoint make_checkpoint(const StageOne& s1, const RunConfig& cfg) {
  Checkpoint ck;
  ck.text["stage"] = "pretrain";
  ck.text["config"] = config_text(cfg);
  ck.text["seed"] = std::to_string(cfg.seed);
  ck.matrices["encoder.w1"] = s1.encoder.layer1;
  ck.matrices["encoder.w2"] = s1.encoder.layer2;
  ck.matrices["trace.pretrain"] = pretrain_trace_matrix(s1.trace);
  ck.text["ssl.count"] = std::to_string(s1.tasks.size());
  for (std::size_t k = 0; k < s1.tasks.size(); ++k) {
    const SslTask& t = s1.tasks.tasks[k];
    ck.text[task_key(k, "kind")] = std::string(task_name(t.kind));
    ck.text[task_key(k, "outputs")] = std::to_string(t.n_outputs);
    ck.ints[task_key(k, "labels")] = t.labels;
    ck.ints[task_key(k, "first")] = t.pairs.first;
    ck.ints[task_key(k, "second")] = t.pairs.second;
    ck.ints[task_key(k, "targets")] = t.pairs.targets;
  }
  return ck;
}

Checkpoint make_checkpoint(const StageOne& s1, const StageTwo& s2, const RunConfig& cfg) {
  Checkpoint ck = make_checkpoint(s1, cfg);
  ck.text["stage"] = "full";
  ck.text["activation"] = activation_name(s2.model.activation);
  ck.text["experts"] = std::to_string(s2.model.n_experts());
  for (int k = 0; k < s2.model.n_experts(); ++k) ck.matrices["fusion.expert" + std::to_string(k)] = s2.model.experts[k];
  ck.matrices["fusion.gate"] = s2.model.gate;
  ck.matrices["cluster.centers"] = s2.model.centers;
  for (std::size_t h = 0; h < s2.heads.size(); ++h) ck.matrices[s2.head_names[h]] = s2.heads[h];
  ck.matrices["trace.fusion"] = fusion_trace_matrix(s2.trace);
  ck.ints["initial_assignment"] = s2.initial_assignment;
  ck.ints["pseudo.nodes"] = s2.pseudo.nodes;
  ck.ints["pseudo.labels"] = s2.pseudo.aligned_labels;
  ck.matrices["pseudo.threshold"] = Matrix::Constant(1, 1, s2.pseudo.threshold);
  ck.matrices["result.fused"] = s2.result.fused;
  ck.matrices["result.gates"] = s2.result.gates;
  ck.ints["result.assignment"] = s2.result.assignment;
  return ck;
}

StageOne load_stage_one(const Checkpoint& ck, const Graph& g, const PreparedAdjacency& adj) {
  StageOne s;
  s.encoder.layer1 = ck.matrix("encoder.w1");
  s.encoder.layer2 = ck.matrix("encoder.w2");
  if (s.encoder.layer1.cols() != s.encoder.layer2.rows())
    throw ShapeError("checkpoint encoder layers are inconsistent");
  if (s.encoder.input_dim() != g.n_features())
    throw ShapeError("checkpoint encoder expects " + std::to_string(s.encoder.input_dim()) +
                     " features but the dataset has " + std::to_string(g.n_features()));
  const auto count = std::stoul(ck.meta("ssl.count"));
  for (std::size_t k = 0; k < count; ++k) {
    SslTask t;
    t.kind = parse_task_kind(ck.meta(task_key(k, "kind")));
    t.n_outputs = std::stoi(ck.meta(task_key(k, "outputs")));
    t.labels = ck.int_vector(task_key(k, "labels"));
    t.pairs.first = ck.int_vector(task_key(k, "first"));
    t.pairs.second = ck.int_vector(task_key(k, "second"));
    t.pairs.targets = ck.int_vector(task_key(k, "targets"));
    auto in_range = [&](const std::vector<int>& v) {
      return std::all_of(v.begin(), v.end(), [&](int i) { return i >= 0 && i < g.n_nodes(); });
    };
    if ((!t.labels.empty() && static_cast<int>(t.labels.size()) != g.n_nodes()) || !in_range(t.pairs.first) ||
        !in_range(t.pairs.second))
      throw ShapeError("checkpoint supervision does not match the dataset's " + std::to_string(g.n_nodes()) +
                       " nodes");
    s.tasks.tasks.push_back(std::move(t));
  }
  if (ck.has_matrix("trace.pretrain")) s.trace = pretrain_trace_from(ck.matrix("trace.pretrain"));
  s.z = s.encoder.forward(g.features, adj);
  return s;
}

RunReport make_report(const Graph& g, const StageOne& s1, const StageTwo& s2, const RunConfig& cfg, double seconds) {
  RunReport r;
  if (g.labels) {
    r.metrics = evaluate_all(make_result(s2.result.assignment, *g.labels, g.n_classes()));
  } else {
    std::cerr << "warning: dataset has no labels; metrics skipped\n";
  }
  r.pretrain_trace = s1.trace;
  r.fusion_trace = s2.trace;
  r.gates = summarize_gates(s2.result.gates);
  r.n_nodes = g.n_nodes();
  r.n_clusters = static_cast<int>(s2.model.centers.rows());
  r.n_pseudo_labels = s2.pseudo.size();
  r.pseudo_threshold = s2.pseudo.threshold;
  r.seconds = seconds;
  r.seed = cfg.seed;
  r.config = config_text(cfg);
  return r;
}

fs::path supervision_dir(const fs::path& checkpoint) {
  fs::path dir = checkpoint;
  dir += ".supervision";
  return dir;
}

RunReport train(const RunConfig& cfg, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const Graph g = cfg.dataset.load();
  const PreparedAdjacency adj = normalize_adjacency(g);
  const StageOne s1 = run_pretrain_stage(g, adj, cfg);
  if (checkpoint) {
    save_checkpoint(make_checkpoint(s1, cfg), *checkpoint);
    dump_supervision(s1.tasks, supervision_dir(*checkpoint));
  }
  const StageTwo s2 = run_fusion_stage(g, adj, s1, cfg);
  if (checkpoint) save_checkpoint(make_checkpoint(s1, s2, cfg), *checkpoint);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return make_report(g, s1, s2, cfg, seconds);
}

RunReport evaluate_checkpoint(const fs::path& path, const Graph& g) {
  const auto start = std::chrono::steady_clock::now();
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta("stage") != "full") throw Error("checkpoint " + path.string() + " holds no trained fusion stage");
  const PreparedAdjacency adj = normalize_adjacency(g);
  StageOne s1 = load_stage_one(ck, g, adj);

  StageTwo s2;
  const int k_experts = std::stoi(ck.meta("experts"));
  for (int k = 0; k < k_experts; ++k) s2.model.experts.push_back(ck.matrix("fusion.expert" + std::to_string(k)));
  s2.model.gate = ck.matrix("fusion.gate");
  s2.model.centers = ck.matrix("cluster.centers");
  s2.model.activation = parse_activation(ck.meta("activation"));
  if (s2.model.gate.rows() != s1.z.cols())
    throw ShapeError("fusion weights expect embedding width " + std::to_string(s2.model.gate.rows()) +
                     " but the encoder produces " + std::to_string(s1.z.cols()));
  s2.trace = fusion_trace_from(ck.matrix("trace.fusion"));
  s2.pseudo.nodes = ck.int_vector("pseudo.nodes");
  s2.pseudo.aligned_labels = ck.int_vector("pseudo.labels");
  s2.pseudo.threshold = ck.matrix("pseudo.threshold")(0, 0);
  s2.result = infer(s2.model, s1.z, adj);

  RunConfig cfg;
  cfg.seed = std::stoull(ck.meta("seed"));
  RunReport r = make_report(g, s1, s2, cfg, 0.0);
  r.config = ck.meta("config");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void export_artifacts(const fs::path& path, const fs::path& out_dir) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta("stage") != "full") throw Error("checkpoint " + path.string() + " holds no trained fusion stage");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw Error("cannot create output directory " + out_dir.string());

  const Matrix& fused = ck.matrix("result.fused");
  const Matrix& gates = ck.matrix("result.gates");
  auto with_ids = [](const Matrix& m) {
    Matrix out(m.rows(), m.cols() + 1);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out(i, 0) = static_cast<double>(i);
      out.row(i).tail(m.cols()) = m.row(i);
    }
    return out;
  };
  std::vector<std::string> header{"node_id"};
  for (Eigen::Index j = 0; j < fused.cols(); ++j) header.push_back("z" + std::to_string(j));
  csv::write_matrix(out_dir / "fused.csv", with_ids(fused), header);

  header = {"node_id"};
  const auto count = std::stoul(ck.meta("ssl.count"));
  for (std::size_t k = 0; k < count; ++k) header.push_back("gate_" + ck.meta(task_key(k, "kind")));
  csv::write_matrix(out_dir / "gates.csv", with_ids(gates), header);

  csv::write_labels(out_dir / "assignments.csv", ck.int_vector("result.assignment"), "cluster");

  const Matrix& trace = ck.matrix("trace.fusion");
  Matrix losses(trace.rows(), 6);
  for (Eigen::Index e = 0; e < trace.rows(); ++e) {
    losses(e, 0) = static_cast<double>(e + 1);
    losses.row(e).tail(5) = trace.row(e);
  }
  csv::write_matrix(out_dir / "losses.csv", losses, {"epoch", "l_nl", "l_ns", "l_ssl", "l_pq", "total"});
}

std::string metrics_line(const RunReport& r, bool include_timing) {
  // nlohmann::json prints doubles in shortest round-trip form.
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  if (r.metrics) {
    j["acc"] = r.metrics->acc;
    j["nmi"] = r.metrics->nmi;
    j["f1"] = r.metrics->f1;
  } else {
    j["acc"] = nullptr;
    j["nmi"] = nullptr;
    j["f1"] = nullptr;
  }
  j["nodes"] = r.n_nodes;
  j["clusters"] = r.n_clusters;
  j["pseudo_labels"] = r.n_pseudo_labels;
  j["pseudo_threshold"] = r.pseudo_threshold;
  if (!r.pretrain_trace.empty()) j["pretrain_loss"] = r.pretrain_trace.back().total;
  if (!r.fusion_trace.empty()) {
    const FusionEpoch& f = r.fusion_trace.back();
    j["l_nl"] = f.pseudo_label;
    j["l_ns"] = f.structure;
    j["l_ssl"] = f.ssl;
    j["l_pq"] = f.cluster;
    j["loss"] = f.total;
  }
  j["gate_mean"] = r.gates.mean_weight;
  j["gate_max"] = r.gates.mean_max;
  j["gate_entropy"] = r.gates.mean_entropy;
  if (include_timing) j["seconds"] = r.seconds;
  return j.dump();
}

std::string metrics_table(const RunReport& r) {
  std::ostringstream os;
  os << std::fixed;
  auto row = [&](const std::string& name, const std::string& value) {
    os << "  " << std::left << std::setw(20) << name << value << "\n";
  };
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
  };
  auto num = [](double v, int digits = 6) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
  };
  os << "Result\n";
  if (r.metrics) {
    row("ACC (%)", pct(r.metrics->acc));
    row("NMI (%)", pct(r.metrics->nmi));
    row("F1 (%)", pct(r.metrics->f1));
  } else {
    row("metrics", "n/a (no labels)");
  }
  row("nodes", std::to_string(r.n_nodes));
  row("clusters", std::to_string(r.n_clusters));
  row("pseudo-labels", std::to_string(r.n_pseudo_labels) + " (threshold " + num(r.pseudo_threshold, 4) + ")");
  if (!r.fusion_trace.empty()) {
    const FusionEpoch& f = r.fusion_trace.back();
    row("final L_nl", num(f.pseudo_label));
    row("final L_ns", num(f.structure));
    row("final L_ssl", num(f.ssl));
    row("final L_pq", num(f.cluster));
    row("final loss", num(f.total));
  }
  std::string gm;
  for (double w : r.gates.mean_weight) gm += (gm.empty() ? "" : " ") + num(w, 3);
  row("mean gate weights", gm);
  row("mean max gate", num(r.gates.mean_max, 3));
  row("seed", std::to_string(r.seed));
  row("wall clock (s)", num(r.seconds, 2));
  if (!r.config.empty()) {
    os << "Configuration\n";
    std::istringstream lines(r.config);
    for (std::string line; std::getline(lines, line);) os << "  " << line << "\n";
  }
  return os.str();
}

}  // namespace dyfss
