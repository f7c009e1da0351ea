#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dyfss/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dyfss;

namespace {

struct DatasetFlags {
  std::string nodes, edges, labels;
  bool sbm = false;
  SbmSpec spec;

  void add_to(CLI::App& app) {
    app.add_option("--nodes", nodes, "Node feature CSV (node_id,f_1,...,f_d)")->check(CLI::ExistingFile);
    app.add_option("--edges", edges, "Edge list CSV (u,v)")->check(CLI::ExistingFile);
    app.add_option("--labels", labels, "Ground-truth label CSV (node_id,label)")->check(CLI::ExistingFile);
    add_sbm(app, true);
  }

  void add_sbm(CLI::App& app, bool with_switch) {
    if (with_switch) app.add_flag("--sbm", sbm, "Use a generated stochastic block model instead of files");
    app.add_option("--sbm-blocks", spec.blocks, "SBM block count")->capture_default_str();
    app.add_option("--sbm-block-size", spec.nodes_per_block, "SBM nodes per block")->capture_default_str();
    app.add_option("--sbm-p-in", spec.p_in, "SBM within-block edge probability")->capture_default_str();
    app.add_option("--sbm-p-out", spec.p_out, "SBM between-block edge probability")->capture_default_str();
    app.add_option("--sbm-features", spec.feature_dim, "SBM feature dimension")->capture_default_str();
    app.add_option("--sbm-shift", spec.feature_shift, "SBM feature mean shift")->capture_default_str();
    app.add_option("--sbm-seed", spec.seed, "SBM generator seed")->capture_default_str();
  }

  DatasetSource source() const {
    DatasetSource src;
    if (sbm) {
      if (!nodes.empty() || !edges.empty()) throw Error("--sbm cannot be combined with --nodes/--edges");
      src.sbm = spec;
      return src;
    }
    if (nodes.empty() || edges.empty()) throw Error("a dataset is required: --nodes and --edges, or --sbm");
    src.nodes = nodes;
    src.edges = edges;
    if (!labels.empty()) src.labels = fs::path(labels);
    return src;
  }
};

struct TrainFlags {
  RunConfig cfg;
  std::string preset = "default";
  std::string tasks = "par,clu,pairdis,pairsim,dgi";
  std::string activation = "relu";

  void add_to(CLI::App& app) {
    app.add_option("--preset", preset, "Hyperparameter preset: default, cora, citeseer, pubmed, photo, computers")
        ->capture_default_str();
    app.add_option("--seed", cfg.seed, "Global seed")->capture_default_str();
    app.add_option("--pretrain-epochs", cfg.pretrain.epochs, "Pretraining epochs")->capture_default_str();
    app.add_option("--pretrain-lr", cfg.pretrain.lr, "Pretraining learning rate")->capture_default_str();
    app.add_option("--ssl-weight", cfg.pretrain.ssl_weight, "Weight of the SSL losses during pretraining")
        ->capture_default_str();
    app.add_option("--hidden-dim", cfg.pretrain.hidden_dim, "Encoder hidden width")->capture_default_str();
    app.add_option("--embedding-dim", cfg.pretrain.embedding_dim, "Encoder output width")->capture_default_str();
    app.add_option("--full-reconstruction", cfg.pretrain.full_reconstruction,
                   "Dense reconstruction loss instead of balanced sampling")
        ->capture_default_str();
    app.add_option("--tasks", tasks, "Comma-separated SSL tasks")->capture_default_str();
    app.add_option("--partitions", cfg.ssl.n_parts, "Partition count for par")->capture_default_str();
    app.add_option("--clu-clusters", cfg.ssl.clu_clusters, "Cluster count for clu")->capture_default_str();
    app.add_option("--pairdis-max-hop", cfg.ssl.pairdis_max_hop, "Distance classes for pairdis")
        ->capture_default_str();
    app.add_option("--pairdis-pairs", cfg.ssl.pairdis_pairs_per_node, "pairdis pairs per node")
        ->capture_default_str();
    app.add_option("--pairsim-pairs", cfg.ssl.pairsim_pairs_per_node, "pairsim pairs per node")
        ->capture_default_str();
    app.add_option("--fusion-epochs", cfg.fusion_epochs, "Fusion training epochs")->capture_default_str();
    app.add_option("--fusion-lr", cfg.fusion_lr, "Fusion learning rate")->capture_default_str();
    app.add_option("--lambda1", cfg.lambda1, "Weight of the SSL loss during fusion")->capture_default_str();
    app.add_option("--lambda2", cfg.lambda2, "Weight of the clustering loss")->capture_default_str();
    app.add_option("--percentile", cfg.percentile, "Pseudo-label percentile m")->capture_default_str();
    app.add_option("--clusters", cfg.n_clusters, "Cluster count (0: from labels)")->capture_default_str();
    app.add_option("--expert-activation", activation, "Expert activation: relu or identity")
        ->capture_default_str();
    app.add_option("--pseudo-label-loss", cfg.use_pseudo_label_loss, "Include the pseudo-label loss")
        ->capture_default_str();
    app.add_option("--structure-loss", cfg.use_structure_loss, "Include the structure loss")->capture_default_str();
    app.add_option("--pseudo-refresh", cfg.pseudo_refresh_every, "Recompute pseudo-labels every n epochs (0: never)")
        ->capture_default_str();
    app.add_option("--structure-dense-limit", cfg.structure_dense_limit,
                   "Largest graph for the dense structure loss")
        ->capture_default_str();
    app.add_option("--structure-samples", cfg.structure_samples, "Entries per epoch for the sampled structure loss")
        ->capture_default_str();
    app.add_option("--kmeans-restarts", cfg.kmeans_restarts, "k-means restarts")->capture_default_str();
    app.add_option("--kmeans-max-iter", cfg.kmeans_max_iter, "k-means iteration limit")->capture_default_str();
    app.add_option("--gate-log-dir", cfg.gate_log_dir, "Write the gate matrix of every fusion epoch here");
  }

  // Preset values apply only where no flag or config entry set the field.
  RunConfig finish(const CLI::App& app, const DatasetFlags& data) {
    const double lambda1 = cfg.lambda1;
    const double percentile = cfg.percentile;
    apply_preset(cfg, preset);
    if (app.count("--lambda1")) cfg.lambda1 = lambda1;
    if (app.count("--percentile")) cfg.percentile = percentile;

    cfg.ssl.kinds.clear();
    std::stringstream ss(tasks);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) cfg.ssl.kinds.push_back(parse_task_kind(item));
    if (activation == "relu") {
      cfg.expert_activation = Activation::Relu;
    } else if (activation == "identity" || activation == "linear") {
      cfg.expert_activation = Activation::Identity;
    } else {
      throw Error("unknown expert activation '" + activation + "'");
    }
    cfg.dataset = data.source();
    cfg.validate();
    return cfg;
  }
};

// Splices `key = value` entries from --config files into the argument list
// ahead of the explicit flags, so flags given on the command line win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> config_paths, rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw Error("--config needs a file");
      config_paths.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_paths.push_back(args[i].substr(9));
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_paths.empty() || rest.empty()) return rest;
  std::vector<std::string> out{rest.front()};
  for (const auto& path : config_paths) {
    if (!fs::is_regular_file(path)) throw Error("config file not found: " + path);
    for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
      if (item.name == "++" || item.name == "--") continue;
      if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == rest.front())) continue;
      std::string value;
      for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
      out.push_back("--" + item.name + "=" + value);
    }
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

void print_report(const RunReport& r) {
  std::cout << metrics_line(r) << "\n" << metrics_table(r) << std::flush;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attributed graph clustering with per-node fusion of self-supervised embeddings", "dyfss"};
  app.require_subcommand(1);

  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;
  auto configurable = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "Read `key = value` settings; command-line flags take precedence");
  };

  DatasetFlags data;
  TrainFlags train_flags;
  std::string checkpoint, from, out_dir, supervision_out;

  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "Generate SSL supervision and pretrain the encoder");
  configurable(pretrain_cmd);
  data.add_to(*pretrain_cmd);
  train_flags.add_to(*pretrain_cmd);
  pretrain_cmd->add_option("--checkpoint", checkpoint, "Output checkpoint")->required();
  pretrain_cmd->add_option("--supervision-dir", supervision_out, "Directory for the SSL supervision CSVs (default: <checkpoint>.supervision)");

  CLI::App* fuse_cmd = app.add_subcommand("fuse", "Train the fusion stage from a pretraining checkpoint");
  configurable(fuse_cmd);
  data.add_to(*fuse_cmd);
  train_flags.add_to(*fuse_cmd);
  fuse_cmd->add_option("--from", from, "Pretraining checkpoint")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--checkpoint", checkpoint, "Output checkpoint")->required();

  CLI::App* full_cmd = app.add_subcommand("full", "Run both training stages");
  configurable(full_cmd);
  data.add_to(*full_cmd);
  train_flags.add_to(*full_cmd);
  full_cmd->add_option("--checkpoint", checkpoint, "Output checkpoint");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Recompute assignments and metrics from a checkpoint");
  configurable(eval_cmd);
  data.add_to(*eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);

  CLI::App* export_cmd = app.add_subcommand("export", "Write fused embeddings, gates, assignments and losses as CSV");
  export_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  CLI::App* gen_cmd = app.add_subcommand("gen-sbm", "Write a stochastic block model dataset as CSV");
  configurable(gen_cmd);
  data.add_sbm(*gen_cmd, false);
  gen_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for more information.\n";
    return e.get_exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (pretrain_cmd->parsed()) {
      const RunConfig cfg = train_flags.finish(*pretrain_cmd, data);
      const Graph g = cfg.dataset.load();
      const PreparedAdjacency adj = normalize_adjacency(g);
      const StageOne s1 = run_pretrain_stage(g, adj, cfg);
      dump_supervision(s1.tasks, supervision_out.empty() ? dyfss::supervision_dir(checkpoint) : fs::path(supervision_out));
      save_checkpoint(make_checkpoint(s1, cfg), checkpoint);
      std::cerr << "pretrained " << cfg.pretrain.epochs << " epochs, final loss " << s1.trace.back().total
                << "; checkpoint written to " << checkpoint << "\n";
    } else if (fuse_cmd->parsed()) {
      const RunConfig cfg = train_flags.finish(*fuse_cmd, data);
      const auto start = std::chrono::steady_clock::now();
      const Graph g = cfg.dataset.load();
      const PreparedAdjacency adj = normalize_adjacency(g);
      const Checkpoint stage1 = load_checkpoint(from);
      const StageOne s1 = load_stage_one(stage1, g, adj);
      const StageTwo s2 = run_fusion_stage(g, adj, s1, cfg);
      Checkpoint full = make_checkpoint(s1, s2, cfg);
      full.text["pretrain.config"] = stage1.meta("config");
      save_checkpoint(full, checkpoint);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      print_report(make_report(g, s1, s2, cfg, seconds));
    } else if (full_cmd->parsed()) {
      const RunConfig cfg = train_flags.finish(*full_cmd, data);
      std::optional<fs::path> out;
      if (!checkpoint.empty()) out = checkpoint;
      print_report(train(cfg, out));
    } else if (eval_cmd->parsed()) {
      const Graph g = data.source().load();
      print_report(evaluate_checkpoint(checkpoint, g));
    } else if (export_cmd->parsed()) {
      export_artifacts(checkpoint, out_dir);
      std::cerr << "wrote fused.csv, gates.csv, assignments.csv and losses.csv to " << out_dir << "\n";
    } else if (gen_cmd->parsed()) {
      const Graph g = generate_sbm(data.spec);
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      save_graph(g, dir / "nodes.csv", dir / "edges.csv", dir / "labels.csv");
      std::cerr << "wrote " << g.n_nodes() << " nodes and " << g.n_edges() << " edges to " << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
