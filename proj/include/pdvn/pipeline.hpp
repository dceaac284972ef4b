#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdvn/planners.hpp"
#include "pdvn/train.hpp"

namespace pdvn::pipeline {

namespace fs = std::filesystem;

// Flattened configuration for every subcommand. Defaults follow the planning
// and training hyper-parameter tables; a config file overrides defaults and
// command-line flags override the file.
struct RunConfig {
  uint64_t seed = 0;
  int workers = 0;  // 0 = hardware concurrency
  std::string world_file;
  std::string out_dir = "out";
  std::string reference_file;
  std::string model_dir;     // checkpoint bundle for eval/report
  std::string targets_file;  // training or evaluation targets
  std::string trace_dir;
  bool with_timing = true;

  // gen-world
  int n_rules = 500;
  double poison_rule_frac = 0.30;

  // pretrain
  int train_targets = 2000;
  int heldout_targets = 200;
  int route_max_depth = 8;
  int sl_epochs = 8;
  int sl_batch = 32;
  double sl_val_fraction = 0.1;

  // planning
  double c_puct = 1.0;
  int simulations = 100;
  int max_depth = 15;
  int top_k = 50;
  double c_rxn = 0.1;
  double c_dead = 5.0;
  std::string root_order = "fifo";
  bool tree_reuse = true;

  // training
  int target_batch = 1024;
  int mini_batch = 128;
  double lr = 1e-3;
  int epochs = 3;
  double alpha = 0.8;
  std::string mode = "pdvn";
  int grad_passes = 1;

  // evaluation
  int budget = 500;
  std::vector<int> checkpoints = {50, 100, 200, 300, 400, 500};
  std::vector<std::string> planners;  // NAME=KIND@MODEL entries

  MctsConfig mcts_config() const;
  TrainConfig train_config() const;
  PlannerBudget planner_budget() const;

  // Canonical serialization; the config hash embedded in every output file
  // is the FNV-1a of this text.
  std::string to_text() const;
  uint64_t config_hash() const;
};

// Checkpoint bundle: one directory holding the networks of a training run
// plus a manifest with provenance.
struct Bundle {
  TrainMode mode = TrainMode::Pdvn;
  TwoBranchPolicy policy;
  ValueNets nets;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

void save_bundle(const fs::path& dir, const Bundle& bundle);
Bundle load_bundle(const fs::path& dir);

void save_targets(const fs::path& path, const std::vector<Molecule>& targets,
                  uint64_t config_hash, uint64_t seed);
std::vector<Molecule> load_targets(const fs::path& path);

struct GenWorldResult {
  fs::path world_path;
};

struct PretrainResult {
  fs::path reference_path;
  fs::path targets_path;
  fs::path heldout_path;
  fs::path report_path;
  SlReport report;
};

struct TrainCmdResult {
  fs::path bundle_dir;
  fs::path log_path;
  TrainLog log;
};

struct EvalCmdResult {
  fs::path csv_path;
  fs::path summary_path;
  EvalReport report;
};

struct AblateCmdResult {
  std::vector<std::pair<std::string, EvalCmdResult>> per_mode;
  fs::path summary_path;
};

GenWorldResult cmd_gen_world(const RunConfig& cfg);
PretrainResult cmd_pretrain(const RunConfig& cfg);
TrainCmdResult cmd_train(const RunConfig& cfg);
EvalCmdResult cmd_eval(const RunConfig& cfg);
AblateCmdResult cmd_ablate(const RunConfig& cfg);

// Re-emits the summary tables of previously written eval CSVs.
std::string cmd_report(const std::vector<fs::path>& eval_csvs);

// The leaf heuristic used when a trained model guides best-first search.
LeafValueFn make_leaf_heuristic(TrainMode mode, const ValueNets& nets, const CostModel& cm);

}  // namespace pdvn::pipeline
