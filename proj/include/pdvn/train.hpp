#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdvn/mcts.hpp"
#include "pdvn/planners.hpp"

namespace pdvn {

enum class TrainMode { Pdvn, SingleValue, NoCost, SelfImitation };

const char* to_string(TrainMode m);
std::optional<TrainMode> train_mode_from_string(std::string_view s);
ValueMode value_mode_for(TrainMode m);

struct TrainConfig {
  int target_batch = 1024;
  int mini_batch = 128;
  double lr = 1e-3;
  int epochs = 3;
  double alpha = 0.8;  // penalty factor on bootstrapped targets of unsolved molecules
  TrainMode mode = TrainMode::Pdvn;
  int grad_passes = 1;
  int workers = 0;  // 0 = hardware concurrency
  int self_imitation_budget = 500;
  uint64_t seed = 0;
  std::string trace_dir;  // when set, per-episode trace logs are written here
  MctsConfig mcts;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.target_batch < 1 || cfg.mini_batch < 1 || cfg.epochs < 1 || cfg.grad_passes < 1) {
    throw std::invalid_argument("train: sizes must be positive");
  }
  if (!(cfg.alpha > 0 && cfg.alpha < 1)) throw std::invalid_argument("train: alpha outside (0,1)");
  if (cfg.lr <= 0) throw std::invalid_argument("train: learning rate must be positive");
  validate(cfg.mcts);
}

struct TrainingExample {
  enum class Kind { Policy, Syn, Cost };
  Kind kind = Kind::Syn;
  std::string mol;
  int target_template = -1;  // Policy
  std::vector<int> mask;     // Policy: the node's proposal set, ascending
  double target_value = 0;   // Syn / Cost
};

// Per-node solved flags, indexed by node id. A molecule is solved iff it is
// a building block or some reaction child has all its reactants solved.
std::vector<char> label_solved(const SearchTree& tree);

// Minimal route cost per solved molecule node (building blocks cost 0),
// +infinity for unsolved nodes.
std::vector<double> min_cost(const SearchTree& tree, const std::vector<char>& solved,
                             const CostModel& cm);

// Throws if the node is unsolved.
double min_cost_at(const std::vector<double>& costs, const MoleculeNode& node);

// (molecule, best reaction) pairs from solved expanded nodes; the best
// reaction minimizes c_rxn + sum of child min-costs among solved reactions.
std::vector<TrainingExample> extract_policy_targets(const SearchTree& tree,
                                                    const std::vector<char>& solved,
                                                    const std::vector<double>& costs,
                                                    const CostModel& cm);

// Synthesizability targets for every molecule node: 1 solved, 0 dead-end,
// alpha * averaged v_syn otherwise.
std::vector<TrainingExample> extract_syn_targets(const SearchTree& tree,
                                                 const std::vector<char>& solved, double alpha);

// Cost targets for solved molecules only: the minimal route cost.
std::vector<TrainingExample> extract_cost_targets(const SearchTree& tree,
                                                  const std::vector<char>& solved,
                                                  const std::vector<double>& costs);

// Single-value ablation targets: min route cost for solved, c_dead for dead
// ends, averaged value / alpha for unsolved molecules.
std::vector<TrainingExample> extract_single_value_targets(const SearchTree& tree,
                                                          const std::vector<char>& solved,
                                                          const std::vector<double>& costs,
                                                          const CostModel& cm, double alpha);

struct ValueNets {
  std::optional<Mlp> syn;   // sigmoid head
  std::optional<Mlp> cost;  // softplus head; V^single in single-value mode

  NetEvaluator evaluator(ValueMode mode, EvalCache* cache = nullptr) const;
};

struct TrainState {
  AdamState policy_adam;
  AdamState syn_adam;
  AdamState cost_adam;
  uint64_t update_counter = 0;
};

struct LossReport {
  double policy_loss = 0;
  double syn_loss = 0;
  double cost_loss = 0;
  int policy_examples = 0;
  int syn_examples = 0;
  int cost_examples = 0;
};

// One shuffled pass of mini-batch Adam steps per example kind: masked-CE on
// the learnable policy branch, BCE on V^syn, MSE on the cost net. The
// reference branch is never touched.
LossReport update_networks(const std::vector<TrainingExample>& examples, TwoBranchPolicy& policy,
                           ValueNets& nets, TrainState& state, const TrainConfig& cfg,
                           uint64_t shuffle_seed, ThreadPool* pool = nullptr);

struct TrainLogRow {
  int epoch = 0;
  int batch = 0;
  double solve_rate = 0;
  double policy_loss = 0;
  double syn_loss = 0;
  double cost_loss = 0;
  int64_t wall_ms = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string to_csv(uint64_t config_hash, uint64_t seed, bool with_timing) const;
};

struct TrainResult {
  TwoBranchPolicy policy;
  ValueNets nets;
  TrainLog log;
};

// Runs a batch of planning episodes in parallel; results are slot-ordered so
// output does not depend on the worker count.
std::vector<EpisodeResult> run_episodes_parallel(const std::vector<Molecule>& targets,
                                                 const TwoBranchPolicy& policy,
                                                 const NetEvaluator& nets, const WorldSpec& world,
                                                 const MctsConfig& cfg, uint64_t batch_seed,
                                                 ThreadPool* pool, bool enable_trace = false);

// Per-epoch checkpoint hook (epoch index, policy, nets).
using EpochHook =
    std::function<void(int, const TwoBranchPolicy&, const ValueNets&, const TrainLog&)>;

// The outer loop: alternating planning (episode generation) and updating
// (target extraction + network updates) for cfg.epochs passes over d_train.
TrainResult pdvn_train(const WorldSpec& world, const Mlp& reference,
                       const std::vector<Molecule>& d_train, const TrainConfig& cfg,
                       ThreadPool* pool = nullptr, const EpochHook& hook = {});

}  // namespace pdvn
