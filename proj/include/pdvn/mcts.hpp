#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "pdvn/core.hpp"
#include "pdvn/policy.hpp"
#include "pdvn/util.hpp"

namespace pdvn {

// Value configuration of the search: the full dual-value scheme, the
// single-network ablation (total-cost value only) or the no-cost ablation
// (synthesizability only).
enum class ValueMode { Dual, SingleValue, NoCost };

enum class RootOrder { Fifo, Lifo };

struct MctsConfig {
  double c_puct = 1.0;
  int simulations = 100;
  int max_depth = 15;
  int top_k = 50;
  CostModel cost;
  ValueMode mode = ValueMode::Dual;
  RootOrder root_order = RootOrder::Fifo;
  bool tree_reuse = true;
  bool greedy_root = false;  // argmax instead of visit-count sampling
};

inline void validate(const MctsConfig& cfg) {
  if (cfg.c_puct < 0) throw std::invalid_argument("mcts: c_puct must be non-negative");
  if (cfg.simulations < 1 || cfg.max_depth < 1 || cfg.top_k < 1) {
    throw std::invalid_argument("mcts: counts must be positive");
  }
  validate(cfg.cost);
}

struct ReactionNode;

struct MoleculeNode {
  int id = -1;
  Molecule mol;
  int depth = 0;
  ReactionNode* parent = nullptr;  // null for roots
  LeafStatus terminal = LeafStatus::Open;
  bool expanded = false;
  bool tree_dead = false;  // expansion produced no usable action in this tree
  bool solved = false;
  double v_syn = 0;
  double v_cost = 0;
  int visits = 0;
  std::vector<ReactionNode*> children;
};

struct ReactionNode {
  int id = -1;
  TemplateId tmpl = -1;
  double prior = 0;
  MoleculeNode* parent = nullptr;
  double r = 0;  // product of child v_syn
  double q = 0;  // c_rxn + sum of child v_cost
  int visits = 0;
  std::vector<MoleculeNode*> children;
};

// Replayable record of everything the search did to one tree: initial node
// states plus the molecule/reaction id path of every simulation, in order.
struct TraceNode {
  int id = 0;
  bool reaction = false;
  int parent = -1;  // node id, -1 for the root
  std::string label;  // molecule id or template index
  double v_syn = 0, v_cost = 0;
  LeafStatus terminal = LeafStatus::Open;
  double prior = 0;
};

struct EpisodeTrace {
  std::vector<TraceNode> nodes;
  std::vector<std::vector<int>> sims;  // alternating molecule/reaction ids

  std::string to_text() const;
};

// Arena-owned search tree; node pointers stay valid for the tree's lifetime.
class SearchTree {
 public:
  explicit SearchTree(bool enable_trace = false) : trace_enabled_(enable_trace) {}

  SearchTree(const SearchTree&) = delete;
  SearchTree& operator=(const SearchTree&) = delete;

  MoleculeNode* root() { return root_; }
  const MoleculeNode* root() const { return root_; }

  MoleculeNode* new_molecule(Molecule mol, ReactionNode* parent, int depth, LeafStatus terminal,
                             double v_syn, double v_cost);
  ReactionNode* new_reaction(TemplateId tmpl, double prior, MoleculeNode* parent);

  const std::deque<MoleculeNode>& molecule_nodes() const { return mols_; }
  const std::deque<ReactionNode>& reaction_nodes() const { return rxns_; }
  std::deque<MoleculeNode>& molecule_nodes() { return mols_; }

  int node_count() const { return next_id_; }
  bool trace_enabled() const { return trace_enabled_; }
  EpisodeTrace trace;

 private:
  std::deque<MoleculeNode> mols_;
  std::deque<ReactionNode> rxns_;
  MoleculeNode* root_ = nullptr;
  int next_id_ = 0;
  bool trace_enabled_ = false;
};

// Mode-aware network evaluation for freshly created open leaves.
struct NetEvaluator {
  ValueMode mode = ValueMode::Dual;
  const Mlp* syn = nullptr;   // sigmoid head (Dual, NoCost)
  const Mlp* cost = nullptr;  // softplus head (Dual: V^cost, SingleValue: V^single)
  EvalCache* cache = nullptr;

  std::pair<double, double> open_leaf_values(const Molecule& m) const;
};

// Terminal shortcuts: building blocks are (1, 0) in every mode; dead ends are
// (0, 0) except in single-value mode where the whole penalty lives on the
// cost channel as (1, c_dead).
std::pair<double, double> terminal_values(LeafStatus terminal, ValueMode mode,
                                          const CostModel& cm);

// Modified PUCT over the node's reaction children. Requires an expanded node
// with at least one child; ties break toward the lower template index.
ReactionNode* puct_select(const MoleculeNode& node, const MctsConfig& cfg);

double puct_utility(const ReactionNode& rn, const MctsConfig& cfg);

// Child preference: unexpanded first, then unsolved, otherwise a seeded
// uniform pick. Deterministic (canonical molecule order) within a class.
MoleculeNode* select_child_molecule(ReactionNode& rn, Rng& rng);

// Appends the policy's proposals (minus templates already used on the
// ancestor chain) under `leaf`, initializing new nodes from the value
// networks with terminal shortcuts. A leaf left without children is marked
// dead for this tree.
void expand(SearchTree& tree, MoleculeNode& leaf, const TwoBranchPolicy& policy,
            const NetEvaluator& nets, const WorldSpec& world, const MctsConfig& cfg);

struct SimulationPath {
  std::vector<MoleculeNode*> mols;  // size = rxns.size() + 1
  std::vector<ReactionNode*> rxns;
};

// Bottom-up path values, running-average merge, visit counts and reaction
// refresh along the path.
void backup(const SimulationPath& path, const MctsConfig& cfg);

enum class EpisodeOutcome { Solved, DeadEnd, DepthLimit, NoAction };

const char* to_string(EpisodeOutcome o);

struct EpisodeStats {
  int simulations = 0;
  int expansions = 0;
  int root_moves = 0;
};

struct EpisodeResult {
  std::vector<std::unique_ptr<SearchTree>> trees;
  RouteTree route;  // committed route; partial on failure
  EpisodeOutcome outcome = EpisodeOutcome::Solved;
  EpisodeStats stats;
};

// Full planning episode: repeated MCTS at a queue of simulation roots,
// committing one reaction per root until the route resolves or fails.
EpisodeResult run_episode(const Molecule& target, const TwoBranchPolicy& policy,
                          const NetEvaluator& nets, const WorldSpec& world, const MctsConfig& cfg,
                          uint64_t seed, bool enable_trace = false);

// Debug sweep: checks value ranges, reaction-node consistency and the depth
// bound over a whole tree; throws std::logic_error on violation.
void check_tree_invariants(const SearchTree& tree, const MctsConfig& cfg);

}  // namespace pdvn
