#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdvn/core.hpp"
#include "pdvn/parallel.hpp"
#include "pdvn/policy.hpp"

namespace pdvn {

struct PlannerBudget {
  int max_calls = 500;
  std::vector<int> checkpoints{50, 100, 200, 300, 400, 500};
};

inline void validate(const PlannerBudget& b) {
  if (b.max_calls < 1) throw std::invalid_argument("budget: max_calls must be positive");
  int prev = 0;
  for (int c : b.checkpoints) {
    if (c <= prev) throw std::invalid_argument("budget: checkpoints must ascend");
    prev = c;
  }
}

// Heuristic cost-to-solve estimate for an open leaf; nullptr means the zero
// heuristic.
using LeafValueFn = std::function<double(const Molecule&)>;

struct PlannerRunStats {
  bool solved = false;
  int calls_at_success = 0;  // model calls when the returned route was found
  int total_calls = 0;
  int molecule_nodes = 0;
  int reaction_nodes = 0;
  int backtracks = 0;  // greedy DFS only
};

struct PlannerResult {
  std::optional<RouteTree> route;
  PlannerRunStats stats;
};

// Best-first search on an AND-OR tree: repeatedly expand an open leaf of the
// current minimum-estimate solution tree (FIFO by creation order among them)
// until that tree is complete, the budget is exhausted, or the root becomes
// infeasible. Reactions cost c_rxn; open leaves contribute value_fn.
PlannerResult retro_star(const Molecule& target, const TwoBranchPolicy& policy,
                         const LeafValueFn& value_fn, const WorldSpec& world,
                         const PlannerBudget& budget, const CostModel& cm,
                         EvalCache* cache = nullptr);

// Depth-first baseline: always try the highest-prior proposal first,
// backtracking on dead ends, depth or exhausted proposals.
PlannerResult greedy_dfs(const Molecule& target, const TwoBranchPolicy& policy,
                         const WorldSpec& world, const PlannerBudget& budget, int max_depth,
                         EvalCache* cache = nullptr);

struct PlannerSpec {
  std::string name;
  enum class Kind { Retro, Greedy } kind = Kind::Retro;
  const TwoBranchPolicy* policy = nullptr;
  LeafValueFn value_fn;  // Retro only; nullptr = zero heuristic
  int dfs_max_depth = 15;
};

struct EvalRow {
  std::string planner;
  int targets = 0;
  int solved = 0;
  std::map<int, double> success_at;  // checkpoint -> rate in [0,1]
  double avg_calls_solved = 0;       // NaN when nothing solved
  double avg_reaction_nodes = 0;
  double avg_molecule_nodes = 0;
  double avg_route_length_common = 0;  // over the commonly solved subset
  int common_count = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<int> checkpoints;

  std::string to_csv(uint64_t config_hash, uint64_t seed) const;
  std::string to_summary() const;
};

// Runs every planner on every target at the full budget; success@N is read
// off the calls-at-success counter. Route lengths are averaged over the
// subset solved by all planners.
EvalReport evaluate(const std::vector<Molecule>& test_set,
                    const std::vector<PlannerSpec>& planners, const PlannerBudget& budget,
                    const CostModel& cm, const WorldSpec& world, ThreadPool* pool = nullptr,
                    std::vector<std::vector<PlannerResult>>* raw_results = nullptr);

}  // namespace pdvn
