// Independent brute-force oracles used by the test suites. These re-derive
// the quantities the library computes, from first principles and separate
// code paths, so agreement is meaningful.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pdvn/mcts.hpp"
#include "pdvn/synthworld.hpp"

namespace oracle {

using namespace pdvn;

// ---- world-level AND-OR reachability -------------------------------------

inline bool solvable(const WorldSpec& world, const Molecule& m, int depth,
                     std::map<std::pair<std::string, int>, bool>& memo) {
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) return true;
  if (depth <= 0) return false;
  const auto key = std::make_pair(m.id, depth);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  bool ok = false;
  for (TemplateId t : applicable_templates(world, m)) {
    const Expansion e = apply_template(world, m, t);
    bool all = true;
    for (const auto& r : e.reactants) {
      if (!solvable(world, r, depth - 1, memo)) {
        all = false;
        break;
      }
    }
    if (all) {
      ok = true;
      break;
    }
  }
  memo[key] = ok;
  return ok;
}

inline bool solvable(const WorldSpec& world, const Molecule& m, int depth) {
  std::map<std::pair<std::string, int>, bool> memo;
  return solvable(world, m, depth, memo);
}

// Minimum number of reactions in any complete route, or INT_MAX/2 when
// unsolvable. Well-founded because every expansion loses reducible mass.
inline int min_route_reactions(const WorldSpec& world, const Molecule& m,
                               std::map<std::string, int>& memo) {
  constexpr int kUnsolvable = std::numeric_limits<int>::max() / 2;
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) return 0;
  if (auto it = memo.find(m.id); it != memo.end()) return it->second;
  memo[m.id] = kUnsolvable;  // placeholder; mass decrease forbids revisits
  int best = kUnsolvable;
  for (TemplateId t : applicable_templates(world, m)) {
    const Expansion e = apply_template(world, m, t);
    int total = 1;
    for (const auto& r : e.reactants) {
      const int sub = min_route_reactions(world, r, memo);
      if (sub >= kUnsolvable) {
        total = kUnsolvable;
        break;
      }
      total += sub;
    }
    best = std::min(best, total);
  }
  memo[m.id] = best;
  return best;
}

// ---- episode-tree enumeration ---------------------------------------------

inline bool tree_solved(const MoleculeNode* m, std::map<const MoleculeNode*, bool>& memo) {
  if (auto it = memo.find(m); it != memo.end()) return it->second;
  bool ok = m->terminal == LeafStatus::BuildingBlock;
  if (!ok) {
    for (const ReactionNode* rn : m->children) {
      bool all = !rn->children.empty();
      for (const MoleculeNode* c : rn->children) {
        if (!tree_solved(c, memo)) {
          all = false;
          break;
        }
      }
      if (all) {
        ok = true;
        break;
      }
    }
  }
  memo[m] = ok;
  return ok;
}

inline double tree_min_cost(const MoleculeNode* m, const CostModel& cm,
                            std::map<const MoleculeNode*, double>& memo) {
  if (auto it = memo.find(m); it != memo.end()) return it->second;
  double best = std::numeric_limits<double>::infinity();
  if (m->terminal == LeafStatus::BuildingBlock) {
    best = 0;
  } else {
    for (const ReactionNode* rn : m->children) {
      if (rn->children.empty()) continue;
      double total = cm.c_rxn;
      for (const MoleculeNode* c : rn->children) total += tree_min_cost(c, cm, memo);
      best = std::min(best, total);
    }
  }
  memo[m] = best;
  return best;
}

// Best-reaction labels per solved expanded open node, matching the
// minimal-cost successful-route extraction.
inline std::map<const MoleculeNode*, TemplateId> tree_policy_pairs(const SearchTree& tree,
                                                                   const CostModel& cm) {
  std::map<const MoleculeNode*, bool> solved;
  std::map<const MoleculeNode*, double> costs;
  std::map<const MoleculeNode*, TemplateId> out;
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    if (!tree_solved(&m, solved) || !m.expanded || m.terminal != LeafStatus::Open ||
        m.children.empty()) {
      continue;
    }
    const ReactionNode* best = nullptr;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const ReactionNode* rn : m.children) {
      if (rn->children.empty()) continue;
      bool all = true;
      double total = cm.c_rxn;
      for (const MoleculeNode* c : rn->children) {
        if (!tree_solved(c, solved)) {
          all = false;
          break;
        }
        total += tree_min_cost(c, cm, costs);
      }
      if (!all) continue;
      if (best == nullptr || total < best_cost || (total == best_cost && rn->tmpl < best->tmpl)) {
        best = rn;
        best_cost = total;
      }
    }
    if (best != nullptr) out[&m] = best->tmpl;
  }
  return out;
}

// ---- trace replay of the backup rule --------------------------------------

struct ReplayNode {
  bool reaction = false;
  int parent = -1;
  double v_syn = 0, v_cost = 0;
  int visits = 0;
  std::vector<int> children;
};

struct ReplayState {
  std::vector<ReplayNode> nodes;

  explicit ReplayState(const EpisodeTrace& trace) {
    int max_id = -1;
    for (const auto& n : trace.nodes) max_id = std::max(max_id, n.id);
    nodes.resize(max_id + 1);
    for (const auto& n : trace.nodes) {
      ReplayNode& r = nodes[n.id];
      r.reaction = n.reaction;
      r.parent = n.parent;
      r.v_syn = n.v_syn;
      r.v_cost = n.v_cost;
      if (n.parent >= 0) nodes[n.parent].children.push_back(n.id);
    }
  }

  // One simulation path: recompute the path values bottom-up, merge the
  // running averages and bump visit counts, exactly as the backup rule says.
  void apply_sim(const std::vector<int>& path, const CostModel& cm, bool use_cost) {
    std::vector<int> mols, rxns;
    for (size_t i = 0; i < path.size(); ++i) {
      (i % 2 == 0 ? mols : rxns).push_back(path[i]);
    }
    const size_t levels = rxns.size();
    std::vector<double> vt_syn(levels + 1), vt_cost(levels + 1);
    vt_syn[levels] = nodes[mols[levels]].v_syn;
    vt_cost[levels] = nodes[mols[levels]].v_cost;
    for (size_t l = levels; l-- > 0;) {
      double s = vt_syn[l + 1];
      double c = vt_cost[l + 1] + cm.c_rxn;
      for (int child : nodes[rxns[l]].children) {
        if (child == mols[l + 1]) continue;
        s *= nodes[child].v_syn;
        c += nodes[child].v_cost;
      }
      vt_syn[l] = s;
      vt_cost[l] = use_cost ? c : 0.0;
    }
    for (size_t l = 0; l <= levels; ++l) {
      ReplayNode& m = nodes[mols[l]];
      const double n = m.visits;
      m.v_syn = (m.v_syn * n + vt_syn[l]) / (n + 1.0);
      m.v_cost = use_cost ? (m.v_cost * n + vt_cost[l]) / (n + 1.0) : 0.0;
      ++m.visits;
    }
    for (int r : rxns) ++nodes[r].visits;
  }
};

}  // namespace oracle
