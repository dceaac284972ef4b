#include "pdvn/planners.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <sstream>

namespace pdvn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct AoRxn;

struct AoMol {
  Molecule mol;
  LeafStatus terminal = LeafStatus::Open;
  bool expanded = false;
  int creation = 0;
  double v = 0;  // estimated cost to solve this subtree
  AoRxn* parent = nullptr;
  std::vector<AoRxn*> children;
};

struct AoRxn {
  TemplateId tmpl = -1;
  AoMol* parent = nullptr;
  std::vector<AoMol*> children;
};

struct AoTree {
  std::deque<AoMol> mols;
  std::deque<AoRxn> rxns;
  int next_creation = 0;

  AoMol* new_mol(const Molecule& m, AoRxn* parent, LeafStatus terminal, double v) {
    AoMol& n = mols.emplace_back();
    n.mol = m;
    n.parent = parent;
    n.terminal = terminal;
    n.v = v;
    n.creation = next_creation++;
    if (parent != nullptr) parent->children.push_back(&n);
    return &n;
  }

  AoRxn* new_rxn(TemplateId t, AoMol* parent) {
    AoRxn& n = rxns.emplace_back();
    n.tmpl = t;
    n.parent = parent;
    parent->children.push_back(&n);
    return &n;
  }
};

double rxn_cost(const AoRxn& rn, const CostModel& cm) {
  double c = cm.c_rxn;
  for (const AoMol* child : rn.children) c += child->v;
  return c;
}

// Lowest-cost reaction; ties toward the lower template index.
AoRxn* best_reaction(const AoMol& m, const CostModel& cm) {
  AoRxn* best = nullptr;
  double best_cost = kInf;
  for (AoRxn* rn : m.children) {
    const double c = rxn_cost(*rn, cm);
    if (best == nullptr || c < best_cost || (c == best_cost && rn->tmpl < best->tmpl)) {
      best = rn;
      best_cost = c;
    }
  }
  return best;
}

void update_upward(AoMol* m, const CostModel& cm) {
  while (m != nullptr) {
    double v = kInf;
    if (m->terminal == LeafStatus::BuildingBlock) {
      v = 0;
    } else if (m->terminal == LeafStatus::DeadEnd) {
      v = kInf;
    } else if (!m->expanded) {
      v = m->v;  // heuristic estimate, set at creation
    } else if (AoRxn* rn = best_reaction(*m, cm); rn != nullptr) {
      v = rxn_cost(*rn, cm);
    }
    if (v == m->v && m->expanded) break;  // no change to propagate
    m->v = v;
    m = m->parent != nullptr ? m->parent->parent : nullptr;
  }
}

// Open (unexpanded, non-terminal) leaves of the minimum-estimate solution
// tree, in discovery order.
void collect_open_leaves(AoMol* m, const CostModel& cm, std::vector<AoMol*>& out) {
  if (m->terminal == LeafStatus::BuildingBlock) return;
  if (!m->expanded) {
    out.push_back(m);
    return;
  }
  AoRxn* rn = best_reaction(*m, cm);
  for (AoMol* child : rn->children) collect_open_leaves(child, cm, out);
}

RouteTree extract_route(const AoMol& m, const CostModel& cm) {
  if (m.terminal == LeafStatus::BuildingBlock) {
    return RouteTree::make_leaf(m.mol, LeafStatus::BuildingBlock);
  }
  const AoRxn* rn = best_reaction(m, cm);
  std::vector<RouteTree> kids;
  for (const AoMol* child : rn->children) kids.push_back(extract_route(*child, cm));
  return RouteTree::make_internal(m.mol, rn->tmpl, std::move(kids));
}

}  // namespace

PlannerResult retro_star(const Molecule& target, const TwoBranchPolicy& policy,
                         const LeafValueFn& value_fn, const WorldSpec& world,
                         const PlannerBudget& budget, const CostModel& cm, EvalCache* cache) {
  validate(budget);
  if (is_building_block(world, target) || is_dead_end(world, target)) {
    throw std::invalid_argument("retro_star: terminal target: " + target.id);
  }

  PlannerResult result;
  AoTree tree;
  const double root_estimate = value_fn ? std::max(0.0, value_fn(target)) : 0.0;
  AoMol* root = tree.new_mol(target, nullptr, LeafStatus::Open, root_estimate);

  int calls = 0;
  for (;;) {
    if (root->v == kInf) break;  // provably infeasible within the proposal space

    std::vector<AoMol*> open;
    collect_open_leaves(root, cm, open);
    if (open.empty()) {
      // The minimum-estimate tree is complete: report it.
      result.stats.solved = true;
      result.stats.calls_at_success = calls;
      result.route = extract_route(*root, cm);
      break;
    }
    if (calls >= budget.max_calls) break;

    AoMol* leaf = open.front();
    for (AoMol* m : open) {
      if (m->creation < leaf->creation) leaf = m;
    }

    std::shared_ptr<const std::vector<Expansion>> cached;
    const std::vector<Expansion>* proposals;
    std::vector<Expansion> local;
    if (cache != nullptr) {
      cached = cache->proposals(policy, world, leaf->mol);
      proposals = cached.get();
    } else {
      local = propose(policy, world, leaf->mol);
      proposals = &local;
    }
    ++calls;

    leaf->expanded = true;
    for (const Expansion& e : *proposals) {
      AoRxn* rn = tree.new_rxn(e.tmpl, leaf);
      for (const Molecule& m : e.reactants) {
        LeafStatus terminal = LeafStatus::Open;
        double v = 0;
        if (is_building_block(world, m)) {
          terminal = LeafStatus::BuildingBlock;
        } else if (is_dead_end(world, m)) {
          terminal = LeafStatus::DeadEnd;
          v = kInf;
        } else {
          v = value_fn ? std::max(0.0, value_fn(m)) : 0.0;
        }
        tree.new_mol(m, rn, terminal, v);
      }
    }
    update_upward(leaf, cm);
  }

  result.stats.total_calls = calls;
  result.stats.molecule_nodes = static_cast<int>(tree.mols.size());
  result.stats.reaction_nodes = static_cast<int>(tree.rxns.size());
  return result;
}

namespace {

struct DfsContext {
  const TwoBranchPolicy* policy;
  const WorldSpec* world;
  EvalCache* cache;
  int max_calls;
  int max_depth;
  PlannerRunStats stats;
  bool out_of_budget = false;
};

std::optional<RouteTree> dfs_solve(DfsContext& ctx, const Molecule& m, int depth) {
  if (is_building_block(*ctx.world, m)) {
    return RouteTree::make_leaf(m, LeafStatus::BuildingBlock);
  }
  if (is_dead_end(*ctx.world, m) || depth >= ctx.max_depth) return std::nullopt;
  if (ctx.stats.total_calls >= ctx.max_calls) {
    ctx.out_of_budget = true;
    return std::nullopt;
  }

  std::shared_ptr<const std::vector<Expansion>> cached;
  const std::vector<Expansion>* proposals;
  std::vector<Expansion> local;
  if (ctx.cache != nullptr) {
    cached = ctx.cache->proposals(*ctx.policy, *ctx.world, m);
    proposals = cached.get();
  } else {
    local = propose(*ctx.policy, *ctx.world, m);
    proposals = &local;
  }
  ++ctx.stats.total_calls;
  ctx.stats.reaction_nodes += static_cast<int>(proposals->size());
  ++ctx.stats.molecule_nodes;

  for (const Expansion& e : *proposals) {
    std::vector<RouteTree> kids;
    bool ok = true;
    for (const Molecule& r : e.reactants) {
      auto sub = dfs_solve(ctx, r, depth + 1);
      if (ctx.out_of_budget) return std::nullopt;
      if (!sub.has_value()) {
        ok = false;
        break;
      }
      kids.push_back(std::move(*sub));
    }
    if (ok) return RouteTree::make_internal(m, e.tmpl, std::move(kids));
    ++ctx.stats.backtracks;
  }
  return std::nullopt;
}

}  // namespace

PlannerResult greedy_dfs(const Molecule& target, const TwoBranchPolicy& policy,
                         const WorldSpec& world, const PlannerBudget& budget, int max_depth,
                         EvalCache* cache) {
  validate(budget);
  if (is_building_block(world, target) || is_dead_end(world, target)) {
    throw std::invalid_argument("greedy_dfs: terminal target: " + target.id);
  }
  DfsContext ctx;
  ctx.policy = &policy;
  ctx.world = &world;
  ctx.cache = cache;
  ctx.max_calls = budget.max_calls;
  ctx.max_depth = max_depth;

  PlannerResult result;
  auto route = dfs_solve(ctx, target, 0);
  result.stats = ctx.stats;
  if (route.has_value()) {
    result.stats.solved = true;
    result.stats.calls_at_success = ctx.stats.total_calls;
    result.route = std::move(route);
  }
  return result;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv(uint64_t config_hash, uint64_t seed) const {
  std::ostringstream os;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_hash));
  os << "# config_hash=" << hex << " seed=" << seed << "\n";
  os << "planner,checkpoint,success_rate,avg_model_calls_solved,avg_reaction_nodes,"
        "avg_molecule_nodes,avg_route_length_common,solved,targets,common\n";
  for (const auto& row : rows) {
    for (int c : checkpoints) {
      os << row.planner << ',' << c << ',' << fmt(row.success_at.at(c)) << ','
         << fmt(row.avg_calls_solved) << ',' << fmt(row.avg_reaction_nodes) << ','
         << fmt(row.avg_molecule_nodes) << ',' << fmt(row.avg_route_length_common) << ','
         << row.solved << ',' << row.targets << ',' << row.common_count << "\n";
    }
  }
  return os.str();
}

std::string EvalReport::to_summary() const {
  std::ostringstream os;
  os << "success rate [%] by model-call budget\n";
  os << "planner";
  for (int c : checkpoints) os << '\t' << c;
  os << "\tcalls\tT-nodes\tM-nodes\tlen(common)\n";
  for (const auto& row : rows) {
    os << row.planner;
    char buf[32];
    for (int c : checkpoints) {
      std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * row.success_at.at(c));
      os << '\t' << buf;
    }
    os << '\t' << fmt(row.avg_calls_solved) << '\t' << fmt(row.avg_reaction_nodes) << '\t'
       << fmt(row.avg_molecule_nodes) << '\t' << fmt(row.avg_route_length_common) << "\n";
  }
  return os.str();
}

EvalReport evaluate(const std::vector<Molecule>& test_set,
                    const std::vector<PlannerSpec>& planners, const PlannerBudget& budget,
                    const CostModel& cm, const WorldSpec& world, ThreadPool* pool,
                    std::vector<std::vector<PlannerResult>>* raw_results) {
  if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (planners.empty()) throw std::invalid_argument("evaluate: no planners");
  validate(budget);

  const int n_planners = static_cast<int>(planners.size());
  const int n_targets = static_cast<int>(test_set.size());
  std::vector<std::vector<PlannerResult>> results(n_planners);
  for (auto& v : results) v.resize(n_targets);
  std::vector<std::unique_ptr<EvalCache>> caches;
  for (int p = 0; p < n_planners; ++p) caches.push_back(std::make_unique<EvalCache>());

  const int total = n_planners * n_targets;
  parallel_chunks(pool, total, 1, [&](int64_t lo, int64_t, int) {
    const int p = static_cast<int>(lo) / n_targets;
    const int t = static_cast<int>(lo) % n_targets;
    const PlannerSpec& spec = planners[p];
    if (spec.kind == PlannerSpec::Kind::Greedy) {
      results[p][t] =
          greedy_dfs(test_set[t], *spec.policy, world, budget, spec.dfs_max_depth, caches[p].get());
    } else {
      results[p][t] =
          retro_star(test_set[t], *spec.policy, spec.value_fn, world, budget, cm, caches[p].get());
    }
  });

  // Commonly solved subset across all planners.
  std::vector<bool> common(n_targets, true);
  for (int p = 0; p < n_planners; ++p) {
    for (int t = 0; t < n_targets; ++t) {
      if (!results[p][t].stats.solved) common[t] = false;
    }
  }
  int common_count = 0;
  for (bool c : common) common_count += c ? 1 : 0;

  EvalReport report;
  report.checkpoints = budget.checkpoints;
  for (int p = 0; p < n_planners; ++p) {
    EvalRow row;
    row.planner = planners[p].name;
    row.targets = n_targets;
    row.common_count = common_count;
    double calls_sum = 0, rxn_sum = 0, mol_sum = 0, len_sum = 0;
    for (int t = 0; t < n_targets; ++t) {
      const auto& st = results[p][t].stats;
      if (st.solved) {
        ++row.solved;
        calls_sum += st.calls_at_success;
      }
      rxn_sum += st.reaction_nodes;
      mol_sum += st.molecule_nodes;
      if (common[t]) len_sum += route_length(*results[p][t].route);
    }
    for (int c : budget.checkpoints) {
      int hits = 0;
      for (int t = 0; t < n_targets; ++t) {
        const auto& st = results[p][t].stats;
        if (st.solved && st.calls_at_success <= c) ++hits;
      }
      row.success_at[c] = static_cast<double>(hits) / n_targets;
    }
    row.avg_calls_solved =
        row.solved > 0 ? calls_sum / row.solved : std::numeric_limits<double>::quiet_NaN();
    row.avg_reaction_nodes = rxn_sum / n_targets;
    row.avg_molecule_nodes = mol_sum / n_targets;
    row.avg_route_length_common =
        common_count > 0 ? len_sum / common_count : std::numeric_limits<double>::quiet_NaN();
    report.rows.push_back(std::move(row));
  }
  if (raw_results != nullptr) *raw_results = std::move(results);
  return report;
}

}  // namespace pdvn
