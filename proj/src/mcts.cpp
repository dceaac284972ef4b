#include "pdvn/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace pdvn {

std::string EpisodeTrace::to_text() const {
  std::string out;
  char buf[64];
  for (const auto& n : nodes) {
    out += "node\t" + std::to_string(n.id) + "\t";
    out += n.reaction ? "R" : "M";
    out += "\t" + std::to_string(n.parent) + "\t" + n.label + "\t";
    std::snprintf(buf, sizeof(buf), "%a", n.v_syn);
    out += buf;
    out += '\t';
    std::snprintf(buf, sizeof(buf), "%a", n.v_cost);
    out += buf;
    out += '\t';
    out += n.terminal == LeafStatus::BuildingBlock ? "BB"
           : n.terminal == LeafStatus::DeadEnd     ? "DEAD"
                                                   : "OPEN";
    out += '\t';
    std::snprintf(buf, sizeof(buf), "%a", n.prior);
    out += buf;
    out += '\n';
  }
  for (size_t s = 0; s < sims.size(); ++s) {
    out += "sim\t" + std::to_string(s) + "\t";
    for (size_t i = 0; i < sims[s].size(); ++i) {
      if (i > 0) out += ',';
      out += std::to_string(sims[s][i]);
    }
    out += '\n';
  }
  return out;
}

MoleculeNode* SearchTree::new_molecule(Molecule mol, ReactionNode* parent, int depth,
                                       LeafStatus terminal, double v_syn, double v_cost) {
  MoleculeNode& n = mols_.emplace_back();
  n.id = next_id_++;
  n.mol = std::move(mol);
  n.parent = parent;
  n.depth = depth;
  n.terminal = terminal;
  n.v_syn = v_syn;
  n.v_cost = v_cost;
  n.solved = terminal == LeafStatus::BuildingBlock;
  if (parent != nullptr) {
    parent->children.push_back(&n);
  } else if (root_ == nullptr) {
    root_ = &n;
  }
  if (trace_enabled_) {
    trace.nodes.push_back({n.id, false, parent != nullptr ? parent->id : -1, n.mol.id, v_syn,
                           v_cost, terminal, 0.0});
  }
  return &n;
}

ReactionNode* SearchTree::new_reaction(TemplateId tmpl, double prior, MoleculeNode* parent) {
  ReactionNode& n = rxns_.emplace_back();
  n.id = next_id_++;
  n.tmpl = tmpl;
  n.prior = prior;
  n.parent = parent;
  parent->children.push_back(&n);
  if (trace_enabled_) {
    trace.nodes.push_back({n.id, true, parent->id, std::to_string(tmpl), 0.0, 0.0,
                           LeafStatus::Open, prior});
  }
  return &n;
}

std::pair<double, double> NetEvaluator::open_leaf_values(const Molecule& m) const {
  double vs = 1.0, vc = 0.0;
  if (cache != nullptr) {
    auto [s, c] = cache->leaf_values(mode == ValueMode::SingleValue ? nullptr : syn, cost, m);
    vs = s;
    vc = c;
  } else {
    InputBatch b;
    b.rows.push_back(featurize(m).active_bits());
    if (mode != ValueMode::SingleValue && syn != nullptr) vs = forward(*syn, b, false)[0];
    if (cost != nullptr) vc = forward(*cost, b, false)[0];
  }
  if (mode == ValueMode::NoCost) vc = 0.0;
  vs = std::clamp(vs, 0.0, 1.0);
  vc = std::max(vc, 0.0);
  return {vs, vc};
}

std::pair<double, double> terminal_values(LeafStatus terminal, ValueMode mode,
                                          const CostModel& cm) {
  if (terminal == LeafStatus::BuildingBlock) return {1.0, 0.0};
  if (terminal == LeafStatus::DeadEnd) {
    if (mode == ValueMode::SingleValue) return {1.0, cm.c_dead};
    return {0.0, 0.0};
  }
  throw std::invalid_argument("terminal_values: open leaf has no terminal value");
}

double puct_utility(const ReactionNode& rn, const MctsConfig& cfg) {
  switch (cfg.mode) {
    case ValueMode::Dual: return rn.r * rn.q + (1.0 - rn.r) * cfg.cost.c_dead;
    case ValueMode::SingleValue: return rn.q;
    case ValueMode::NoCost: return (1.0 - rn.r) * cfg.cost.c_dead;
  }
  return 0;
}

ReactionNode* puct_select(const MoleculeNode& node, const MctsConfig& cfg) {
  if (!node.expanded || node.children.empty()) {
    throw std::invalid_argument("puct_select: node has no reaction children");
  }
  int total_visits = 0;
  for (const ReactionNode* rn : node.children) total_visits += rn->visits;
  const double sqrt_total = std::sqrt(static_cast<double>(total_visits));

  ReactionNode* best = nullptr;
  double best_score = 0;
  for (ReactionNode* rn : node.children) {
    const double score = -puct_utility(*rn, cfg) +
                         cfg.c_puct * rn->prior * sqrt_total / (1.0 + rn->visits);
    if (best == nullptr || score > best_score ||
        (score == best_score && rn->tmpl < best->tmpl)) {
      best = rn;
      best_score = score;
    }
  }
  return best;
}

MoleculeNode* select_child_molecule(ReactionNode& rn, Rng& rng) {
  if (rn.children.empty()) throw std::invalid_argument("select_child_molecule: no children");
  auto canonical_min = [](const std::vector<MoleculeNode*>& v) {
    MoleculeNode* best = nullptr;
    for (MoleculeNode* m : v) {
      if (best == nullptr || m->mol.id < best->mol.id) best = m;
    }
    return best;
  };
  std::vector<MoleculeNode*> unexpanded, unsolved;
  for (MoleculeNode* m : rn.children) {
    if (m->terminal == LeafStatus::Open && !m->expanded) {
      unexpanded.push_back(m);
    } else if (!m->solved) {
      unsolved.push_back(m);
    }
  }
  if (!unexpanded.empty()) return canonical_min(unexpanded);
  if (!unsolved.empty()) return canonical_min(unsolved);
  return rn.children[rng.below(rn.children.size())];
}

namespace {

void try_mark_solved(MoleculeNode* m) {
  while (m != nullptr && !m->solved) {
    bool solved = m->terminal == LeafStatus::BuildingBlock;
    for (const ReactionNode* rn : m->children) {
      if (solved) break;
      bool all = true;
      for (const MoleculeNode* c : rn->children) {
        if (!c->solved) {
          all = false;
          break;
        }
      }
      solved = all && !rn->children.empty();
    }
    if (!solved) return;
    m->solved = true;
    m = m->parent != nullptr ? m->parent->parent : nullptr;
  }
}

void refresh_reaction(ReactionNode& rn, const MctsConfig& cfg) {
  double r = 1.0, qsum = 0.0;
  for (const MoleculeNode* c : rn.children) {
    r *= c->v_syn;
    qsum += c->v_cost;
  }
  rn.r = r;
  rn.q = cfg.mode == ValueMode::NoCost ? 0.0 : cfg.cost.c_rxn + qsum;
}

}  // namespace

void expand(SearchTree& tree, MoleculeNode& leaf, const TwoBranchPolicy& policy,
            const NetEvaluator& nets, const WorldSpec& world, const MctsConfig& cfg) {
  if (leaf.terminal != LeafStatus::Open || leaf.expanded) {
    throw std::invalid_argument("expand: node is terminal or already expanded");
  }
  if (leaf.depth >= cfg.max_depth) {
    throw std::invalid_argument("expand: node at the depth limit");
  }

  std::shared_ptr<const std::vector<Expansion>> cached;
  const std::vector<Expansion>* proposals;
  std::vector<Expansion> local;
  if (nets.cache != nullptr) {
    cached = nets.cache->proposals(policy, world, leaf.mol);
    proposals = cached.get();
  } else {
    local = propose(policy, world, leaf.mol);
    proposals = &local;
  }

  // Circular-route elimination: drop templates already used on the ancestor
  // chain of this leaf.
  std::unordered_set<TemplateId> used;
  for (const ReactionNode* a = leaf.parent; a != nullptr;
       a = a->parent != nullptr ? a->parent->parent : nullptr) {
    used.insert(a->tmpl);
  }

  leaf.expanded = true;
  for (const Expansion& e : *proposals) {
    if (used.contains(e.tmpl)) continue;
    ReactionNode* rn = tree.new_reaction(e.tmpl, e.prior, &leaf);
    for (const Molecule& m : e.reactants) {
      LeafStatus terminal = LeafStatus::Open;
      if (is_building_block(world, m)) {
        terminal = LeafStatus::BuildingBlock;
      } else if (is_dead_end(world, m)) {
        terminal = LeafStatus::DeadEnd;
      }
      double vs, vc;
      if (terminal == LeafStatus::Open) {
        std::tie(vs, vc) = nets.open_leaf_values(m);
      } else {
        std::tie(vs, vc) = terminal_values(terminal, cfg.mode, cfg.cost);
      }
      tree.new_molecule(m, rn, leaf.depth + 1, terminal, vs, vc);
    }
    refresh_reaction(*rn, cfg);
  }

  if (leaf.children.empty()) {
    leaf.tree_dead = true;
    auto [vs, vc] = terminal_values(LeafStatus::DeadEnd, cfg.mode, cfg.cost);
    leaf.v_syn = vs;
    leaf.v_cost = vc;
  } else {
    try_mark_solved(&leaf);
  }
}

void backup(const SimulationPath& path, const MctsConfig& cfg) {
  if (path.mols.empty() || path.mols.size() != path.rxns.size() + 1) {
    throw std::invalid_argument("backup: malformed path");
  }
  for (size_t l = 0; l < path.rxns.size(); ++l) {
    if (!path.mols[l]->expanded) throw std::invalid_argument("backup: unexpanded interior node");
  }

  const size_t levels = path.rxns.size();
  const bool use_cost = cfg.mode != ValueMode::NoCost;

  // Path values, bottom-up from the leaf's current estimate. Off-path
  // siblings contribute their running averages.
  std::vector<double> vt_syn(levels + 1), vt_cost(levels + 1);
  vt_syn[levels] = path.mols[levels]->v_syn;
  vt_cost[levels] = path.mols[levels]->v_cost;
  for (size_t l = levels; l-- > 0;) {
    const ReactionNode* rn = path.rxns[l];
    const MoleculeNode* on_path = path.mols[l + 1];
    double s = vt_syn[l + 1];
    double c = vt_cost[l + 1] + cfg.cost.c_rxn;
    for (const MoleculeNode* child : rn->children) {
      if (child == on_path) continue;
      s *= child->v_syn;
      c += child->v_cost;
    }
    vt_syn[l] = s;
    vt_cost[l] = use_cost ? c : 0.0;
  }

  // Running-average merge and visit counts, then reaction refresh from the
  // merged child values.
  for (size_t l = 0; l <= levels; ++l) {
    MoleculeNode* m = path.mols[l];
    const double n = static_cast<double>(m->visits);
    m->v_syn = (m->v_syn * n + vt_syn[l]) / (n + 1.0);
    m->v_cost = use_cost ? (m->v_cost * n + vt_cost[l]) / (n + 1.0) : 0.0;
    ++m->visits;
  }
  for (size_t l = 0; l < levels; ++l) {
    ++path.rxns[l]->visits;
    refresh_reaction(*path.rxns[l], cfg);
  }
}

const char* to_string(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::Solved: return "solved";
    case EpisodeOutcome::DeadEnd: return "dead-end";
    case EpisodeOutcome::DepthLimit: return "depth-limit";
    case EpisodeOutcome::NoAction: return "no-action";
  }
  return "?";
}

namespace {

void simulate(SearchTree& tree, MoleculeNode* root, const TwoBranchPolicy& policy,
              const NetEvaluator& nets, const WorldSpec& world, const MctsConfig& cfg, Rng& rng,
              EpisodeStats& stats) {
  SimulationPath path;
  path.mols.push_back(root);
  MoleculeNode* cur = root;
  while (cur->terminal == LeafStatus::Open && cur->expanded && !cur->children.empty()) {
    ReactionNode* rn = puct_select(*cur, cfg);
    path.rxns.push_back(rn);
    cur = select_child_molecule(*rn, rng);
    path.mols.push_back(cur);
  }
  if (cur->terminal == LeafStatus::Open && !cur->expanded && cur->depth < cfg.max_depth) {
    expand(tree, *cur, policy, nets, world, cfg);
    ++stats.expansions;
  }
  backup(path, cfg);
  ++stats.simulations;
  if (tree.trace_enabled()) {
    std::vector<int> ids;
    ids.reserve(path.mols.size() + path.rxns.size());
    for (size_t i = 0; i < path.mols.size(); ++i) {
      ids.push_back(path.mols[i]->id);
      if (i < path.rxns.size()) ids.push_back(path.rxns[i]->id);
    }
    tree.trace.sims.push_back(std::move(ids));
  }
}

RouteTree build_committed_route(const MoleculeNode* node,
                                const std::map<const MoleculeNode*, const ReactionNode*>& commits,
                                const std::map<const MoleculeNode*, const MoleculeNode*>& bridge) {
  for (auto it = bridge.find(node); it != bridge.end(); it = bridge.find(node)) {
    node = it->second;
  }
  if (auto it = commits.find(node); it != commits.end()) {
    std::vector<RouteTree> kids;
    for (const MoleculeNode* c : it->second->children) {
      kids.push_back(build_committed_route(c, commits, bridge));
    }
    return RouteTree::make_internal(node->mol, it->second->tmpl, std::move(kids));
  }
  return RouteTree::make_leaf(node->mol, node->terminal);
}

}  // namespace

EpisodeResult run_episode(const Molecule& target, const TwoBranchPolicy& policy,
                          const NetEvaluator& nets, const WorldSpec& world, const MctsConfig& cfg,
                          uint64_t seed, bool enable_trace) {
  validate(cfg);
  if (is_building_block(world, target) || is_dead_end(world, target)) {
    throw std::invalid_argument("run_episode: terminal target: " + target.id);
  }

  Rng rng(derive_seed(seed, 0x65706973ull));
  EpisodeResult result;
  result.trees.push_back(std::make_unique<SearchTree>(enable_trace));
  SearchTree* tree = result.trees.back().get();
  auto [vs, vc] = nets.open_leaf_values(target);
  MoleculeNode* first_root = tree->new_molecule(target, nullptr, 0, LeafStatus::Open, vs, vc);

  std::deque<MoleculeNode*> pending{first_root};
  std::map<const MoleculeNode*, const ReactionNode*> commits;
  std::map<const MoleculeNode*, const MoleculeNode*> bridge;
  result.outcome = EpisodeOutcome::Solved;

  while (!pending.empty()) {
    MoleculeNode* node;
    if (cfg.root_order == RootOrder::Fifo) {
      node = pending.front();
      pending.pop_front();
    } else {
      node = pending.back();
      pending.pop_back();
    }
    if (node->depth >= cfg.max_depth) {
      result.outcome = EpisodeOutcome::DepthLimit;
      break;
    }

    MoleculeNode* root = node;
    if (!cfg.tree_reuse && node != first_root) {
      result.trees.push_back(std::make_unique<SearchTree>(enable_trace));
      tree = result.trees.back().get();
      auto [rs, rc] = nets.open_leaf_values(node->mol);
      root = tree->new_molecule(node->mol, nullptr, node->depth, LeafStatus::Open, rs, rc);
      bridge[node] = root;
    } else if (cfg.tree_reuse) {
      tree = result.trees.front().get();
    }

    for (int s = 0; s < cfg.simulations; ++s) {
      simulate(*tree, root, policy, nets, world, cfg, rng, result.stats);
    }
    if (root->children.empty()) {
      result.outcome = EpisodeOutcome::NoAction;
      break;
    }

    // Search probabilities from visit counts (priors if nothing was visited).
    const ReactionNode* chosen = nullptr;
    if (cfg.greedy_root) {
      for (const ReactionNode* rn : root->children) {
        if (chosen == nullptr || rn->visits > chosen->visits ||
            (rn->visits == chosen->visits && rn->tmpl < chosen->tmpl)) {
          chosen = rn;
        }
      }
    } else {
      std::vector<double> w;
      w.reserve(root->children.size());
      double total = 0;
      for (const ReactionNode* rn : root->children) {
        w.push_back(static_cast<double>(rn->visits));
        total += rn->visits;
      }
      if (total == 0) {
        w.clear();
        for (const ReactionNode* rn : root->children) w.push_back(rn->prior);
      }
      chosen = root->children[rng.weighted(w)];
    }
    commits[node] = chosen;
    ++result.stats.root_moves;

    bool dead = false;
    for (MoleculeNode* c : chosen->children) {
      if (c->terminal == LeafStatus::DeadEnd) dead = true;
    }
    if (dead) {
      result.outcome = EpisodeOutcome::DeadEnd;
      break;
    }
    for (MoleculeNode* c : chosen->children) {
      if (c->terminal == LeafStatus::Open) pending.push_back(c);
    }
  }

  result.route = build_committed_route(first_root, commits, bridge);
  return result;
}

void check_tree_invariants(const SearchTree& tree, const MctsConfig& cfg) {
  auto fail = [](const std::string& what) { throw std::logic_error("tree invariant: " + what); };
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    if (m.v_syn < 0 || m.v_syn > 1) fail("v_syn outside [0,1]");
    if (m.v_cost < 0) fail("negative v_cost");
    if (m.depth > cfg.max_depth) fail("node beyond depth limit");
    if (cfg.mode != ValueMode::SingleValue) {
      if (m.terminal == LeafStatus::BuildingBlock && (m.v_syn != 1 || m.v_cost != 0 || !m.solved)) {
        fail("building-block values");
      }
      if (m.terminal == LeafStatus::DeadEnd && (m.v_syn != 0 || m.solved)) fail("dead-end values");
    }
  }
  for (const ReactionNode& rn : tree.reaction_nodes()) {
    if (rn.r < 0 || rn.r > 1) fail("R outside [0,1]");
    if (rn.q < 0) fail("negative Q");
    double r = 1, qsum = 0;
    for (const MoleculeNode* c : rn.children) {
      r *= c->v_syn;
      qsum += c->v_cost;
    }
    const double q = cfg.mode == ValueMode::NoCost ? 0.0 : cfg.cost.c_rxn + qsum;
    if (rn.r != r || rn.q != q) fail("reaction node out of sync with children");
  }
}

}  // namespace pdvn
