#include "pdvn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace pdvn {

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Pdvn: return "pdvn";
    case TrainMode::SingleValue: return "single-value";
    case TrainMode::NoCost: return "no-cost";
    case TrainMode::SelfImitation: return "self-imitation";
  }
  return "?";
}

std::optional<TrainMode> train_mode_from_string(std::string_view s) {
  if (s == "pdvn") return TrainMode::Pdvn;
  if (s == "single-value") return TrainMode::SingleValue;
  if (s == "no-cost") return TrainMode::NoCost;
  if (s == "self-imitation") return TrainMode::SelfImitation;
  return std::nullopt;
}

ValueMode value_mode_for(TrainMode m) {
  switch (m) {
    case TrainMode::SingleValue: return ValueMode::SingleValue;
    case TrainMode::NoCost: return ValueMode::NoCost;
    default: return ValueMode::Dual;
  }
}

std::vector<char> label_solved(const SearchTree& tree) {
  std::vector<char> solved(tree.node_count(), 0);
  const auto& mols = tree.molecule_nodes();
  // Children are always created after their ancestors, so one reverse sweep
  // reaches the fixpoint.
  for (auto it = mols.rbegin(); it != mols.rend(); ++it) {
    const MoleculeNode& m = *it;
    bool ok = m.terminal == LeafStatus::BuildingBlock;
    for (const ReactionNode* rn : m.children) {
      if (ok) break;
      if (rn->children.empty()) continue;
      bool all = true;
      for (const MoleculeNode* c : rn->children) {
        if (!solved[c->id]) {
          all = false;
          break;
        }
      }
      ok = all;
    }
    solved[m.id] = ok ? 1 : 0;
  }
  return solved;
}

std::vector<double> min_cost(const SearchTree& tree, const std::vector<char>& solved,
                             const CostModel& cm) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(tree.node_count(), kInf);
  const auto& mols = tree.molecule_nodes();
  for (auto it = mols.rbegin(); it != mols.rend(); ++it) {
    const MoleculeNode& m = *it;
    if (!solved[m.id]) continue;
    if (m.terminal == LeafStatus::BuildingBlock) {
      cost[m.id] = 0;
      continue;
    }
    double best = kInf;
    for (const ReactionNode* rn : m.children) {
      if (rn->children.empty()) continue;
      double c = cm.c_rxn;
      bool all = true;
      for (const MoleculeNode* child : rn->children) {
        if (!solved[child->id]) {
          all = false;
          break;
        }
        c += cost[child->id];
      }
      if (all) best = std::min(best, c);
    }
    cost[m.id] = best;
  }
  return cost;
}

double min_cost_at(const std::vector<double>& costs, const MoleculeNode& node) {
  const double c = costs.at(node.id);
  if (!std::isfinite(c)) {
    throw std::invalid_argument("min_cost: node is unsolved: " + node.mol.id);
  }
  return c;
}

std::vector<TrainingExample> extract_policy_targets(const SearchTree& tree,
                                                    const std::vector<char>& solved,
                                                    const std::vector<double>& costs,
                                                    const CostModel& cm) {
  std::vector<TrainingExample> out;
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    if (!solved[m.id] || !m.expanded || m.terminal != LeafStatus::Open || m.children.empty()) {
      continue;
    }
    const ReactionNode* best = nullptr;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const ReactionNode* rn : m.children) {
      if (rn->children.empty()) continue;
      double c = cm.c_rxn;
      bool all = true;
      for (const MoleculeNode* child : rn->children) {
        if (!solved[child->id]) {
          all = false;
          break;
        }
        c += costs[child->id];
      }
      if (!all) continue;
      if (best == nullptr || c < best_cost || (c == best_cost && rn->tmpl < best->tmpl)) {
        best = rn;
        best_cost = c;
      }
    }
    if (best == nullptr) continue;  // solved via no reaction cannot happen, but stay safe
    TrainingExample ex;
    ex.kind = TrainingExample::Kind::Policy;
    ex.mol = m.mol.id;
    ex.target_template = best->tmpl;
    for (const ReactionNode* rn : m.children) ex.mask.push_back(rn->tmpl);
    std::sort(ex.mask.begin(), ex.mask.end());
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> extract_syn_targets(const SearchTree& tree,
                                                 const std::vector<char>& solved, double alpha) {
  std::vector<TrainingExample> out;
  out.reserve(tree.molecule_nodes().size());
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    TrainingExample ex;
    ex.kind = TrainingExample::Kind::Syn;
    ex.mol = m.mol.id;
    if (solved[m.id]) {
      ex.target_value = 1.0;
    } else if (m.terminal == LeafStatus::DeadEnd) {
      ex.target_value = 0.0;
    } else {
      ex.target_value = alpha * m.v_syn;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> extract_cost_targets(const SearchTree& tree,
                                                  const std::vector<char>& solved,
                                                  const std::vector<double>& costs) {
  std::vector<TrainingExample> out;
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    if (!solved[m.id]) continue;
    TrainingExample ex;
    ex.kind = TrainingExample::Kind::Cost;
    ex.mol = m.mol.id;
    ex.target_value = costs[m.id];
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> extract_single_value_targets(const SearchTree& tree,
                                                          const std::vector<char>& solved,
                                                          const std::vector<double>& costs,
                                                          const CostModel& cm, double alpha) {
  std::vector<TrainingExample> out;
  out.reserve(tree.molecule_nodes().size());
  for (const MoleculeNode& m : tree.molecule_nodes()) {
    TrainingExample ex;
    ex.kind = TrainingExample::Kind::Cost;
    ex.mol = m.mol.id;
    if (solved[m.id]) {
      ex.target_value = costs[m.id];
    } else if (m.terminal == LeafStatus::DeadEnd) {
      ex.target_value = cm.c_dead;
    } else {
      ex.target_value = m.v_cost / alpha;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

NetEvaluator ValueNets::evaluator(ValueMode mode, EvalCache* cache) const {
  NetEvaluator ev;
  ev.mode = mode;
  ev.syn = syn.has_value() ? &*syn : nullptr;
  ev.cost = cost.has_value() ? &*cost : nullptr;
  ev.cache = cache;
  return ev;
}

namespace {

InputBatch make_input(const std::vector<TrainingExample>& ex, const std::vector<int>& idx,
                      size_t lo, size_t hi) {
  InputBatch b;
  b.rows.reserve(hi - lo);
  for (size_t i = lo; i < hi; ++i) {
    b.rows.push_back(featurize(Molecule(ex[idx[i]].mol)).active_bits());
  }
  return b;
}

struct HeadUpdate {
  double loss_sum = 0;
  int examples = 0;
};

}  // namespace

LossReport update_networks(const std::vector<TrainingExample>& examples, TwoBranchPolicy& policy,
                           ValueNets& nets, TrainState& state, const TrainConfig& cfg,
                           uint64_t shuffle_seed, ThreadPool* pool) {
  if (examples.empty()) throw std::invalid_argument("update_networks: no examples");

  std::vector<int> policy_idx, syn_idx, cost_idx;
  for (size_t i = 0; i < examples.size(); ++i) {
    switch (examples[i].kind) {
      case TrainingExample::Kind::Policy: policy_idx.push_back(static_cast<int>(i)); break;
      case TrainingExample::Kind::Syn: syn_idx.push_back(static_cast<int>(i)); break;
      case TrainingExample::Kind::Cost: cost_idx.push_back(static_cast<int>(i)); break;
    }
  }

  LossReport report;
  auto run_head = [&](std::vector<int>& idx, Mlp& net, AdamState& adam, LossKind loss,
                      uint64_t stream) -> HeadUpdate {
    HeadUpdate hu;
    if (idx.empty()) return hu;
    if (adam.m.empty()) adam = AdamState::for_net(net, cfg.lr);
    Rng rng(derive_seed(shuffle_seed, stream));
    rng.shuffle(idx);
    for (size_t lo = 0; lo < idx.size(); lo += cfg.mini_batch) {
      const size_t hi = std::min(idx.size(), lo + cfg.mini_batch);
      InputBatch batch = make_input(examples, idx, lo, hi);
      LossBatch targets;
      for (size_t i = lo; i < hi; ++i) {
        const auto& ex = examples[idx[i]];
        if (loss == LossKind::MaskedCrossEntropy) {
          targets.class_index.push_back(ex.target_template);
          targets.masks.push_back(ex.mask);
        } else {
          targets.value.push_back(ex.target_value);
        }
      }
      Gradients grads;
      const uint64_t drop_seed = derive_seed(cfg.seed, 0x64726f70ull, state.update_counter++);
      const double loss_val =
          loss_and_grad(net, batch, targets, loss, &grads, /*train_mode=*/true, drop_seed, pool);
      adam_step(net, adam, grads, pool);
      hu.loss_sum += loss_val * static_cast<double>(hi - lo);
      hu.examples += static_cast<int>(hi - lo);
    }
    return hu;
  };

  auto pol = run_head(policy_idx, policy.learnable, state.policy_adam,
                      LossKind::MaskedCrossEntropy, 0x706f6cull);
  report.policy_loss = pol.examples > 0 ? pol.loss_sum / pol.examples : 0;
  report.policy_examples = pol.examples;

  if (nets.syn.has_value()) {
    auto syn = run_head(syn_idx, *nets.syn, state.syn_adam, LossKind::BinaryCrossEntropy,
                        0x73796eull);
    report.syn_loss = syn.examples > 0 ? syn.loss_sum / syn.examples : 0;
    report.syn_examples = syn.examples;
  } else if (!syn_idx.empty()) {
    throw std::invalid_argument("update_networks: syn examples without a syn network");
  }

  if (nets.cost.has_value()) {
    auto cost = run_head(cost_idx, *nets.cost, state.cost_adam, LossKind::MeanSquaredError,
                         0x637374ull);
    report.cost_loss = cost.examples > 0 ? cost.loss_sum / cost.examples : 0;
    report.cost_examples = cost.examples;
  } else if (!cost_idx.empty()) {
    throw std::invalid_argument("update_networks: cost examples without a cost network");
  }
  return report;
}

std::string TrainLog::to_csv(uint64_t config_hash, uint64_t seed, bool with_timing) const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash));
  os << "# config_hash=" << buf << " seed=" << seed << "\n";
  os << "epoch,batch,solve_rate,policy_loss,syn_loss,cost_loss,wall_ms\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.solve_rate);
    os << r.epoch << ',' << r.batch << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.9g", r.policy_loss);
    os << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.9g", r.syn_loss);
    os << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.9g", r.cost_loss);
    os << ',' << buf;
    os << ',' << (with_timing ? r.wall_ms : 0) << "\n";
  }
  return os.str();
}

std::vector<EpisodeResult> run_episodes_parallel(const std::vector<Molecule>& targets,
                                                 const TwoBranchPolicy& policy,
                                                 const NetEvaluator& nets, const WorldSpec& world,
                                                 const MctsConfig& cfg, uint64_t batch_seed,
                                                 ThreadPool* pool, bool enable_trace) {
  std::vector<EpisodeResult> results(targets.size());
  parallel_chunks(pool, static_cast<int64_t>(targets.size()), 1, [&](int64_t lo, int64_t, int) {
    results[lo] = run_episode(targets[lo], policy, nets, world, cfg,
                              derive_seed(batch_seed, static_cast<uint64_t>(lo)), enable_trace);
  });
  return results;
}

namespace {

// Extraction for one episode under the given mode.
std::vector<TrainingExample> extract_examples(const EpisodeResult& episode, TrainMode mode,
                                              const TrainConfig& cfg) {
  std::vector<TrainingExample> out;
  for (const auto& tree : episode.trees) {
    const auto solved = label_solved(*tree);
    const auto costs = min_cost(*tree, solved, cfg.mcts.cost);
    auto policy_ex = extract_policy_targets(*tree, solved, costs, cfg.mcts.cost);
    out.insert(out.end(), std::make_move_iterator(policy_ex.begin()),
               std::make_move_iterator(policy_ex.end()));
    switch (mode) {
      case TrainMode::Pdvn: {
        auto syn = extract_syn_targets(*tree, solved, cfg.alpha);
        auto cost = extract_cost_targets(*tree, solved, costs);
        out.insert(out.end(), std::make_move_iterator(syn.begin()),
                   std::make_move_iterator(syn.end()));
        out.insert(out.end(), std::make_move_iterator(cost.begin()),
                   std::make_move_iterator(cost.end()));
        break;
      }
      case TrainMode::NoCost: {
        auto syn = extract_syn_targets(*tree, solved, cfg.alpha);
        out.insert(out.end(), std::make_move_iterator(syn.begin()),
                   std::make_move_iterator(syn.end()));
        break;
      }
      case TrainMode::SingleValue: {
        auto sv = extract_single_value_targets(*tree, solved, costs, cfg.mcts.cost, cfg.alpha);
        out.insert(out.end(), std::make_move_iterator(sv.begin()),
                   std::make_move_iterator(sv.end()));
        break;
      }
      case TrainMode::SelfImitation: break;
    }
  }
  return out;
}

}  // namespace

TrainResult pdvn_train(const WorldSpec& world, const Mlp& reference,
                       const std::vector<Molecule>& d_train, const TrainConfig& cfg,
                       ThreadPool* pool, const EpochHook& hook) {
  validate(cfg);
  if (d_train.empty()) throw std::invalid_argument("pdvn_train: empty training set");
  if (reference.out_dim != world.vocab_size() || reference.in_dim != kFingerprintBits) {
    throw std::invalid_argument("pdvn_train: reference model shape does not match world");
  }
  for (const auto& m : d_train) {
    if (is_building_block(world, m) || is_dead_end(world, m)) {
      throw std::invalid_argument("pdvn_train: terminal training target: " + m.id);
    }
  }

  TrainResult result;
  result.policy = TwoBranchPolicy::from_reference(reference, cfg.mcts.top_k);
  if (cfg.mode == TrainMode::Pdvn || cfg.mode == TrainMode::NoCost) {
    result.nets.syn = make_mlp(kFingerprintBits, 512, 1, OutputHead::Sigmoid,
                               derive_seed(cfg.seed, 0x7673796eull), 0.1);
  }
  if (cfg.mode == TrainMode::Pdvn || cfg.mode == TrainMode::SingleValue) {
    result.nets.cost = make_mlp(kFingerprintBits, 512, 1, OutputHead::Softplus,
                                derive_seed(cfg.seed, 0x76637374ull), 0.1);
  }

  MctsConfig mcts = cfg.mcts;
  mcts.mode = value_mode_for(cfg.mode);
  TrainState state;
  EvalCache cache;

  std::vector<int> order(d_train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x65706f6368ull));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    int batch_index = 0;
    for (size_t lo = 0; lo < order.size(); lo += cfg.target_batch, ++batch_index) {
      const size_t hi = std::min(order.size(), lo + cfg.target_batch);
      std::vector<Molecule> batch;
      batch.reserve(hi - lo);
      for (size_t i = lo; i < hi; ++i) batch.push_back(d_train[order[i]]);

      const auto t0 = std::chrono::steady_clock::now();
      const uint64_t batch_seed =
          derive_seed(cfg.seed, 0x6261746368ull, static_cast<uint64_t>(epoch),
                      static_cast<uint64_t>(batch_index));

      std::vector<TrainingExample> pooled;
      int solved_count = 0;

      if (cfg.mode == TrainMode::SelfImitation) {
        // Plan with the evaluation planner and imitate its successful routes.
        PlannerBudget budget;
        budget.max_calls = cfg.self_imitation_budget;
        budget.checkpoints = {cfg.self_imitation_budget};
        std::vector<PlannerResult> plans(batch.size());
        parallel_chunks(pool, static_cast<int64_t>(batch.size()), 1,
                        [&](int64_t s, int64_t, int) {
                          plans[s] = retro_star(batch[s], result.policy, nullptr, world, budget,
                                                cfg.mcts.cost, &cache);
                        });
        for (const auto& plan : plans) {
          if (!plan.stats.solved) continue;
          ++solved_count;
          for (const auto& [mol, tmpl] : route_pairs(*plan.route)) {
            TrainingExample ex;
            ex.kind = TrainingExample::Kind::Policy;
            ex.mol = mol.id;
            ex.target_template = tmpl;
            auto props = cache.proposals(result.policy, world, mol);
            for (const auto& e : *props) ex.mask.push_back(e.tmpl);
            std::sort(ex.mask.begin(), ex.mask.end());
            pooled.push_back(std::move(ex));
          }
        }
      } else {
        NetEvaluator ev = result.nets.evaluator(mcts.mode, &cache);
        const bool tracing = !cfg.trace_dir.empty();
        auto episodes = run_episodes_parallel(batch, result.policy, ev, world, mcts, batch_seed,
                                              pool, tracing);
        if (tracing) {
          namespace fs = std::filesystem;
          fs::create_directories(cfg.trace_dir);
          for (size_t s = 0; s < episodes.size(); ++s) {
            for (size_t t = 0; t < episodes[s].trees.size(); ++t) {
              std::string name = "episode_e" + std::to_string(epoch) + "_b" +
                                 std::to_string(batch_index) + "_s" + std::to_string(s) + "_t" +
                                 std::to_string(t) + ".trace";
              std::ofstream out(fs::path(cfg.trace_dir) / name);
              out << episodes[s].trees[t]->trace.to_text();
            }
          }
        }
        std::vector<std::vector<TrainingExample>> per_slot(episodes.size());
        parallel_chunks(pool, static_cast<int64_t>(episodes.size()), 1,
                        [&](int64_t s, int64_t, int) {
                          per_slot[s] = extract_examples(episodes[s], cfg.mode, cfg);
                        });
        for (size_t s = 0; s < episodes.size(); ++s) {
          if (episodes[s].outcome == EpisodeOutcome::Solved) ++solved_count;
          pooled.insert(pooled.end(), std::make_move_iterator(per_slot[s].begin()),
                        std::make_move_iterator(per_slot[s].end()));
        }
      }

      TrainLogRow row;
      row.epoch = epoch;
      row.batch = batch_index;
      row.solve_rate = static_cast<double>(solved_count) / static_cast<double>(batch.size());
      if (!pooled.empty()) {
        LossReport rep;
        for (int pass = 0; pass < cfg.grad_passes; ++pass) {
          rep = update_networks(pooled, result.policy, result.nets, state, cfg,
                                derive_seed(batch_seed, 0x73687566ull, pass), pool);
        }
        row.policy_loss = rep.policy_loss;
        row.syn_loss = rep.syn_loss;
        row.cost_loss = rep.cost_loss;
        cache.clear();  // parameters changed
      }
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      result.log.rows.push_back(row);
    }
    if (hook) hook(epoch, result.policy, result.nets, result.log);
  }
  return result;
}

}  // namespace pdvn
