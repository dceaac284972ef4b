#include "pdvn/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pdvn/util.hpp"

namespace pdvn::pipeline {

namespace {

std::string hex16(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string provenance_line(uint64_t config_hash, uint64_t seed) {
  return "# config_hash=" + hex16(config_hash) + " seed=" + std::to_string(seed) + "\n";
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const auto hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_command_config(const RunConfig& cfg, const std::string& command) {
  write_file(fs::path(cfg.out_dir) / (command + "_config.txt"),
             provenance_line(cfg.config_hash(), cfg.seed) + cfg.to_text());
}

}  // namespace

MctsConfig RunConfig::mcts_config() const {
  MctsConfig m;
  m.c_puct = c_puct;
  m.simulations = simulations;
  m.max_depth = max_depth;
  m.top_k = top_k;
  m.cost = CostModel{c_rxn, c_dead};
  if (root_order == "fifo") {
    m.root_order = RootOrder::Fifo;
  } else if (root_order == "lifo") {
    m.root_order = RootOrder::Lifo;
  } else {
    throw std::invalid_argument("config: root_order must be fifo or lifo");
  }
  m.tree_reuse = tree_reuse;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.target_batch = target_batch;
  t.mini_batch = mini_batch;
  t.lr = lr;
  t.epochs = epochs;
  t.alpha = alpha;
  auto m = train_mode_from_string(mode);
  if (!m.has_value()) throw std::invalid_argument("config: unknown mode '" + mode + "'");
  t.mode = *m;
  t.grad_passes = grad_passes;
  t.workers = workers;
  t.self_imitation_budget = budget;
  t.seed = seed;
  t.trace_dir = trace_dir;
  t.mcts = mcts_config();
  t.mcts.mode = value_mode_for(*m);
  return t;
}

PlannerBudget RunConfig::planner_budget() const {
  PlannerBudget b;
  b.max_calls = budget;
  b.checkpoints.clear();
  for (int c : checkpoints) {
    if (c <= budget) b.checkpoints.push_back(c);
  }
  if (b.checkpoints.empty() || b.checkpoints.back() != budget) b.checkpoints.push_back(budget);
  return b;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n";
  os << "workers = " << workers << "\n";
  os << "world_file = " << world_file << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "reference_file = " << reference_file << "\n";
  os << "model_dir = " << model_dir << "\n";
  os << "targets_file = " << targets_file << "\n";
  os << "trace_dir = " << trace_dir << "\n";
  os << "timing = " << (with_timing ? "wall" : "none") << "\n";
  os << "\n[world]\n";
  os << "rules = " << n_rules << "\n";
  os << "poison_rule_frac = " << poison_rule_frac << "\n";
  os << "\n[pretrain]\n";
  os << "train_targets = " << train_targets << "\n";
  os << "heldout_targets = " << heldout_targets << "\n";
  os << "route_max_depth = " << route_max_depth << "\n";
  os << "sl_epochs = " << sl_epochs << "\n";
  os << "sl_batch = " << sl_batch << "\n";
  os << "sl_val_fraction = " << sl_val_fraction << "\n";
  os << "\n[planning]\n";
  os << "c_puct = " << c_puct << "\n";
  os << "simulations = " << simulations << "\n";
  os << "max_depth = " << max_depth << "\n";
  os << "top_k = " << top_k << "\n";
  os << "c_rxn = " << c_rxn << "\n";
  os << "c_dead = " << c_dead << "\n";
  os << "root_order = " << root_order << "\n";
  os << "tree_reuse = " << (tree_reuse ? "true" : "false") << "\n";
  os << "\n[training]\n";
  os << "target_batch = " << target_batch << "\n";
  os << "mini_batch = " << mini_batch << "\n";
  os << "lr = " << lr << "\n";
  os << "epochs = " << epochs << "\n";
  os << "alpha = " << alpha << "\n";
  os << "mode = " << mode << "\n";
  os << "grad_passes = " << grad_passes << "\n";
  os << "\n[evaluation]\n";
  os << "budget = " << budget << "\n";
  os << "checkpoints = ";
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    if (i > 0) os << ",";
    os << checkpoints[i];
  }
  os << "\n";
  os << "planners = ";
  for (size_t i = 0; i < planners.size(); ++i) {
    if (i > 0) os << ";";
    os << planners[i];
  }
  os << "\n";
  return os.str();
}

uint64_t RunConfig::config_hash() const { return fnv1a64(to_text()); }

void save_bundle(const fs::path& dir, const Bundle& bundle) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "pdvn-bundle-v1";
  manifest["mode"] = to_string(bundle.mode);
  manifest["config_hash"] = hex16(bundle.config_hash);
  manifest["seed"] = bundle.seed;
  manifest["top_k"] = bundle.policy.top_k;
  nlohmann::json nets = nlohmann::json::object();
  nets["reference"] = "reference.net";
  nets["learnable"] = "learnable.net";
  save_mlp(bundle.policy.reference, dir / "reference.net");
  save_mlp(bundle.policy.learnable, dir / "learnable.net");
  if (bundle.nets.syn.has_value()) {
    nets["value_syn"] = "value_syn.net";
    save_mlp(*bundle.nets.syn, dir / "value_syn.net");
  }
  if (bundle.nets.cost.has_value()) {
    const char* name =
        bundle.mode == TrainMode::SingleValue ? "value_single.net" : "value_cost.net";
    nets[bundle.mode == TrainMode::SingleValue ? "value_single" : "value_cost"] = name;
    save_mlp(*bundle.nets.cost, dir / name);
  }
  manifest["networks"] = nets;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Bundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("bundle: missing manifest " + manifest_path.string());
  }
  nlohmann::json manifest = nlohmann::json::parse(read_file(manifest_path));
  if (manifest.value("format", "") != "pdvn-bundle-v1") {
    throw std::runtime_error("bundle: unsupported format in " + manifest_path.string());
  }
  Bundle b;
  auto mode = train_mode_from_string(manifest.value("mode", ""));
  if (!mode.has_value()) throw std::runtime_error("bundle: unknown mode");
  b.mode = *mode;
  b.config_hash = std::stoull(manifest.value("config_hash", "0"), nullptr, 16);
  b.seed = manifest.value("seed", 0ull);
  const auto& nets = manifest.at("networks");
  b.policy.reference = load_mlp(dir / nets.at("reference").get<std::string>());
  b.policy.learnable = load_mlp(dir / nets.at("learnable").get<std::string>());
  b.policy.top_k = manifest.value("top_k", 50);
  if (nets.contains("value_syn")) {
    b.nets.syn = load_mlp(dir / nets.at("value_syn").get<std::string>());
  }
  if (nets.contains("value_cost")) {
    b.nets.cost = load_mlp(dir / nets.at("value_cost").get<std::string>());
  } else if (nets.contains("value_single")) {
    b.nets.cost = load_mlp(dir / nets.at("value_single").get<std::string>());
  }
  return b;
}

void save_targets(const fs::path& path, const std::vector<Molecule>& targets,
                  uint64_t config_hash, uint64_t seed) {
  std::string out = provenance_line(config_hash, seed);
  for (const auto& m : targets) out += m.id + "\n";
  write_file(path, out);
}

std::vector<Molecule> load_targets(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Molecule> targets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    targets.emplace_back(line);
  }
  if (targets.empty()) throw std::runtime_error("targets file is empty: " + path.string());
  return targets;
}

GenWorldResult cmd_gen_world(const RunConfig& cfg) {
  WorldGenOptions opt;
  opt.n_rules = cfg.n_rules;
  opt.seed = cfg.seed;
  opt.poison_rule_frac = cfg.poison_rule_frac;
  WorldSpec world = generate_world(opt);
  world.config_hash = cfg.config_hash();
  GenWorldResult result;
  result.world_path =
      cfg.world_file.empty() ? fs::path(cfg.out_dir) / "world.txt" : fs::path(cfg.world_file);
  fs::create_directories(result.world_path.parent_path().empty()
                             ? "."
                             : result.world_path.parent_path());
  save_world(world, result.world_path);
  write_command_config(cfg, "gen-world");
  return result;
}

PretrainResult cmd_pretrain(const RunConfig& cfg) {
  if (cfg.world_file.empty()) throw std::invalid_argument("pretrain: --world is required");
  const WorldSpec world = load_world(cfg.world_file);
  ThreadPool pool(resolve_workers(cfg.workers));

  // Sample routes until the requested number of distinct training targets is
  // reached, then keep sampling for a disjoint held-out set.
  std::vector<Molecule> train_targets, heldout;
  std::set<std::string> seen;
  std::vector<std::pair<Molecule, TemplateId>> corpus;
  const int chunk = std::max(64, cfg.train_targets / 4);
  int iteration = 0;
  while (static_cast<int>(train_targets.size()) < cfg.train_targets) {
    if (iteration > 1000) throw WorldGenError("pretrain: cannot reach the target count");
    auto routes = sample_training_routes(world, chunk, cfg.route_max_depth,
                                         derive_seed(cfg.seed, 0x636f72707573ull, iteration++));
    for (auto& route : routes) {
      if (static_cast<int>(train_targets.size()) >= cfg.train_targets) break;
      if (!seen.insert(route.mol.id).second) continue;
      train_targets.push_back(route.mol);
      auto pairs = route_pairs(route);
      corpus.insert(corpus.end(), pairs.begin(), pairs.end());
    }
  }
  while (static_cast<int>(heldout.size()) < cfg.heldout_targets) {
    if (iteration > 2000) throw WorldGenError("pretrain: cannot reach the held-out count");
    auto routes = sample_training_routes(world, chunk, cfg.route_max_depth,
                                         derive_seed(cfg.seed, 0x68656c646f7574ull, iteration++));
    for (auto& route : routes) {
      if (static_cast<int>(heldout.size()) >= cfg.heldout_targets) break;
      if (!seen.insert(route.mol.id).second) continue;
      heldout.push_back(route.mol);
    }
  }

  PretrainConfig pc;
  pc.epochs = cfg.sl_epochs;
  pc.mini_batch = cfg.sl_batch;
  pc.lr = cfg.lr;
  pc.val_fraction = cfg.sl_val_fraction;
  pc.seed = cfg.seed;
  SlReport report;
  Mlp reference = pretrain_reference(world, corpus, pc, &report, &pool);

  PretrainResult result;
  result.report = report;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  result.reference_path = out / "reference.net";
  save_mlp(reference, result.reference_path);
  const uint64_t hash = cfg.config_hash();
  result.targets_path = out / "train_targets.txt";
  save_targets(result.targets_path, train_targets, hash, cfg.seed);
  result.heldout_path = out / "heldout_targets.txt";
  save_targets(result.heldout_path, heldout, hash, cfg.seed);
  result.report_path = out / "sl_report.txt";
  write_file(result.report_path,
             provenance_line(hash, cfg.seed) + "corpus_pairs\t" + std::to_string(corpus.size()) +
                 "\n" + report.to_text());
  write_command_config(cfg, "pretrain");
  return result;
}

TrainCmdResult cmd_train(const RunConfig& cfg) {
  if (cfg.world_file.empty()) throw std::invalid_argument("train: --world is required");
  if (cfg.reference_file.empty()) throw std::invalid_argument("train: --reference is required");
  if (cfg.targets_file.empty()) throw std::invalid_argument("train: --targets is required");
  const WorldSpec world = load_world(cfg.world_file);
  const Mlp reference = load_mlp(cfg.reference_file);
  const auto targets = load_targets(cfg.targets_file);
  TrainConfig tc = cfg.train_config();
  ThreadPool pool(resolve_workers(cfg.workers));

  const fs::path out(cfg.out_dir);
  const uint64_t hash = cfg.config_hash();
  auto hook = [&](int epoch, const TwoBranchPolicy& policy, const ValueNets& nets,
                  const TrainLog&) {
    Bundle b{tc.mode, policy, nets, hash, cfg.seed};
    save_bundle(out / ("epoch_" + std::to_string(epoch)), b);
  };
  TrainResult trained = pdvn_train(world, reference, targets, tc, &pool, hook);

  TrainCmdResult result;
  result.bundle_dir = out / "final";
  save_bundle(result.bundle_dir, Bundle{tc.mode, trained.policy, trained.nets, hash, cfg.seed});
  result.log_path = out / "training.csv";
  write_file(result.log_path, trained.log.to_csv(hash, cfg.seed, cfg.with_timing));
  result.log = std::move(trained.log);
  write_command_config(cfg, "train");
  return result;
}

LeafValueFn make_leaf_heuristic(TrainMode mode, const ValueNets& nets, const CostModel& cm) {
  auto cache = std::make_shared<EvalCache>();
  switch (mode) {
    case TrainMode::Pdvn: {
      if (!nets.syn.has_value() || !nets.cost.has_value()) {
        throw std::invalid_argument("heuristic: dual-value networks missing");
      }
      const Mlp* syn = &*nets.syn;
      const Mlp* cost = &*nets.cost;
      return [cache, syn, cost, cm](const Molecule& m) {
        auto [vs, vc] = cache->leaf_values(syn, cost, m);
        vs = std::clamp(vs, 0.0, 1.0);
        return vs * std::max(0.0, vc) + (1.0 - vs) * cm.c_dead;
      };
    }
    case TrainMode::SingleValue: {
      if (!nets.cost.has_value()) throw std::invalid_argument("heuristic: V^single missing");
      const Mlp* cost = &*nets.cost;
      return [cache, cost](const Molecule& m) {
        return std::max(0.0, cache->leaf_values(nullptr, cost, m).second);
      };
    }
    case TrainMode::NoCost: {
      if (!nets.syn.has_value()) throw std::invalid_argument("heuristic: V^syn missing");
      const Mlp* syn = &*nets.syn;
      return [cache, syn, cm](const Molecule& m) {
        const double vs = std::clamp(cache->leaf_values(syn, nullptr, m).first, 0.0, 1.0);
        return (1.0 - vs) * cm.c_dead;
      };
    }
    case TrainMode::SelfImitation: return nullptr;  // zero heuristic
  }
  return nullptr;
}

namespace {

struct ParsedPlanner {
  std::string name;
  std::string kind;
  std::string model;
};

ParsedPlanner parse_planner_spec(const std::string& s) {
  ParsedPlanner p;
  std::string rest = s;
  if (auto eq = rest.find('='); eq != std::string::npos) {
    p.name = rest.substr(0, eq);
    rest = rest.substr(eq + 1);
  }
  if (auto at = rest.find('@'); at != std::string::npos) {
    p.kind = rest.substr(0, at);
    p.model = rest.substr(at + 1);
  } else {
    p.kind = rest;
    p.model = "ref";
  }
  if (p.name.empty()) p.name = p.kind + "@" + p.model;
  static const std::set<std::string> kinds{"greedy", "retro0", "retro-pdvn", "retro-syn",
                                           "retro-single"};
  if (!kinds.contains(p.kind)) {
    throw std::invalid_argument("eval: unknown planner kind '" + p.kind + "'");
  }
  if (p.model != "ref" && p.model != "trained") {
    throw std::invalid_argument("eval: planner model must be ref or trained");
  }
  return p;
}

std::string guided_kind_for(TrainMode mode) {
  switch (mode) {
    case TrainMode::Pdvn: return "retro-pdvn";
    case TrainMode::SingleValue: return "retro-single";
    case TrainMode::NoCost: return "retro-syn";
    case TrainMode::SelfImitation: return "retro0";
  }
  return "retro0";
}

}  // namespace

EvalCmdResult cmd_eval(const RunConfig& cfg) {
  if (cfg.world_file.empty()) throw std::invalid_argument("eval: --world is required");
  if (cfg.targets_file.empty()) throw std::invalid_argument("eval: --targets is required");
  const WorldSpec world = load_world(cfg.world_file);
  const auto targets = load_targets(cfg.targets_file);

  std::optional<Bundle> bundle;
  if (!cfg.model_dir.empty()) bundle = load_bundle(cfg.model_dir);
  std::optional<TwoBranchPolicy> ref_policy;
  if (!cfg.reference_file.empty()) {
    ref_policy = TwoBranchPolicy::from_reference(load_mlp(cfg.reference_file), cfg.top_k);
  }

  std::vector<std::string> specs = cfg.planners;
  if (specs.empty()) {
    specs.push_back("retro0@ref");
    if (bundle.has_value()) specs.push_back(guided_kind_for(bundle->mode) + "@trained");
  }

  std::vector<PlannerSpec> planner_specs;
  for (const auto& s : specs) {
    ParsedPlanner p = parse_planner_spec(s);
    PlannerSpec spec;
    spec.name = p.name;
    spec.dfs_max_depth = cfg.max_depth;
    if (p.model == "ref") {
      if (!ref_policy.has_value()) {
        throw std::invalid_argument("eval: planner '" + p.name + "' needs --reference");
      }
      spec.policy = &*ref_policy;
    } else {
      if (!bundle.has_value()) {
        throw std::invalid_argument("eval: planner '" + p.name + "' needs --model");
      }
      spec.policy = &bundle->policy;
    }
    if (p.kind == "greedy") {
      spec.kind = PlannerSpec::Kind::Greedy;
    } else {
      spec.kind = PlannerSpec::Kind::Retro;
      const CostModel cm{cfg.c_rxn, cfg.c_dead};
      if (p.kind == "retro0") {
        spec.value_fn = nullptr;
      } else if (!bundle.has_value()) {
        throw std::invalid_argument("eval: planner '" + p.name + "' needs --model");
      } else if (p.kind == "retro-pdvn") {
        spec.value_fn = make_leaf_heuristic(TrainMode::Pdvn, bundle->nets, cm);
      } else if (p.kind == "retro-syn") {
        spec.value_fn = make_leaf_heuristic(TrainMode::NoCost, bundle->nets, cm);
      } else if (p.kind == "retro-single") {
        spec.value_fn = make_leaf_heuristic(TrainMode::SingleValue, bundle->nets, cm);
      }
    }
    planner_specs.push_back(std::move(spec));
  }

  ThreadPool pool(resolve_workers(cfg.workers));
  EvalReport report = evaluate(targets, planner_specs, cfg.planner_budget(),
                               CostModel{cfg.c_rxn, cfg.c_dead}, world, &pool);

  EvalCmdResult result;
  result.report = report;
  const fs::path out(cfg.out_dir);
  const uint64_t hash = cfg.config_hash();
  result.csv_path = out / "eval.csv";
  write_file(result.csv_path, report.to_csv(hash, cfg.seed));
  result.summary_path = out / "eval_summary.txt";
  write_file(result.summary_path, provenance_line(hash, cfg.seed) + report.to_summary());
  write_command_config(cfg, "eval");
  return result;
}

AblateCmdResult cmd_ablate(const RunConfig& cfg) {
  static const std::vector<std::string> kModes{"pdvn", "single-value", "no-cost",
                                               "self-imitation"};
  AblateCmdResult result;
  std::string combined;
  for (const auto& mode : kModes) {
    RunConfig sub = cfg;
    sub.mode = mode;
    sub.out_dir = (fs::path(cfg.out_dir) / mode).string();
    TrainCmdResult trained = cmd_train(sub);
    RunConfig eval_cfg = sub;
    eval_cfg.model_dir = trained.bundle_dir.string();
    eval_cfg.planners.clear();  // baseline + the mode's guided planner
    EvalCmdResult eval = cmd_eval(eval_cfg);
    combined += "== mode: " + mode + " ==\n" + eval.report.to_summary() + "\n";
    result.per_mode.emplace_back(mode, std::move(eval));
  }
  result.summary_path = fs::path(cfg.out_dir) / "ablation_summary.txt";
  write_file(result.summary_path, provenance_line(cfg.config_hash(), cfg.seed) + combined);
  return result;
}

std::string cmd_report(const std::vector<fs::path>& eval_csvs) {
  std::string out;
  for (const auto& path : eval_csvs) {
    std::istringstream in(read_file(path));
    std::string line;
    std::vector<EvalRow> rows;
    std::vector<int> checkpoints;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("planner,", 0) == 0) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string field;
      while (std::getline(ls, field, ',')) f.push_back(field);
      if (f.size() < 10) throw std::runtime_error("report: malformed row in " + path.string());
      const int checkpoint = std::stoi(f[1]);
      EvalRow* row = nullptr;
      for (auto& r : rows) {
        if (r.planner == f[0]) row = &r;
      }
      if (row == nullptr) {
        rows.emplace_back();
        row = &rows.back();
        row->planner = f[0];
        row->avg_calls_solved = std::stod(f[3]);
        row->avg_reaction_nodes = std::stod(f[4]);
        row->avg_molecule_nodes = std::stod(f[5]);
        row->avg_route_length_common = std::stod(f[6]);
        row->solved = std::stoi(f[7]);
        row->targets = std::stoi(f[8]);
        row->common_count = std::stoi(f[9]);
      }
      row->success_at[checkpoint] = std::stod(f[2]);
      if (std::find(checkpoints.begin(), checkpoints.end(), checkpoint) == checkpoints.end()) {
        checkpoints.push_back(checkpoint);
      }
    }
    EvalReport report;
    report.rows = std::move(rows);
    report.checkpoints = std::move(checkpoints);
    out += "== " + path.string() + " ==\n" + report.to_summary() + "\n";
  }
  return out;
}

}  // namespace pdvn::pipeline
