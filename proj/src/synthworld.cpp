#include "pdvn/synthworld.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pdvn/util.hpp"

namespace pdvn {

namespace {

std::array<bool, 256> char_mask(const WorldSpec& world, bool with_poison) {
  std::array<bool, 256> mask{};
  for (char c : world.alphabet) mask[static_cast<unsigned char>(c)] = true;
  if (with_poison) mask[static_cast<unsigned char>(world.poison)] = true;
  return mask;
}

bool rule_applies(const WorldSpec& world, const std::string& id, TemplateId t) {
  return id.find(world.rules[t].pattern) != std::string::npos;
}

bool has_any_applicable(const WorldSpec& world, const std::string& id) {
  for (size_t t = 0; t < world.rules.size(); ++t) {
    if (id.find(world.rules[t].pattern) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

void check_molecule(const WorldSpec& world, const Molecule& m) {
  if (m.id.empty()) throw MalformedMoleculeError(m.id);
  auto mask = char_mask(world, true);
  for (char c : m.id) {
    if (!mask[static_cast<unsigned char>(c)]) throw MalformedMoleculeError(m.id);
  }
}

int reducible_mass(const WorldSpec& world, std::string_view s) {
  int mass = 0;
  for (char c : s) {
    if (c != world.poison) ++mass;
  }
  return mass;
}

void validate(const WorldSpec& world) {
  if (world.alphabet.empty()) throw std::invalid_argument("world: empty alphabet");
  {
    auto sorted = world.alphabet;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw std::invalid_argument("world: duplicate alphabet characters");
    }
  }
  if (world.alphabet.find(world.poison) != std::string::npos) {
    throw std::invalid_argument("world: poison character inside alphabet");
  }
  if (world.bb_max_len < 1) throw std::invalid_argument("world: bb_max_len < 1");
  if (world.rules.empty()) throw std::invalid_argument("world: no rules");
  auto alpha = char_mask(world, false);
  auto full = char_mask(world, true);
  for (size_t t = 0; t < world.rules.size(); ++t) {
    const auto& r = world.rules[t];
    auto fail = [&](const std::string& what) {
      throw std::invalid_argument("world: rule " + std::to_string(t) + ": " + what);
    };
    if (r.pattern.size() < 2 || r.pattern.size() > 4) fail("pattern length outside 2..4");
    for (char c : r.pattern) {
      if (!alpha[static_cast<unsigned char>(c)]) fail("pattern has non-alphabet character");
    }
    if (r.replacements.empty() || r.replacements.size() > 3) fail("fragment count outside 1..3");
    int total_mass = 0;
    for (const auto& f : r.replacements) {
      if (f.empty() || f.size() > 4) fail("fragment length outside 1..4");
      for (char c : f) {
        if (!full[static_cast<unsigned char>(c)]) fail("fragment has unknown character");
      }
      total_mass += reducible_mass(world, f);
    }
    if (total_mass >= static_cast<int>(r.pattern.size())) {
      fail("fragments do not lose reducible mass");
    }
  }
}

bool is_building_block(const WorldSpec& world, const Molecule& m) {
  check_molecule(world, m);
  return m.id.size() <= static_cast<size_t>(world.bb_max_len);
}

bool is_dead_end(const WorldSpec& world, const Molecule& m) {
  check_molecule(world, m);
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) return false;
  return !has_any_applicable(world, m.id);
}

std::vector<TemplateId> applicable_templates(const WorldSpec& world, const Molecule& m) {
  check_molecule(world, m);
  std::vector<TemplateId> out;
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) return out;
  for (size_t t = 0; t < world.rules.size(); ++t) {
    if (rule_applies(world, m.id, static_cast<TemplateId>(t))) {
      out.push_back(static_cast<TemplateId>(t));
    }
  }
  return out;
}

Expansion apply_template(const WorldSpec& world, const Molecule& m, TemplateId t) {
  check_molecule(world, m);
  if (t < 0 || t >= world.vocab_size()) throw TemplateMismatchError(m.id, t);
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) throw TemplateMismatchError(m.id, t);
  const auto& rule = world.rules[t];
  size_t pos = m.id.find(rule.pattern);
  if (pos == std::string::npos) throw TemplateMismatchError(m.id, t);

  Expansion e;
  e.tmpl = t;
  for (const auto& frag : rule.replacements) {
    std::string s = m.id.substr(0, pos) + frag + m.id.substr(pos + rule.pattern.size());
    e.reactants.emplace_back(std::move(s));
  }
  std::sort(e.reactants.begin(), e.reactants.end());
  e.reactants.erase(std::unique(e.reactants.begin(), e.reactants.end()), e.reactants.end());
  return e;
}

int Fingerprint::popcount() const {
  int n = 0;
  for (uint64_t w : words) n += std::popcount(w);
  return n;
}

std::vector<int> Fingerprint::active_bits() const {
  std::vector<int> out;
  for (size_t wi = 0; wi < words.size(); ++wi) {
    uint64_t w = words[wi];
    while (w != 0) {
      int b = std::countr_zero(w);
      out.push_back(static_cast<int>(wi * 64) + b);
      w &= w - 1;
    }
  }
  return out;
}

Fingerprint featurize(const Molecule& m) {
  if (m.id.empty()) throw MalformedMoleculeError(m.id);
  Fingerprint fp;
  const size_t len = m.id.size();
  for (size_t i = 0; i < len; ++i) {
    for (size_t n = 1; n <= 4 && i + n <= len; ++n) {
      uint64_t h = fnv1a64(std::string_view(m.id).substr(i, n));
      fp.set(h % kFingerprintBits);
    }
  }
  return fp;
}

bool SolvabilityCache::solvable(const Molecule& m, int max_depth) {
  if (m.id.size() <= static_cast<size_t>(world_->bb_max_len)) return true;
  if (max_depth <= 0) return false;
  // Depth beyond the reducible mass is never usable.
  int d = std::min(max_depth, reducible_mass(*world_, m.id));
  if (d <= 0) return false;
  std::string key = m.id;
  key += '\x1f';
  key += std::to_string(d);
  if (auto it = memo_.find(key); it != memo_.end()) return it->second != 0;
  // Pessimistic placeholder; overwritten below. Recursion cannot revisit the
  // same key because mass strictly decreases along expansions.
  bool ok = false;
  for (size_t t = 0; t < world_->rules.size() && !ok; ++t) {
    if (!rule_applies(*world_, m.id, static_cast<TemplateId>(t))) continue;
    Expansion e = apply_template(*world_, m, static_cast<TemplateId>(t));
    bool all = true;
    for (const auto& r : e.reactants) {
      if (!solvable(r, d - 1)) {
        all = false;
        break;
      }
    }
    ok = all;
  }
  memo_[key] = ok ? 1 : 0;
  return ok;
}

namespace {

int weighted_pick(Rng& rng, std::initializer_list<std::pair<int, double>> options) {
  double total = 0;
  for (auto& [v, w] : options) total += w;
  double r = rng.real01() * total;
  double acc = 0;
  for (auto& [v, w] : options) {
    acc += w;
    if (r < acc) return v;
  }
  return options.begin()->first;
}

RewriteRule random_rule(Rng& rng, const WorldSpec& world, bool poisoned) {
  RewriteRule rule;
  int plen = weighted_pick(rng, {{2, 0.50}, {3, 0.35}, {4, 0.15}});
  for (int i = 0; i < plen; ++i) {
    rule.pattern += world.alphabet[rng.below(world.alphabet.size())];
  }
  int k = weighted_pick(rng, {{1, 0.45}, {2, 0.40}, {3, 0.15}});
  int budget = plen - 1;
  for (int i = 0; i < k; ++i) {
    int mass = rng.below_int(std::min(budget, 3) + 1);
    budget -= mass;
    std::string frag;
    for (int j = 0; j < mass; ++j) {
      frag += world.alphabet[rng.below(world.alphabet.size())];
    }
    if (frag.empty()) frag += world.poison;
    rule.replacements.push_back(std::move(frag));
  }
  if (poisoned) {
    auto& frag = rule.replacements[rng.below(rule.replacements.size())];
    if (frag.find(world.poison) == std::string::npos && frag.size() < 3) {
      frag.insert(frag.begin() + rng.below(frag.size() + 1), world.poison);
    }
  }
  return rule;
}

bool rule_has_poison(const WorldSpec& world, const RewriteRule& r) {
  for (const auto& f : r.replacements) {
    if (f.find(world.poison) != std::string::npos) return true;
  }
  return false;
}

Molecule random_open_molecule(Rng& rng, const WorldSpec& world, int min_len, int max_len) {
  int len = min_len + rng.below_int(max_len - min_len + 1);
  std::string s;
  for (int i = 0; i < len; ++i) s += world.alphabet[rng.below(world.alphabet.size())];
  return Molecule(std::move(s));
}

}  // namespace

WorldSpec generate_world(const WorldGenOptions& opt) {
  if (opt.n_rules < 10) throw std::invalid_argument("generate_world: need at least 10 rules");
  Rng rng(derive_seed(opt.seed, 0x776f726c64ull));

  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    WorldSpec world;
    world.seed = opt.seed;
    world.rules.reserve(opt.n_rules);
    int guard = 0;
    while (static_cast<int>(world.rules.size()) < opt.n_rules) {
      RewriteRule r = random_rule(rng, world, rng.chance(opt.poison_rule_frac));
      bool dup = false;
      for (const auto& existing : world.rules) {
        if (existing.pattern == r.pattern && existing.replacements == r.replacements) {
          dup = true;
          break;
        }
      }
      if (!dup) world.rules.push_back(std::move(r));
      if (++guard > opt.n_rules * 100) throw WorldGenError("generate_world: cannot fill rule table");
    }
    validate(world);

    int poisoned = 0;
    for (const auto& r : world.rules) {
      if (rule_has_poison(world, r)) ++poisoned;
    }
    if (poisoned * 5 < opt.n_rules) continue;  // < 20% dead-end pressure

    SolvabilityCache solver(world);
    int solved = 0;
    for (int i = 0; i < opt.probe_targets; ++i) {
      Molecule m = random_open_molecule(rng, world, world.bb_max_len + 1, 10);
      if (solver.solvable(m, opt.probe_depth)) ++solved;
    }
    if (solved < opt.min_probe_solvable * opt.probe_targets) continue;
    return world;
  }
  throw WorldGenError("generate_world: no viable rule set after " +
                      std::to_string(opt.max_attempts) + " attempts");
}

WorldSpec generate_world(int n_rules, uint64_t seed) {
  WorldGenOptions opt;
  opt.n_rules = n_rules;
  opt.seed = seed;
  return generate_world(opt);
}

namespace {

// Any synthesizable route for m within the depth budget, choosing uniformly
// among templates whose reactants all stay solvable. Requires m solvable.
RouteTree random_route_for(const WorldSpec& world, SolvabilityCache& solver, const Molecule& m,
                           int budget, Rng& rng) {
  if (m.id.size() <= static_cast<size_t>(world.bb_max_len)) {
    return RouteTree::make_leaf(m, LeafStatus::BuildingBlock);
  }
  std::vector<Expansion> options;
  for (size_t t = 0; t < world.rules.size(); ++t) {
    if (!rule_applies(world, m.id, static_cast<TemplateId>(t))) continue;
    Expansion e = apply_template(world, m, static_cast<TemplateId>(t));
    bool all = true;
    for (const auto& r : e.reactants) {
      if (!solver.solvable(r, budget - 1)) {
        all = false;
        break;
      }
    }
    if (all) options.push_back(std::move(e));
  }
  if (options.empty()) throw WorldGenError("random_route_for: unsolvable input");
  const Expansion& pick = options[rng.below(options.size())];
  std::vector<RouteTree> kids;
  kids.reserve(pick.reactants.size());
  for (const auto& r : pick.reactants) {
    kids.push_back(random_route_for(world, solver, r, budget - 1, rng));
  }
  return RouteTree::make_internal(m, pick.tmpl, std::move(kids));
}

int route_depth(const RouteTree& r) {
  int d = 0;
  for (const auto& c : r.children) d = std::max(d, 1 + route_depth(c));
  return d;
}

// One bottom-up route attempt: start from a building block and repeatedly
// invert a rule around it (mol = x f y  =>  product = x p y), solving the
// sibling reactants by search. Returns an empty optional when stuck.
std::optional<RouteTree> route_attempt(const WorldSpec& world, SolvabilityCache& solver,
                                       int max_depth, Rng& rng) {
  int target_levels = 1 + rng.below_int(max_depth);
  Molecule mol = random_open_molecule(rng, world, 1, world.bb_max_len);
  RouteTree chain = RouteTree::make_leaf(mol, LeafStatus::BuildingBlock);
  int levels = 0;

  while (levels < target_levels) {
    bool grew = false;
    for (int tries = 0; tries < 60 && !grew; ++tries) {
      const TemplateId t = static_cast<TemplateId>(rng.below(world.rules.size()));
      const RewriteRule& rule = world.rules[t];
      const int fi = rng.below_int(static_cast<int>(rule.replacements.size()));
      const std::string& frag = rule.replacements[fi];
      // Choose an occurrence of the fragment inside the current chain molecule.
      std::vector<size_t> occ;
      for (size_t p = mol.id.find(frag); p != std::string::npos; p = mol.id.find(frag, p + 1)) {
        occ.push_back(p);
      }
      if (occ.empty()) continue;
      size_t cut = occ[rng.below(occ.size())];
      std::string prefix = mol.id.substr(0, cut);
      std::string suffix = mol.id.substr(cut + frag.size());
      std::string product = prefix + rule.pattern + suffix;
      if (product.size() <= static_cast<size_t>(world.bb_max_len) || product.size() > 28) continue;
      if (product.find(rule.pattern) != cut) continue;  // rewrite must hit this site

      // Remaining chain steps after this one bound how deep siblings may go.
      int steps_left = target_levels - levels - 1;
      int sibling_budget = max_depth - 1 - steps_left;
      Expansion e = apply_template(world, Molecule(product), t);
      std::vector<RouteTree> kids;
      bool ok = true;
      for (const auto& r : e.reactants) {
        if (r.id == mol.id) {
          kids.push_back(chain);  // the chain child itself
          continue;
        }
        if (r.id.size() <= static_cast<size_t>(world.bb_max_len)) {
          kids.push_back(RouteTree::make_leaf(r, LeafStatus::BuildingBlock));
          continue;
        }
        if (sibling_budget < 1 || !solver.solvable(r, sibling_budget)) {
          ok = false;
          break;
        }
        kids.push_back(random_route_for(world, solver, r, sibling_budget, rng));
      }
      if (!ok) continue;
      chain = RouteTree::make_internal(Molecule(product), t, std::move(kids));
      mol = Molecule(product);
      ++levels;
      grew = true;
    }
    if (!grew) break;
  }
  if (levels == 0) return std::nullopt;
  return chain;
}

}  // namespace

std::vector<RouteTree> sample_training_routes(const WorldSpec& world, int n, int max_depth,
                                              uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_training_routes: n < 1");
  if (max_depth < 1) throw std::invalid_argument("sample_training_routes: max_depth < 1");
  validate(world);
  Rng rng(derive_seed(seed, 0x726f75746573ull, world.seed));
  SolvabilityCache solver(world);
  std::vector<RouteTree> routes;
  routes.reserve(n);
  int consecutive_failures = 0;
  while (static_cast<int>(routes.size()) < n) {
    auto r = route_attempt(world, solver, max_depth, rng);
    if (!r.has_value()) {
      if (++consecutive_failures > 500) {
        throw WorldGenError("sample_training_routes: degenerate world, cannot build routes");
      }
      continue;
    }
    consecutive_failures = 0;
    routes.push_back(std::move(*r));
  }
  return routes;
}

std::vector<std::pair<Molecule, TemplateId>> route_pairs(const RouteTree& route) {
  std::vector<std::pair<Molecule, TemplateId>> out;
  std::vector<const RouteTree*> stack{&route};
  while (!stack.empty()) {
    const RouteTree* n = stack.back();
    stack.pop_back();
    if (n->is_leaf()) continue;
    out.emplace_back(n->mol, *n->tmpl);
    for (auto it = n->children.rbegin(); it != n->children.rend(); ++it) {
      stack.push_back(&*it);
    }
  }
  return out;
}

namespace {

std::string hex16(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

uint64_t parse_hex16(std::string_view s) {
  if (s.size() != 16) throw WorldFormatError("bad hex field");
  uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') {
      v |= static_cast<uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      v |= static_cast<uint64_t>(c - 'a' + 10);
    } else {
      throw WorldFormatError("bad hex digit");
    }
  }
  return v;
}

}  // namespace

std::string world_to_text(const WorldSpec& world) {
  std::string out = "worldspec-v1\n";
  out += "alphabet\t" + world.alphabet + "\n";
  out += "poison\t";
  out += world.poison;
  out += "\n";
  out += "bb_max_len\t" + std::to_string(world.bb_max_len) + "\n";
  out += "seed\t" + std::to_string(world.seed) + "\n";
  out += "config_hash\t" + hex16(world.config_hash) + "\n";
  out += "rules\t" + std::to_string(world.rules.size()) + "\n";
  for (size_t t = 0; t < world.rules.size(); ++t) {
    out += std::to_string(t);
    out += '\t';
    out += world.rules[t].pattern;
    out += '\t';
    const auto& reps = world.rules[t].replacements;
    for (size_t i = 0; i < reps.size(); ++i) {
      if (i > 0) out += ',';
      out += reps[i];
    }
    out += '\n';
  }
  return out;
}

WorldSpec world_from_text(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "worldspec-v1") {
    throw WorldFormatError("missing worldspec-v1 header");
  }

  auto field = [&](size_t i, std::string_view key) -> std::string_view {
    if (i >= lines.size()) throw WorldFormatError("truncated file");
    size_t tab = lines[i].find('\t');
    if (tab == std::string_view::npos || lines[i].substr(0, tab) != key) {
      throw WorldFormatError("expected key '" + std::string(key) + "'");
    }
    return lines[i].substr(tab + 1);
  };

  WorldSpec world;
  world.alphabet = std::string(field(1, "alphabet"));
  std::string_view poison = field(2, "poison");
  if (poison.size() != 1) throw WorldFormatError("poison must be one character");
  world.poison = poison[0];
  auto parse_int = [](std::string_view s, const char* what) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
      throw WorldFormatError(std::string("bad integer for ") + what);
    }
    return v;
  };
  world.bb_max_len = static_cast<int>(parse_int(field(3, "bb_max_len"), "bb_max_len"));
  world.seed = static_cast<uint64_t>(parse_int(field(4, "seed"), "seed"));
  world.config_hash = parse_hex16(field(5, "config_hash"));
  int64_t n_rules = parse_int(field(6, "rules"), "rules");
  if (n_rules < 1 || static_cast<size_t>(n_rules) != lines.size() - 7) {
    throw WorldFormatError("rule count does not match rule lines");
  }
  for (int64_t t = 0; t < n_rules; ++t) {
    std::string_view line = lines[7 + t];
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string_view::npos ? std::string_view::npos : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw WorldFormatError("bad rule line");
    if (parse_int(line.substr(0, t1), "rule index") != t) {
      throw WorldFormatError("rule indices must be dense and ascending");
    }
    RewriteRule rule;
    rule.pattern = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    std::string_view frags = line.substr(t2 + 1);
    size_t f = 0;
    while (f <= frags.size()) {
      size_t comma = frags.find(',', f);
      if (comma == std::string_view::npos) comma = frags.size();
      rule.replacements.emplace_back(frags.substr(f, comma - f));
      f = comma + 1;
    }
    world.rules.push_back(std::move(rule));
  }
  validate(world);
  return world;
}

void save_world(const WorldSpec& world, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << world_to_text(world);
}

WorldSpec load_world(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return world_from_text(ss.str());
}

}  // namespace pdvn
