#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdvn/core.hpp"

namespace pdvn {

struct MalformedMoleculeError : std::runtime_error {
  explicit MalformedMoleculeError(const std::string& id)
      : std::runtime_error("malformed molecule: '" + id + "'") {}
};

struct TemplateMismatchError : std::runtime_error {
  TemplateMismatchError(const std::string& id, TemplateId t)
      : std::runtime_error("template mismatch: rule " + std::to_string(t) +
                           " does not apply to '" + id + "'") {}
};

struct WorldGenError : std::runtime_error {
  explicit WorldGenError(const std::string& what) : std::runtime_error(what) {}
};

struct WorldFormatError : std::runtime_error {
  explicit WorldFormatError(const std::string& what)
      : std::runtime_error("world file: " + what) {}
};

// One reaction template: replace the leftmost occurrence of `pattern` with
// each replacement fragment in turn, yielding one reactant per fragment.
struct RewriteRule {
  std::string pattern;                   // length 2..4, alphabet chars only
  std::vector<std::string> replacements; // 1..3 fragments, non-empty
};

struct WorldSpec {
  std::string alphabet = "ABCDEFGH"; // reducible symbols, ordered
  char poison = 'z';                 // reserved: appears in no rule pattern
  int bb_max_len = 3;                // |id| <= bb_max_len => building block
  uint64_t seed = 0;
  uint64_t config_hash = 0;          // provenance of the generating run
  std::vector<RewriteRule> rules;

  int vocab_size() const { return static_cast<int>(rules.size()); }
};

// Enforces the structural invariants: pattern lengths, fragment counts,
// character sets, poison exclusion and the mass decrease of every rule.
void validate(const WorldSpec& world);

// Count of reducible (non-poison) characters; the termination measure.
int reducible_mass(const WorldSpec& world, std::string_view s);

// Throws MalformedMoleculeError unless m is non-empty and drawn from
// alphabet + poison.
void check_molecule(const WorldSpec& world, const Molecule& m);

struct WorldGenOptions {
  int n_rules = 500;
  uint64_t seed = 0;
  double poison_rule_frac = 0.30;  // fraction of rules carrying poison output
  int probe_targets = 100;
  int probe_depth = 10;
  double min_probe_solvable = 0.50;
  int max_attempts = 1000;
};

WorldSpec generate_world(const WorldGenOptions& opt);
WorldSpec generate_world(int n_rules, uint64_t seed);

bool is_building_block(const WorldSpec& world, const Molecule& m);
bool is_dead_end(const WorldSpec& world, const Molecule& m);

// All rules whose pattern occurs in m, ascending template index. Empty for
// building blocks (never expanded) and dead-ends.
std::vector<TemplateId> applicable_templates(const WorldSpec& world, const Molecule& m);

// Leftmost-match rewrite; reactants deduplicated and sorted. The prior is
// left at 0 (policies fill it in).
Expansion apply_template(const WorldSpec& world, const Molecule& m, TemplateId t);

// 2048-bit feature-hash fingerprint over character n-grams, n in 1..4.
inline constexpr int kFingerprintBits = 2048;

struct Fingerprint {
  std::array<uint64_t, kFingerprintBits / 64> words{};

  void set(size_t bit) { words[bit >> 6] |= 1ull << (bit & 63); }
  bool test(size_t bit) const { return (words[bit >> 6] >> (bit & 63)) & 1; }

  int popcount() const;
  std::vector<int> active_bits() const;

  bool operator==(const Fingerprint&) const = default;
};

Fingerprint featurize(const Molecule& m);

// Memoized solvability within a depth budget, shared across queries. The
// expansion relation strictly reduces mass, so depth beyond the mass of the
// molecule never helps; keys are canonicalized accordingly.
class SolvabilityCache {
 public:
  explicit SolvabilityCache(const WorldSpec& world) : world_(&world) {}

  bool solvable(const Molecule& m, int max_depth);

 private:
  const WorldSpec* world_;
  std::unordered_map<std::string, char> memo_;  // key: id + '\x1f' + depth
};

// Bottom-up sampled ground-truth routes for supervised pretraining. Each
// returned route is fully resolved and synthesizable, with depth <= max_depth,
// and every internal node replays through apply_template.
std::vector<RouteTree> sample_training_routes(const WorldSpec& world, int n, int max_depth,
                                              uint64_t seed);

// (molecule, template) pairs from every internal node of a route, preorder.
std::vector<std::pair<Molecule, TemplateId>> route_pairs(const RouteTree& route);

// Versioned text format, bit-exact round trip.
std::string world_to_text(const WorldSpec& world);
WorldSpec world_from_text(std::string_view text);
void save_world(const WorldSpec& world, const std::filesystem::path& path);
WorldSpec load_world(const std::filesystem::path& path);

}  // namespace pdvn
