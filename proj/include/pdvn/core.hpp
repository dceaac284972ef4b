#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdvn {

// Index into a world's rewrite-rule table; the action vocabulary of the MDP.
using TemplateId = int;

// A state of the retrosynthesis MDP. Identity is the canonical string alone;
// terminal classification (building block / dead-end) is an environment query.
struct Molecule {
  std::string id;

  Molecule() = default;
  explicit Molecule(std::string s) : id(std::move(s)) {}

  auto operator<=>(const Molecule&) const = default;
};

// One applicable reaction at a molecule: template, reactant set, prior.
// Reactants are deduplicated and sorted by id (set semantics).
struct Expansion {
  TemplateId tmpl = -1;
  std::vector<Molecule> reactants;
  double prior = 0.0;
};

struct CostModel {
  double c_rxn = 0.1;
  double c_dead = 5.0;
};

inline void validate(const CostModel& cm) {
  if (cm.c_rxn < 0 || cm.c_dead < 0) throw std::invalid_argument("cost model: negative cost");
  if (!(cm.c_dead > cm.c_rxn)) throw std::invalid_argument("cost model: c_dead must exceed c_rxn");
}

enum class LeafStatus { BuildingBlock, DeadEnd, Open };

struct UnresolvedRouteError : std::runtime_error {
  UnresolvedRouteError() : std::runtime_error("unresolved route: open leaf present") {}
};

struct RouteParseError : std::runtime_error {
  explicit RouteParseError(const std::string& what) : std::runtime_error("route parse: " + what) {}
};

// A synthesis route: a tree of molecules with one chosen reaction per internal
// node. Leaves carry a status; internal nodes carry the template that splits
// them into their children.
struct RouteTree {
  Molecule mol;
  std::optional<TemplateId> tmpl;     // engaged iff internal
  std::vector<RouteTree> children;    // non-empty iff internal
  LeafStatus leaf = LeafStatus::Open; // meaningful iff leaf

  bool is_leaf() const { return !tmpl.has_value(); }

  static RouteTree make_leaf(Molecule m, LeafStatus status) {
    RouteTree r;
    r.mol = std::move(m);
    r.leaf = status;
    return r;
  }

  static RouteTree make_internal(Molecule m, TemplateId t, std::vector<RouteTree> kids) {
    RouteTree r;
    r.mol = std::move(m);
    r.tmpl = t;
    r.children = std::move(kids);
    return r;
  }
};

// Structural invariants: internal iff has children, no molecule repeats on a
// root path. Throws std::invalid_argument on violation.
void validate_route(const RouteTree& route);

// Total route cost: sum over internal nodes of c_rxn + c_dead * (#dead-end
// children). Requires a fully resolved route (no open leaves).
double route_cost(const RouteTree& route, const CostModel& cm);

// Number of reaction (internal) nodes. Requires a fully resolved route.
int route_length(const RouteTree& route);

// True iff every leaf is a building block. Requires a fully resolved route.
bool route_is_synthesizable(const RouteTree& route);

// Line-oriented serialization: one node per line, preorder,
// `depth<TAB>molecule_id<TAB>marker` where marker is the template index for
// internal nodes and BB | DEAD | OPEN for leaves.
std::string route_to_text(const RouteTree& route);
RouteTree route_from_text(std::string_view text);

}  // namespace pdvn
