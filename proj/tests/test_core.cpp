#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pdvn/core.hpp"
#include "pdvn/util.hpp"

using namespace pdvn;

namespace {

RouteTree bb(const std::string& id) {
  return RouteTree::make_leaf(Molecule(id), LeafStatus::BuildingBlock);
}

RouteTree dead(const std::string& id) {
  return RouteTree::make_leaf(Molecule(id), LeafStatus::DeadEnd);
}

// Linear chain: m0 -t-> m1 -t-> ... -t-> bb
RouteTree linear_route(int reactions) {
  RouteTree node = bb("m" + std::to_string(reactions));
  for (int i = reactions; i-- > 0;) {
    std::vector<RouteTree> kids;
    kids.push_back(std::move(node));
    node = RouteTree::make_internal(Molecule("m" + std::to_string(i)), i, std::move(kids));
  }
  return node;
}

// Random resolved route for property tests; molecule ids are unique per node
// so root-path uniqueness holds by construction.
RouteTree random_route(Rng& rng, int depth_budget, int& counter, bool& has_dead) {
  const std::string id = "n" + std::to_string(counter++);
  if (depth_budget == 0 || rng.chance(0.4)) {
    if (rng.chance(0.25)) {
      has_dead = true;
      return dead(id);
    }
    return bb(id);
  }
  const int kids_n = 1 + rng.below_int(3);
  std::vector<RouteTree> kids;
  for (int i = 0; i < kids_n; ++i) {
    kids.push_back(random_route(rng, depth_budget - 1, counter, has_dead));
  }
  return RouteTree::make_internal(Molecule(id), rng.below_int(100), std::move(kids));
}

}  // namespace

TEST_CASE("route cost matches the per-reaction sum") {
  const CostModel cm{0.1, 5.0};
  CHECK(route_cost(linear_route(3), cm) == doctest::Approx(0.3).epsilon(1e-12));

  // Two reactions, one dead-end child on the second.
  std::vector<RouteTree> inner_kids;
  inner_kids.push_back(bb("b"));
  inner_kids.push_back(dead("x"));
  std::vector<RouteTree> outer_kids;
  outer_kids.push_back(RouteTree::make_internal(Molecule("m1"), 1, std::move(inner_kids)));
  RouteTree route = RouteTree::make_internal(Molecule("m0"), 0, std::move(outer_kids));
  CHECK(route_cost(route, cm) == doctest::Approx(5.2).epsilon(1e-12));

  CHECK(route_cost(bb("a"), cm) == 0.0);
}

TEST_CASE("route length counts internal nodes") {
  CHECK(route_length(bb("a")) == 0);
  CHECK(route_length(linear_route(3)) == 3);

  std::vector<RouteTree> left_kids, right_kids, root_kids;
  left_kids.push_back(bb("l2"));
  right_kids.push_back(bb("r2"));
  root_kids.push_back(RouteTree::make_internal(Molecule("l1"), 1, std::move(left_kids)));
  root_kids.push_back(RouteTree::make_internal(Molecule("r1"), 2, std::move(right_kids)));
  RouteTree branching = RouteTree::make_internal(Molecule("m0"), 0, std::move(root_kids));
  CHECK(route_length(branching) == 3);
}

TEST_CASE("synthesizability is all-leaves-building-block") {
  CHECK(route_is_synthesizable(linear_route(2)));
  CHECK(route_is_synthesizable(bb("a")));

  std::vector<RouteTree> kids;
  kids.push_back(bb("b"));
  kids.push_back(dead("x"));
  RouteTree route = RouteTree::make_internal(Molecule("m"), 0, std::move(kids));
  CHECK_FALSE(route_is_synthesizable(route));
}

TEST_CASE("open leaves are rejected by all route operations") {
  std::vector<RouteTree> kids;
  kids.push_back(RouteTree::make_leaf(Molecule("o"), LeafStatus::Open));
  RouteTree route = RouteTree::make_internal(Molecule("m"), 0, std::move(kids));
  const CostModel cm;
  CHECK_THROWS_AS(route_cost(route, cm), UnresolvedRouteError);
  CHECK_THROWS_AS(route_length(route), UnresolvedRouteError);
  CHECK_THROWS_AS(route_is_synthesizable(route), UnresolvedRouteError);
}

TEST_CASE("route validation rejects malformed trees") {
  // molecule repeated on a root path
  std::vector<RouteTree> kids;
  kids.push_back(bb("m"));
  RouteTree repeat = RouteTree::make_internal(Molecule("m"), 0, std::move(kids));
  CHECK_THROWS_AS(validate_route(repeat), std::invalid_argument);

  // the same molecule in parallel branches is fine
  std::vector<RouteTree> kids2;
  kids2.push_back(bb("x"));
  kids2.push_back(bb("y"));
  RouteTree ok = RouteTree::make_internal(Molecule("m"), 0, std::move(kids2));
  CHECK_NOTHROW(validate_route(ok));

  RouteTree leaf_with_kids = bb("a");
  leaf_with_kids.children.push_back(bb("b"));
  CHECK_THROWS_AS(validate_route(leaf_with_kids), std::invalid_argument);
}

TEST_CASE("route text round trip and exact format") {
  std::vector<RouteTree> kids;
  kids.push_back(bb("ab"));
  kids.push_back(dead("cz"));
  RouteTree route = RouteTree::make_internal(Molecule("abcd"), 7, std::move(kids));
  const std::string text = route_to_text(route);
  CHECK(text == "0\tabcd\t7\n1\tab\tBB\n1\tcz\tDEAD\n");

  RouteTree back = route_from_text(text);
  CHECK(route_to_text(back) == text);
  CHECK(back.mol.id == "abcd");
  CHECK(back.children.size() == 2);

  CHECK_THROWS_AS(route_from_text(""), RouteParseError);
  CHECK_THROWS_AS(route_from_text("0\tm\n"), RouteParseError);
  CHECK_THROWS_AS(route_from_text("1\tm\tBB\n"), RouteParseError);
  CHECK_THROWS_AS(route_from_text("0\tm\t3\n2\tq\tBB\n"), RouteParseError);
}

TEST_CASE("cost identity and c_dead monotonicity over random routes") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    int counter = 0;
    bool has_dead = false;
    RouteTree route = random_route(rng, 4, counter, has_dead);
    validate_route(route);
    const CostModel cm{0.1, 5.0};
    const double cost = route_cost(route, cm);
    const int len = route_length(route);
    const bool synth = route_is_synthesizable(route);

    // synthesizable <=> cost equals c_rxn * length
    CHECK(synth == (cost == doctest::Approx(cm.c_rxn * len).epsilon(1e-12)));

    const CostModel higher{0.1, 9.0};
    const double cost_higher = route_cost(route, higher);
    if (synth) {
      CHECK(cost_higher == doctest::Approx(cost).epsilon(1e-12));
    } else {
      CHECK(cost_higher > cost);
    }
  }
}
