#include "pdvn/core.hpp"

#include <charconv>
#include <sstream>
#include <unordered_set>

namespace pdvn {

namespace {

void validate_node(const RouteTree& node, std::unordered_set<std::string>& path) {
  if (node.mol.id.empty()) throw std::invalid_argument("route: empty molecule id");
  if (!path.insert(node.mol.id).second) {
    throw std::invalid_argument("route: molecule repeats on a root path: " + node.mol.id);
  }
  if (node.tmpl.has_value()) {
    if (node.children.empty()) throw std::invalid_argument("route: internal node without children");
    for (const auto& c : node.children) validate_node(c, path);
  } else if (!node.children.empty()) {
    throw std::invalid_argument("route: leaf node with children");
  }
  path.erase(node.mol.id);
}

template <typename Fn>
void for_each_internal(const RouteTree& node, Fn&& fn) {
  if (node.is_leaf()) {
    if (node.leaf == LeafStatus::Open) throw UnresolvedRouteError();
    return;
  }
  fn(node);
  for (const auto& c : node.children) for_each_internal(c, fn);
}

}  // namespace

void validate_route(const RouteTree& route) {
  std::unordered_set<std::string> path;
  validate_node(route, path);
}

double route_cost(const RouteTree& route, const CostModel& cm) {
  double total = 0.0;
  for_each_internal(route, [&](const RouteTree& node) {
    int dead = 0;
    for (const auto& c : node.children) {
      if (c.is_leaf() && c.leaf == LeafStatus::DeadEnd) ++dead;
    }
    total += cm.c_rxn + cm.c_dead * dead;
  });
  return total;
}

int route_length(const RouteTree& route) {
  int n = 0;
  for_each_internal(route, [&](const RouteTree&) { ++n; });
  return n;
}

bool route_is_synthesizable(const RouteTree& route) {
  bool ok = true;
  // Walk everything first so an open leaf anywhere still raises.
  for_each_internal(route, [](const RouteTree&) {});
  std::vector<const RouteTree*> stack{&route};
  while (!stack.empty()) {
    const RouteTree* n = stack.back();
    stack.pop_back();
    if (n->is_leaf()) {
      if (n->leaf != LeafStatus::BuildingBlock) ok = false;
    } else {
      for (const auto& c : n->children) stack.push_back(&c);
    }
  }
  return ok;
}

namespace {

void write_node(const RouteTree& node, int depth, std::string& out) {
  out += std::to_string(depth);
  out += '\t';
  out += node.mol.id;
  out += '\t';
  if (node.tmpl.has_value()) {
    out += std::to_string(*node.tmpl);
  } else {
    switch (node.leaf) {
      case LeafStatus::BuildingBlock: out += "BB"; break;
      case LeafStatus::DeadEnd: out += "DEAD"; break;
      case LeafStatus::Open: out += "OPEN"; break;
    }
  }
  out += '\n';
  for (const auto& c : node.children) write_node(c, depth + 1, out);
}

struct ParsedLine {
  int depth;
  std::string mol;
  std::string marker;
};

}  // namespace

std::string route_to_text(const RouteTree& route) {
  std::string out;
  write_node(route, 0, out);
  return out;
}

RouteTree route_from_text(std::string_view text) {
  std::vector<ParsedLine> lines;
  size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string_view::npos ? std::string_view::npos : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw RouteParseError("line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    ParsedLine pl;
    std::string_view d = line.substr(0, t1);
    auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), pl.depth);
    if (ec != std::errc{} || p != d.data() + d.size() || pl.depth < 0) {
      throw RouteParseError("line " + std::to_string(lineno) + ": bad depth field");
    }
    pl.mol = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    pl.marker = std::string(line.substr(t2 + 1));
    if (pl.mol.empty() || pl.marker.empty()) {
      throw RouteParseError("line " + std::to_string(lineno) + ": empty field");
    }
    lines.push_back(std::move(pl));
  }
  if (lines.empty()) throw RouteParseError("empty input");
  if (lines.front().depth != 0) throw RouteParseError("first node must have depth 0");

  // Preorder reconstruction via a stack of open internal nodes.
  size_t idx = 0;
  std::vector<RouteTree*> stack;
  RouteTree root;
  auto make_node = [](const ParsedLine& pl) {
    RouteTree n;
    n.mol = Molecule(pl.mol);
    if (pl.marker == "BB") {
      n.leaf = LeafStatus::BuildingBlock;
    } else if (pl.marker == "DEAD") {
      n.leaf = LeafStatus::DeadEnd;
    } else if (pl.marker == "OPEN") {
      n.leaf = LeafStatus::Open;
    } else {
      int t = -1;
      auto [p, ec] = std::from_chars(pl.marker.data(), pl.marker.data() + pl.marker.size(), t);
      if (ec != std::errc{} || p != pl.marker.data() + pl.marker.size() || t < 0) {
        throw RouteParseError("bad marker: " + pl.marker);
      }
      n.tmpl = t;
    }
    return n;
  };
  root = make_node(lines[idx++]);
  stack.push_back(&root);
  for (; idx < lines.size(); ++idx) {
    const auto& pl = lines[idx];
    if (pl.depth < 1 || static_cast<size_t>(pl.depth) > stack.size()) {
      throw RouteParseError("depth jump at node " + pl.mol);
    }
    stack.resize(pl.depth);
    RouteTree* parent = stack.back();
    if (parent->is_leaf()) throw RouteParseError("leaf node " + parent->mol.id + " given a child");
    parent->children.push_back(make_node(pl));
    stack.push_back(&parent->children.back());
  }
  validate_route(root);
  return root;
}

}  // namespace pdvn
