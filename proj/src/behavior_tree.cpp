#include "therasim/behavior_tree.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace therasim::bt {

// Generated from trees/*.json at configure time.
std::vector<std::pair<std::string_view, std::string_view>> builtin_tree_sources();

std::string_view to_string(Status s) {
  switch (s) {
    case Status::Success:
      return "Success";
    case Status::Failure:
      return "Failure";
    case Status::Running:
      return "Running";
  }
  return "";
}

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Sequence:
      return "Sequence";
    case NodeKind::Selector:
      return "Selector";
    case NodeKind::Action:
      return "Action";
    case NodeKind::Condition:
      return "Condition";
  }
  return "";
}

namespace {

NodeKind parse_kind(const std::string& text) {
  for (NodeKind k : {NodeKind::Sequence, NodeKind::Selector, NodeKind::Action, NodeKind::Condition}) {
    if (to_string(k) == text) return k;
  }
  throw InvariantError("node kind", fmt::format("'{}' is not Sequence, Selector, Action or Condition", text));
}

}  // namespace

bool ActionSpec::accepts(PatientResponse r) const {
  return expect.empty() || std::find(expect.begin(), expect.end(), r) != expect.end();
}

// ---------------------------------------------------------------------------
// Tick

namespace {

Status tick_node(const NodeDef& node, Blackboard& bb, Responder& responder,
                 std::vector<InteractionEvent>& events) {
  switch (node.kind) {
    case NodeKind::Action: {
      if (!node.children.empty() || !node.action_spec) {
        throw MalformedTree(fmt::format("action '{}' must be a leaf with an action_spec", node.name));
      }
      const LeafResult res = responder.act(node, bb);
      if (res.response) {
        bb.last_response = res.response;
        events.push_back(InteractionEvent{bb.now, bb.session_id, node.name, *res.response,
                                          node.action_spec->modality});
      }
      return res.status;
    }
    case NodeKind::Condition:
      if (!node.children.empty()) {
        throw MalformedTree(fmt::format("condition '{}' must be a leaf", node.name));
      }
      return responder.check(node, bb);
    case NodeKind::Sequence:
    case NodeKind::Selector:
      break;
  }

  if (node.children.empty()) {
    throw MalformedTree(fmt::format("{} '{}' has no children", to_string(node.kind), node.name));
  }
  const bool sequence = node.kind == NodeKind::Sequence;
  // A Sequence stops on Failure, a Selector on Success.
  const Status stop_on = sequence ? Status::Failure : Status::Success;

  std::size_t start = 0;
  if (auto it = bb.bookmarks.find(node.name); it != bb.bookmarks.end()) {
    start = it->second;
    if (start >= node.children.size()) {
      throw MalformedTree(fmt::format("bookmark {} out of range for '{}'", start, node.name));
    }
  }

  for (std::size_t i = start; i < node.children.size(); ++i) {
    const Status s = tick_node(node.children[i], bb, responder, events);
    if (s == Status::Running) {
      bb.bookmarks[node.name] = i;
      return s;
    }
    if (s == stop_on) {
      bb.bookmarks.erase(node.name);
      return s;
    }
  }
  bb.bookmarks.erase(node.name);
  return sequence ? Status::Success : Status::Failure;
}

}  // namespace

TickResult tick(const TreeDef& tree, Blackboard& bb, Responder& responder) {
  TickResult out;
  out.status = tick_node(tree.root, bb, responder, out.events);
  return out;
}

std::size_t node_count(const NodeDef& node) {
  std::size_t n = 1;
  for (const auto& c : node.children) n += node_count(c);
  return n;
}

// ---------------------------------------------------------------------------
// Invariants

namespace {

void check_node(const NodeDef& node, Stage stage, std::set<std::string>& names) {
  if (node.name.empty()) throw InvariantError("node names non-empty", "a node has no name");
  if (!names.insert(node.name).second) {
    throw InvariantError("names unique within a tree", fmt::format("'{}' appears twice", node.name));
  }
  if (node.is_leaf()) {
    if (!node.children.empty()) {
      throw InvariantError("Action/Condition have zero children",
                           fmt::format("{} '{}' has children", to_string(node.kind), node.name));
    }
    if (!node.action_spec) {
      throw InvariantError("leaves carry an action_spec", fmt::format("'{}' has none", node.name));
    }
    const ActionSpec& spec = *node.action_spec;
    if (spec.behavior.empty()) {
      throw InvariantError("leaves name a behavior", fmt::format("'{}' has an empty behavior", node.name));
    }
    if (spec.max_attempts < 1) {
      throw InvariantError("max_attempts >= 1", fmt::format("'{}' has {}", node.name, spec.max_attempts));
    }
    if (!stage_allows(stage, spec.modality)) {
      throw InvariantError("modality matches the stage's data types",
                           fmt::format("'{}' uses {} in a {} tree", node.name,
                                       therasim::to_string(spec.modality), therasim::to_string(stage)));
    }
    return;
  }
  if (node.children.empty()) {
    throw InvariantError("interior nodes have >= 1 child", fmt::format("'{}' has none", node.name));
  }
  if (node.action_spec) {
    throw InvariantError("only leaves carry an action_spec", fmt::format("'{}' is interior", node.name));
  }
  for (const auto& child : node.children) check_node(child, stage, names);
}

}  // namespace

void check_tree(const TreeDef& tree) {
  if (tree.tree_id.empty()) throw InvariantError("tree_id non-empty", "missing tree_id");
  if (tree.asset_bytes < 0) throw InvariantError("asset_bytes >= 0", tree.tree_id);
  std::set<std::string> names;
  check_node(tree.root, tree.stage, names);
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(Json& j, const ActionSpec& v) {
  j = Json{{"behavior", v.behavior}, {"modality", v.modality}};
  if (v.utterance) j["utterance"] = *v.utterance;
  if (!v.expect.empty()) j["expect"] = v.expect;
  if (v.max_attempts != 1) j["max_attempts"] = v.max_attempts;
}

void from_json(const Json& j, ActionSpec& v) {
  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known{"behavior", "modality", "utterance", "expect",
                                             "max_attempts"};
    if (!known.contains(key)) throw InvariantError("known action_spec fields", key);
  }
  v.behavior = j.at("behavior").get<std::string>();
  v.modality = j.at("modality").get<Modality>();
  v.utterance.reset();
  if (j.contains("utterance")) v.utterance = j["utterance"].get<std::string>();
  v.expect = j.value("expect", std::vector<PatientResponse>{});
  v.max_attempts = j.value("max_attempts", 1);
}

void to_json(Json& j, const NodeDef& v) {
  j = Json{{"kind", to_string(v.kind)}, {"name", v.name}};
  if (v.is_leaf()) {
    if (v.action_spec) j["action_spec"] = *v.action_spec;
  } else {
    j["children"] = v.children;
  }
}

void to_json(Json& j, const TreeDef& v) {
  j = Json{{"tree_id", v.tree_id}, {"stage", v.stage}, {"root", v.root}};
  if (!v.roles.empty()) j["roles"] = v.roles;
  if (v.asset_bytes != 0) j["asset_bytes"] = v.asset_bytes;
}

namespace {

NodeDef node_from_json(const Json& j) {
  if (!j.is_object()) throw InvariantError("nodes are objects", j.dump());
  for (const auto& [key, _] : j.items()) {
    if (key != "kind" && key != "name" && key != "children" && key != "action_spec") {
      throw InvariantError("known node fields", key);
    }
  }
  NodeDef node;
  node.kind = parse_kind(j.at("kind").get<std::string>());
  node.name = j.at("name").get<std::string>();
  if (j.contains("children")) {
    const Json& children = j["children"];
    if (!children.is_array()) throw InvariantError("children is a list", node.name);
    if (node.is_leaf() && !children.empty()) {
      throw InvariantError("Action/Condition have zero children",
                           fmt::format("{} '{}' has children", to_string(node.kind), node.name));
    }
    for (const auto& c : children) node.children.push_back(node_from_json(c));
  }
  if (j.contains("action_spec")) node.action_spec = j["action_spec"].get<ActionSpec>();
  return node;
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

TreeDef load_tree(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    const std::size_t offset = e.byte == 0 ? 0 : e.byte - 1;
    const auto [line, column] = line_column(text, offset);
    throw ParseError(fmt::format("tree definition {}:{}: {}", line, column, e.what()), line, column);
  }

  TreeDef tree;
  try {
    if (!j.is_object()) throw InvariantError("tree is an object", "top level");
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known{"tree_id", "stage", "root", "roles", "asset_bytes"};
      if (!known.contains(key)) throw InvariantError("known tree fields", key);
    }
    tree.tree_id = j.at("tree_id").get<std::string>();
    tree.stage = j.at("stage").get<Stage>();
    tree.root = node_from_json(j.at("root"));
    tree.roles = j.value("roles", std::map<std::string, std::string>{});
    tree.asset_bytes = j.value("asset_bytes", std::int64_t{0});
  } catch (const Json::exception& e) {
    throw InvariantError("tree schema", e.what());
  } catch (const std::invalid_argument& e) {
    throw InvariantError("tree schema", e.what());
  }
  check_tree(tree);
  return tree;
}

std::string serialize_tree(const TreeDef& tree) { return Json(tree).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Catalog

const std::map<std::string, TreeDef>& builtin_trees() {
  static const std::map<std::string, TreeDef> catalog = [] {
    std::map<std::string, TreeDef> out;
    for (const auto& [file, text] : builtin_tree_sources()) {
      TreeDef tree = load_tree(text);
      const std::string id = tree.tree_id;
      out.emplace(id, std::move(tree));
    }
    return out;
  }();
  return catalog;
}

const TreeDef& builtin_tree(std::string_view tree_id) {
  const auto& catalog = builtin_trees();
  auto it = catalog.find(std::string(tree_id));
  if (it == catalog.end()) throw Error(fmt::format("no built-in tree '{}'", tree_id));
  return it->second;
}

std::vector<const TreeDef*> trees_for_stage(Stage stage) {
  std::vector<const TreeDef*> out;
  for (const auto& [id, tree] : builtin_trees()) {
    if (tree.stage == stage) out.push_back(&tree);
  }
  return out;
}

}  // namespace therasim::bt
