#pragma once

// Behavior-tree engine with memory (a Running child is bookmarked and resumed
// on the next tick) and the built-in therapy tree catalog.
//
// Tick semantics:
//   Sequence  Failure at the first failing child, Running at the first running
//             child, Success when every child succeeds.
//   Selector  Success at the first succeeding child, Running at the first
//             running child, Failure when every child fails.
//   Action    asks the responder to perform the behavior; one InteractionEvent
//             per performed action.
//   Condition asks the responder to evaluate a predicate; never emits events.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "therasim/error.hpp"
#include "therasim/protocol.hpp"

namespace therasim::bt {

enum class Status : std::uint8_t { Success, Failure, Running };
enum class NodeKind : std::uint8_t { Sequence, Selector, Action, Condition };

std::string_view to_string(Status s);
std::string_view to_string(NodeKind k);

// What a leaf does and how its outcome is judged. An empty `expect` means the
// action succeeds once performed; otherwise the patient's response must be
// one of `expect`. `max_attempts` > 1 lets an action re-prompt (Running) until
// the budget is spent.
struct ActionSpec {
  std::string behavior;
  Modality modality = Modality::Image;
  std::optional<std::string> utterance;
  std::vector<PatientResponse> expect;
  int max_attempts = 1;

  bool accepts(PatientResponse r) const;
  bool operator==(const ActionSpec&) const = default;
};

struct NodeDef {
  NodeKind kind = NodeKind::Action;
  std::string name;
  std::vector<NodeDef> children;
  std::optional<ActionSpec> action_spec;

  bool is_leaf() const { return kind == NodeKind::Action || kind == NodeKind::Condition; }
  bool operator==(const NodeDef&) const = default;
};

struct TreeDef {
  std::string tree_id;
  Stage stage = Stage::Entry;
  NodeDef root;
  // Who plays whom in pretend games, e.g. robot -> "Magic Lamp".
  std::map<std::string, std::string> roles;
  // Size of the media bundle the robot fetches before running the tree.
  std::int64_t asset_bytes = 0;

  bool operator==(const TreeDef&) const = default;
};

// Per-session execution state. Bookmarks map an interior node name to the
// index of its Running child.
struct Blackboard {
  std::string session_id;
  SimTime now;
  std::optional<PatientResponse> last_response;
  std::map<std::string, int> counters;
  std::map<std::string, std::size_t> bookmarks;

  bool operator==(const Blackboard&) const = default;
};

struct LeafResult {
  Status status = Status::Failure;
  // Set iff the action was actually performed (and therefore emits an event).
  std::optional<PatientResponse> response;
};

class Responder {
 public:
  virtual ~Responder() = default;
  virtual LeafResult act(const NodeDef& leaf, Blackboard& bb) = 0;
  virtual Status check(const NodeDef& leaf, const Blackboard& bb) = 0;
};

struct TickResult {
  Status status = Status::Failure;
  std::vector<InteractionEvent> events;
};

class MalformedTree : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what), line_(line), column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class InvariantError : public Error {
 public:
  InvariantError(const std::string& rule, const std::string& detail)
      : Error(rule + ": " + detail), rule_(rule) {}
  const std::string& rule() const { return rule_; }

 private:
  std::string rule_;
};

TickResult tick(const TreeDef& tree, Blackboard& bb, Responder& responder);

// Throws InvariantError naming the first violated rule.
void check_tree(const TreeDef& tree);

TreeDef load_tree(std::string_view text);
std::string serialize_tree(const TreeDef& tree);

void to_json(Json& j, const ActionSpec& v);
void from_json(const Json& j, ActionSpec& v);
void to_json(Json& j, const NodeDef& v);
void to_json(Json& j, const TreeDef& v);

// The seven therapy trees shipped under trees/, keyed by tree_id.
const std::map<std::string, TreeDef>& builtin_trees();
const TreeDef& builtin_tree(std::string_view tree_id);
std::vector<const TreeDef*> trees_for_stage(Stage stage);

std::size_t node_count(const NodeDef& node);

}  // namespace therasim::bt
