#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "habitree/action_token.hpp"
#include "habitree/rng.hpp"
#include "habitree/seq_model.hpp"
#include "habitree/tangram.hpp"
#include "json.hpp"

namespace habitree::planner {

struct PlannerConfig {
  int budget = 50;          // node expansions; ignored when flexible
  bool flexible = false;    // run until solved or hard_cap
  int hard_cap = 500;
  double c = 1.0;           // exploration
  double h = 5.0;           // habit weight
  double omega = 1.5;       // open-loop entropy threshold (nats)
  int rollout_limit = -1;   // < 0: blocks remaining + 1
  bool record_trace = false;
};

// Throws std::invalid_argument on out-of-range settings.
void validate(const PlannerConfig& config);

// One tree edge: a single placement, or a chunk of several placed
// open-loop.
struct Edge {
  std::vector<tangram::Placement> placements;
  std::vector<ActionToken> tokens;

  bool is_chunk() const { return tokens.size() >= 2; }
};

struct PlanResult {
  bool solved = false;
  bool hit_cap = false;  // flexible budget ran into hard_cap
  std::vector<Edge> plan;
  int nodes_evaluated = 0;
  std::vector<ActionToken> plan_tokens;
  bool used_chunk = false;
  std::vector<int> chunk_lengths;
  // Absolute placement path of every expanded node, in expansion order.
  // Filled only with PlannerConfig::record_trace.
  std::vector<std::vector<tangram::Placement>> expansions;
};

struct SearchNode {
  explicit SearchNode(tangram::BoardState s) : state(std::move(s)) {}

  tangram::BoardState state;
  Edge incoming;
  double habit = 0.0;  // habit value of the first token of `incoming`
  int parent = -1;
  std::uint32_t wins = 0;
  std::uint32_t visits = 0;
  std::vector<int> children;
  struct Untried {
    Edge edge;
    double habit = 0.0;
  };
  std::vector<Untried> untried;
  bool untried_built = false;
  bool exhausted = false;
};

class SearchTree {
 public:
  explicit SearchTree(tangram::BoardState root);

  int root() const { return 0; }
  std::size_t size() const { return nodes_.size(); }
  const SearchNode& operator[](int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  SearchNode& operator[](int i) { return nodes_[static_cast<std::size_t>(i)]; }
  int add_child(int parent, tangram::BoardState state, Edge edge, double habit);
  // Tokens on the path from the root to `node`, chunks flattened.
  habits::Context context(int node) const;
  std::vector<tangram::Placement> placements(int node) const;

 private:
  std::vector<SearchNode> nodes_;
};

// Tree-policy score of a visited child.
double tree_policy_value(std::uint32_t wins, std::uint32_t visits, std::uint32_t parent_visits,
                         double habit_p, const PlannerConfig& config);

struct RolloutResult {
  bool success = false;
  std::vector<tangram::Placement> actions;

  int outcome() const { return success ? 1 : 0; }
};

// Uniform-random play from `state` until the goal, a dead end or `limit`
// placements.
RolloutResult rollout(const tangram::BoardState& state, Rng& rng, int limit);

void backpropagate(SearchTree& tree, int node, int outcome);

class Planner {
 public:
  // `model` may be null (vanilla search).
  Planner(tangram::BoardState problem, const habits::SeqModel* model, PlannerConfig config,
          Rng& rng);

  PlanResult run();
  const SearchTree& tree() const { return tree_; }

 private:
  void build_untried(int node);
  int select();
  int expand(int leaf);
  void mark_exhausted(int node);
  PlanResult extract(int solving_node, const RolloutResult& suffix);

  const habits::SeqModel* model_;
  PlannerConfig config_;
  Rng& rng_;
  SearchTree tree_;
};

PlanResult plan(const tangram::BoardState& problem, const habits::SeqModel* model,
                const PlannerConfig& config, Rng& rng);

// Flattened token sequence of a list of edges.
std::vector<ActionToken> flatten(const std::vector<Edge>& edges);

nlohmann::json tokens_to_json(const std::vector<ActionToken>& tokens);
std::vector<ActionToken> tokens_from_json(const nlohmann::json& j);

// One JSON object per episode.
nlohmann::json to_json(const PlanResult& result, const std::string& problem_id,
                       const std::string& variant, std::uint64_t seed);

}  // namespace habitree::planner
