#include "habitree/planner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace habitree::planner {

using tangram::BoardState;
using tangram::Placement;

void validate(const PlannerConfig& config) {
  if (!config.flexible && config.budget < 1) throw std::invalid_argument("budget must be >= 1");
  if (config.flexible && config.hard_cap < 1) throw std::invalid_argument("hard cap must be >= 1");
  if (!(config.c >= 0.0) || !(config.h >= 0.0) || !(config.omega >= 0.0)) {
    throw std::invalid_argument("c, h and omega must be non-negative");
  }
}

SearchTree::SearchTree(BoardState root) {
  SearchNode node(std::move(root));
  nodes_.push_back(std::move(node));
}

int SearchTree::add_child(int parent, BoardState state, Edge edge, double habit) {
  const int id = static_cast<int>(nodes_.size());
  SearchNode node(std::move(state));
  node.incoming = std::move(edge);
  node.habit = habit;
  node.parent = parent;
  nodes_.push_back(std::move(node));
  nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
  return id;
}

habits::Context SearchTree::context(int node) const {
  std::vector<int> path;
  for (int n = node; n > 0; n = (*this)[n].parent) path.push_back(n);
  habits::Context ctx;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const auto& toks = (*this)[*it].incoming.tokens;
    ctx.insert(ctx.end(), toks.begin(), toks.end());
  }
  return ctx;
}

std::vector<Placement> SearchTree::placements(int node) const {
  return (*this)[node].state.placements();
}

double tree_policy_value(std::uint32_t wins, std::uint32_t visits, std::uint32_t parent_visits,
                         double habit_p, const PlannerConfig& config) {
  const double n = visits;
  return wins / n + config.c * std::sqrt(std::log(static_cast<double>(parent_visits)) / n) +
         config.h * habit_p;
}

RolloutResult rollout(const BoardState& state, Rng& rng, int limit) {
  RolloutResult r;
  BoardState s = state;
  for (int step = 0;; ++step) {
    if (tangram::is_goal(s)) {
      r.success = true;
      return r;
    }
    if (step >= limit) return r;
    const auto actions = tangram::valid_actions(s);
    if (actions.empty()) return r;
    const Placement& a = actions[uniform_index(rng, actions.size())];
    r.actions.push_back(a);
    s = tangram::apply(s, a);
  }
}

void backpropagate(SearchTree& tree, int node, int outcome) {
  for (int n = node; n >= 0; n = tree[n].parent) {
    tree[n].visits += 1;
    tree[n].wins += static_cast<std::uint32_t>(outcome);
  }
}

Planner::Planner(BoardState problem, const habits::SeqModel* model, PlannerConfig config,
                 Rng& rng)
    : model_(model), config_(config), rng_(rng), tree_(std::move(problem)) {
  validate(config_);
}

void Planner::build_untried(int node) {
  SearchNode& n = tree_[node];
  n.untried_built = true;
  const BoardState state = n.state;
  const auto primitives = tangram::valid_actions(state);
  const bool use_habit = model_ != nullptr && config_.h > 0.0;
  const bool use_chunks = model_ != nullptr && config_.omega > 0.0;
  habits::Context ctx;
  habits::PredictiveDist dist;
  if (use_habit || use_chunks) ctx = tree_.context(node);
  if (use_habit) dist = model_->predict(ctx);

  std::vector<SearchNode::Untried> untried;
  for (const Placement& p : primitives) {
    const ActionToken tok = tangram::tokenize(state, p);
    const double habit = use_habit ? dist.prob(model_->vocab().index(tok)) : 0.0;
    untried.push_back({Edge{{p}, {tok}}, habit});
    if (!use_chunks) continue;
    const auto chunk = habits::unroll_chunk(*model_, ctx, tok, config_.omega,
                                            state.blocks_remaining(), rng_);
    if (chunk.size() < 2) continue;
    Edge edge{{p}, {tok}};
    BoardState s = tangram::apply(state, p);
    bool legal = true;
    for (std::size_t i = 1; i < chunk.size(); ++i) {
      const Placement next = tangram::detokenize(s, chunk[i]);
      if (tangram::check(s, next)) {
        legal = false;
        break;
      }
      s = tangram::apply(s, next);
      edge.placements.push_back(next);
      edge.tokens.push_back(chunk[i]);
    }
    if (legal) untried.push_back({std::move(edge), habit});
  }
  tree_[node].untried = std::move(untried);
}

void Planner::mark_exhausted(int node) {
  for (int n = node; n >= 0; n = tree_[n].parent) {
    SearchNode& s = tree_[n];
    if (!s.untried_built || !s.untried.empty()) return;
    for (int c : s.children) {
      if (!tree_[c].exhausted) return;
    }
    s.exhausted = true;
  }
}

int Planner::select() {
  int node = tree_.root();
  while (true) {
    if (!tree_[node].untried_built) build_untried(node);
    const SearchNode& n = tree_[node];
    if (!n.untried.empty()) return node;
    std::vector<int> best;
    double best_value = 0.0;
    for (int c : n.children) {
      const SearchNode& child = tree_[c];
      if (child.exhausted) continue;
      const double v = tree_policy_value(child.wins, child.visits, n.visits, child.habit, config_);
      if (best.empty() || v > best_value) {
        best.assign(1, c);
        best_value = v;
      } else if (v == best_value) {
        best.push_back(c);
      }
    }
    if (best.empty()) {
      mark_exhausted(node);
      if (tree_[tree_.root()].exhausted) return -1;
      node = tree_.root();
      continue;
    }
    node = best[uniform_index(rng_, best.size())];
  }
}

int Planner::expand(int leaf) {
  auto& untried = tree_[leaf].untried;
  std::size_t pick = 0;
  if (model_ != nullptr && config_.h > 0.0) {
    std::vector<std::size_t> best;
    double best_habit = 0.0;
    for (std::size_t i = 0; i < untried.size(); ++i) {
      if (best.empty() || untried[i].habit > best_habit) {
        best.assign(1, i);
        best_habit = untried[i].habit;
      } else if (untried[i].habit == best_habit) {
        best.push_back(i);
      }
    }
    pick = best[uniform_index(rng_, best.size())];
  } else {
    pick = uniform_index(rng_, untried.size());
  }
  SearchNode::Untried chosen = std::move(untried[pick]);
  untried.erase(untried.begin() + static_cast<std::ptrdiff_t>(pick));
  BoardState state = tree_[leaf].state;
  for (const Placement& p : chosen.edge.placements) state = tangram::apply(state, p);
  return tree_.add_child(leaf, std::move(state), std::move(chosen.edge), chosen.habit);
}

PlanResult Planner::extract(int solving_node, const RolloutResult& suffix) {
  PlanResult r;
  std::vector<int> path;
  if (solving_node >= 0) {
    for (int n = solving_node; n > 0; n = tree_[n].parent) path.push_back(n);
    std::reverse(path.begin(), path.end());
  } else {
    int node = tree_.root();
    while (!tree_[node].children.empty()) {
      std::vector<int> best;
      for (int c : tree_[node].children) {
        if (best.empty()) {
          best.push_back(c);
          continue;
        }
        const SearchNode& a = tree_[c];
        const SearchNode& b = tree_[best.front()];
        if (a.visits > b.visits || (a.visits == b.visits && a.wins > b.wins)) {
          best.assign(1, c);
        } else if (a.visits == b.visits && a.wins == b.wins) {
          best.push_back(c);
        }
      }
      node = best[uniform_index(rng_, best.size())];
      path.push_back(node);
    }
  }
  for (int n : path) r.plan.push_back(tree_[n].incoming);
  if (solving_node >= 0) {
    BoardState s = tree_[solving_node].state;
    for (const Placement& p : suffix.actions) {
      r.plan.push_back(Edge{{p}, {tangram::tokenize(s, p)}});
      s = tangram::apply(s, p);
    }
  }
  r.solved = solving_node >= 0;
  r.plan_tokens = flatten(r.plan);
  for (const Edge& e : r.plan) {
    if (e.is_chunk()) {
      r.used_chunk = true;
      r.chunk_lengths.push_back(static_cast<int>(e.tokens.size()));
    }
  }
  return r;
}

PlanResult Planner::run() {
  const int limit = config_.flexible ? config_.hard_cap : config_.budget;
  build_untried(tree_.root());
  if (tree_[tree_.root()].untried.empty()) return PlanResult{};
  int evaluated = 0;
  int solving = -1;
  RolloutResult suffix;
  std::vector<std::vector<Placement>> trace;
  while (evaluated < limit) {
    const int leaf = select();
    if (leaf < 0) break;
    const int child = expand(leaf);
    ++evaluated;
    if (config_.record_trace) trace.push_back(tree_.placements(child));
    const BoardState& state = tree_[child].state;
    const int cap = config_.rollout_limit >= 0 ? config_.rollout_limit : state.blocks_remaining() + 1;
    RolloutResult r = rollout(state, rng_, cap);
    backpropagate(tree_, child, r.outcome());
    if (r.success) {
      solving = child;
      suffix = std::move(r);
      break;
    }
  }
  PlanResult result = extract(solving, suffix);
  result.nodes_evaluated = evaluated;
  result.hit_cap = config_.flexible && solving < 0 && evaluated >= limit;
  result.expansions = std::move(trace);
  return result;
}

PlanResult plan(const BoardState& problem, const habits::SeqModel* model,
                const PlannerConfig& config, Rng& rng) {
  Planner planner(problem, model, config, rng);
  return planner.run();
}

std::vector<ActionToken> flatten(const std::vector<Edge>& edges) {
  std::vector<ActionToken> out;
  for (const Edge& e : edges) out.insert(out.end(), e.tokens.begin(), e.tokens.end());
  return out;
}

nlohmann::json tokens_to_json(const std::vector<ActionToken>& tokens) {
  nlohmann::json out = nlohmann::json::array();
  for (const ActionToken& t : tokens) out.push_back({t.block, t.dx, t.dy});
  return out;
}

std::vector<ActionToken> tokens_from_json(const nlohmann::json& j) {
  std::vector<ActionToken> out;
  for (const auto& t : j) out.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
  return out;
}

nlohmann::json to_json(const PlanResult& result, const std::string& problem_id,
                       const std::string& variant, std::uint64_t seed) {
  nlohmann::json plan = nlohmann::json::array();
  for (const Edge& e : result.plan) plan.push_back(tokens_to_json(e.tokens));
  return {{"problem_id", problem_id},       {"variant", variant},
          {"seed", seed},                   {"solved", result.solved},
          {"nodes_evaluated", result.nodes_evaluated}, {"plan", plan},
          {"chunk_lengths", result.chunk_lengths}};
}

}  // namespace habitree::planner
