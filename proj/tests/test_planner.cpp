#include <cmath>
#include <set>

#include "doctest.h"
#include "habitree/planner.hpp"
#include "habitree/taskgen.hpp"
#include "oracles.hpp"

using namespace habitree;
using namespace habitree::planner;
using tangram::BoardState;
using tangram::Cell;
using tangram::Inventory;
using tangram::Placement;
using tangram::Problem;
using tangram::Silhouette;

namespace {

const Silhouette kDupletSil({}, {{2, 0}, {3, 0}, {2, 1}, {2, 2}, {3, 1}, {4, 0}, {5, 0}, {6, 0}});

BoardState board(const Silhouette& s, const Inventory& inv = Inventory::standard()) {
  return BoardState(Problem::create(s, inv));
}

PlannerConfig vanilla(int budget) {
  PlannerConfig c;
  c.budget = budget;
  c.h = 0.0;
  c.omega = 0.0;
  return c;
}

habits::SeqModel duplet_model(int repeats) {
  habits::SeqModel m(habits::Vocabulary(7, 10, 6), habits::SeqModelConfig{1.0, 3, 5});
  // Fits kDupletSil: domino-h, domino-v on its left end, mono beside the
  // domino-v, bar along the floor to the right.
  // One-token background episodes keep the unigram broad, so unrolling stops
  // at the end of the episode instead of running on into a reused block.
  const std::vector<ActionToken> ep{{1, 0, 0}, {2, 0, 1}, {0, 1, 0}, {3, 1, -1}};
  for (int i = 0; i < repeats; ++i) {
    m.observe(ep);
    m.observe(std::vector<ActionToken>{{4 + i % 3, i % 7 - 3, 1 + i % 4}});
  }
  return m;
}

// Checks the structural invariants of a finished search tree.
void check_tree(const SearchTree& tree, const PlanResult& r) {
  const SearchNode& root = tree[tree.root()];
  CHECK(root.visits == static_cast<std::uint32_t>(r.nodes_evaluated));
  CHECK(tree.size() == static_cast<std::size_t>(r.nodes_evaluated) + 1);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const SearchNode& n = tree[static_cast<int>(i)];
    REQUIRE(n.wins <= n.visits);
    if (i == 0) continue;
    const SearchNode& parent = tree[n.parent];
    // One node per edge, however many placements it carries.
    REQUIRE(n.state.placements().size() == parent.state.placements().size() + n.incoming.placements.size());
    BoardState s = parent.state;
    for (std::size_t k = 0; k < n.incoming.placements.size(); ++k) {
      REQUIRE_FALSE(tangram::check(s, n.incoming.placements[k]));
      REQUIRE(tangram::tokenize(s, n.incoming.placements[k]) == n.incoming.tokens[k]);
      s = tangram::apply(s, n.incoming.placements[k]);
    }
    REQUIRE(s.placements() == n.state.placements());
    std::uint32_t child_visits = 0;
    for (int c : n.children) child_visits += tree[c].visits;
    REQUIRE(child_visits <= n.visits);
  }
}

}  // namespace

TEST_SUITE("planner") {

TEST_CASE("tree policy value") {
  PlannerConfig c;
  c.c = 1.0;
  c.h = 5.0;
  CHECK(tree_policy_value(3, 4, 8, 0.2, c) == doctest::Approx(0.75 + std::sqrt(std::log(8.0) / 4) + 1.0));
  CHECK(tree_policy_value(3, 4, 8, 0.2, c) == doctest::Approx(2.471).epsilon(1e-3));
  // h = 0 is plain UCT.
  c.h = 0.0;
  CHECK(tree_policy_value(3, 4, 8, 0.9, c) == 0.75 + std::sqrt(std::log(8.0) / 4));
  // Monotone in the habit term.
  c.h = 5.0;
  CHECK(tree_policy_value(1, 2, 4, 0.6, c) > tree_policy_value(1, 2, 4, 0.3, c));
}

TEST_CASE("config validation") {
  PlannerConfig c;
  c.budget = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.budget = 1;
  c.c = -1.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.c = 1.0;
  c.omega = -0.1;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.omega = 0.0;
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("one-cell silhouette is solved by the first expansion") {
  Rng rng(1);
  const auto r = plan(board(Silhouette({}, {{3, 0}})), nullptr, vanilla(1), rng);
  CHECK(r.solved);
  CHECK(r.nodes_evaluated == 1);
  REQUIRE(r.plan.size() == 1);
  CHECK(r.plan[0].placements[0] == Placement{0, {3, 0}});
  CHECK(r.plan_tokens == std::vector<ActionToken>{{0, 0, 0}});
}

TEST_CASE("no legal first placement gives an empty unsolved result") {
  const Inventory squares({tangram::make_shape(0, "square", 'e', {{0, 0}, {1, 0}, {0, 1}, {1, 1}})});
  Rng rng(1);
  const auto r = plan(board(Silhouette({}, {{0, 0}, {1, 0}}), squares), nullptr, vanilla(10), rng);
  CHECK_FALSE(r.solved);
  CHECK(r.nodes_evaluated == 0);
  CHECK(r.plan.empty());
}

TEST_CASE("backpropagation credits the node and all its ancestors") {
  const auto s = board(taskgen::example_silhouette());
  SearchTree tree(s);
  const Placement m1{1, {7, 0}};
  const Placement m2{5, {6, 1}};
  const BoardState s1 = tangram::apply(s, m1);
  const int a = tree.add_child(0, s1, Edge{{m1}, {tangram::tokenize(s, m1)}}, 0.0);
  const int b = tree.add_child(a, tangram::apply(s1, m2), Edge{{m2}, {tangram::tokenize(s1, m2)}}, 0.0);
  backpropagate(tree, b, 0);
  for (int n : {0, a, b}) {
    CHECK(tree[n].visits == 1);
    CHECK(tree[n].wins == 0);
  }
  backpropagate(tree, a, 1);
  CHECK(tree[0].wins == 1);
  CHECK(tree[a].wins == 1);
  CHECK(tree[b].wins == 0);
  CHECK(tree.context(b).size() == 2);
}

TEST_CASE("rollout succeeds immediately at the goal and fails at a dead end") {
  Rng rng(2);
  const auto p = Problem::create(Silhouette({}, {{0, 0}, {1, 0}}), Inventory::standard());
  const BoardState goal = tangram::apply(BoardState(p), {1, {0, 0}});
  const auto r = rollout(goal, rng, 5);
  CHECK(r.success);
  CHECK(r.actions.empty());

  // Mono then a vertical domino cannot cover a row of three.
  const Inventory mono_tall({tangram::make_shape(0, "mono", 'a', {{0, 0}}),
                             tangram::make_shape(1, "domino-v", 'c', {{0, 0}, {0, 1}})});
  const auto q = Problem::create(Silhouette({}, {{0, 0}, {1, 0}, {2, 0}}), mono_tall);
  const BoardState dead = tangram::apply(BoardState(q), {0, {0, 0}});
  CHECK_FALSE(rollout(dead, rng, 5).success);
  CHECK(tangram::valid_actions(dead).empty());
  CHECK(rollout(BoardState(q), rng, 0).outcome() == 0);
}

TEST_CASE("rollout success rate matches exhaustive path enumeration") {
  const auto s = board(taskgen::example_silhouette());
  long nodes = 0;
  const double exact = oracle::uniform_success(oracle::Board::from(s), &nodes);
  CHECK(nodes == 18);
  CHECK(exact > 0.0);
  Rng rng(77);
  const int n = 40000;
  int wins = 0;
  for (int i = 0; i < n; ++i) wins += rollout(s, rng, s.blocks_remaining() + 1).outcome();
  const double sd = std::sqrt(exact * (1 - exact) / n);
  CHECK(std::abs(wins / static_cast<double>(n) - exact) < 4 * sd);
}

TEST_CASE("h = 0 and omega = 0 reproduce the plain UCT reference exactly") {
  const auto inv = Inventory::standard();
  const auto chunk = taskgen::default_duplet();
  const auto model = duplet_model(10);
  Rng gen(314);
  int solved = 0;
  int unsolved = 0;
  for (int i = 0; i < 50; ++i) {
    const auto kind = i % 3 == 0 ? taskgen::Kind::chunky : taskgen::Kind::random;
    taskgen::GenOptions opts;
    opts.n_blocks = 3 + i % 3;
    const auto g = taskgen::gen_silhouette(kind, &chunk, inv, tangram::Grid{}, gen, opts);
    const BoardState root = board(g.silhouette);
    PlannerConfig pc = vanilla(1 + (i * 7) % 40);
    pc.c = i % 5 == 0 ? 0.5 : (i % 5 == 1 ? 2.0 : 1.0);
    pc.record_trace = true;
    const std::uint64_t seed = derive_seed(2718, static_cast<std::uint64_t>(i));

    Rng ref_rng(seed);
    const auto ref = oracle::plain_uct(oracle::Board::from(root), pc.budget, pc.c, ref_rng);
    Rng rng_a(seed);
    const auto a = plan(root, nullptr, pc, rng_a);
    // A model that is present but switched off must change nothing.
    Rng rng_b(seed);
    const auto queries = model.query_calls();
    const auto b = plan(root, &model, pc, rng_b);
    CHECK(model.query_calls() == queries);

    for (const auto* r : {&a, &b}) {
      REQUIRE(r->expansions == ref.expansions);
      CHECK(r->nodes_evaluated == ref.nodes);
      CHECK(r->solved == ref.solved);
      if (ref.solved) {
        std::vector<Placement> flat;
        for (const auto& e : r->plan) flat.insert(flat.end(), e.placements.begin(), e.placements.end());
        CHECK(flat == ref.solution);
      }
    }
    // A solved run draws nothing after its last rollout, so both streams
    // must be in step.
    if (ref.solved) CHECK(rng_a() == ref_rng());
    (ref.solved ? solved : unsolved)++;
  }
  CHECK(solved > 10);
  CHECK(unsolved > 0);
}

TEST_CASE("search trees keep their invariants and solutions are goals") {
  const auto inv = Inventory::standard();
  const auto chunk = taskgen::default_triplet();
  const auto model = duplet_model(15);
  Rng gen(9);
  for (int i = 0; i < 30; ++i) {
    const auto g = taskgen::gen_silhouette(i % 2 ? taskgen::Kind::chunky : taskgen::Kind::random, &chunk,
                                           inv, tangram::Grid{}, gen);
    const BoardState root = board(g.silhouette);
    for (bool with_model : {false, true}) {
      PlannerConfig pc;
      pc.budget = 5 + i;
      Rng rng(static_cast<std::uint64_t>(i));
      Planner p(root, with_model ? &model : nullptr, pc, rng);
      const auto r = p.run();
      CHECK(r.nodes_evaluated <= pc.budget);
      check_tree(p.tree(), r);
      if (r.solved) {
        BoardState s = root;
        for (const auto& e : r.plan) {
          for (const auto& m : e.placements) s = tangram::apply(s, m);
        }
        CHECK(tangram::is_goal(s));
        CHECK(flatten(r.plan) == r.plan_tokens);
      }
    }
  }
}

TEST_CASE("chunks sit beside their primitive in the untried list") {
  const auto model = duplet_model(20);
  const BoardState root = board(kDupletSil);
  PlannerConfig pc;
  pc.budget = 1;
  Rng rng(3);
  Planner p(root, &model, pc, rng);
  (void)p.run();
  const SearchNode& r = p.tree()[0];
  std::vector<Edge> edges;
  for (const auto& u : r.untried) edges.push_back(u.edge);
  for (int c : r.children) edges.push_back(p.tree()[c].incoming);
  bool primitive = false;
  bool chunk = false;
  for (const auto& e : edges) {
    if (e.tokens.front() != ActionToken{1, 0, 0}) continue;
    if (e.tokens.size() == 1) primitive = true;
    if (e.tokens.size() >= 2) {
      chunk = true;
      CHECK(e.tokens[1] == ActionToken{2, 0, 1});
      CHECK(e.placements.size() == e.tokens.size());
    }
  }
  CHECK(primitive);
  CHECK(chunk);
  // The highest-habit edge went first: it starts with the trained token.
  REQUIRE(r.children.size() == 1);
  CHECK(p.tree()[r.children[0]].incoming.tokens.front() == ActionToken{1, 0, 0});

  // omega = 0 offers primitives only.
  pc.omega = 0.0;
  Rng rng2(3);
  Planner q(root, &model, pc, rng2);
  (void)q.run();
  for (const auto& u : q.tree()[0].untried) CHECK(u.edge.tokens.size() == 1);
}

TEST_CASE("a chunk that leaves the silhouette is dropped, its primitive kept") {
  const auto model = duplet_model(20);
  // Domino-h fits on the floor but nothing stands on its left end.
  const Silhouette sil({}, {{2, 0}, {3, 0}, {3, 1}, {3, 2}, {4, 0}});
  PlannerConfig pc;
  pc.budget = 1;
  Rng rng(4);
  Planner p(board(sil), &model, pc, rng);
  (void)p.run();
  bool primitive = false;
  std::vector<Edge> edges;
  for (const auto& u : p.tree()[0].untried) edges.push_back(u.edge);
  for (int c : p.tree()[0].children) edges.push_back(p.tree()[c].incoming);
  for (const auto& e : edges) {
    if (e.tokens.front() != ActionToken{1, 0, 0}) continue;
    CHECK(e.tokens.size() == 1);
    primitive = true;
  }
  CHECK(primitive);
}

TEST_CASE("chunk edges stunt the tree and count as one evaluation") {
  const auto model = duplet_model(30);
  int chunk_children = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PlannerConfig pc;
    pc.budget = 12;
    Rng rng(seed);
    Planner p(board(kDupletSil), &model, pc, rng);
    const auto r = p.run();
    // One node per expansion and every child exactly one edge below its
    // parent, so the states a chunk jumps over get no node of their own.
    check_tree(p.tree(), r);
    for (std::size_t i = 1; i < p.tree().size(); ++i) {
      chunk_children += p.tree()[static_cast<int>(i)].incoming.is_chunk();
    }
    if (r.solved && r.used_chunk) {
      CHECK(r.plan.size() < r.plan_tokens.size());
      CHECK_FALSE(r.chunk_lengths.empty());
    }
  }
  CHECK(chunk_children > 0);
}

TEST_CASE("unsolved runs report the most visited path") {
  // A silhouette vanilla search cannot finish in two expansions.
  const auto s = board(taskgen::example_silhouette());
  int unsolved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Planner p(s, nullptr, vanilla(2), rng);
    const auto r = p.run();
    CHECK(r.nodes_evaluated <= 2);
    if (r.solved) continue;
    ++unsolved;
    REQUIRE_FALSE(r.plan.empty());
    CHECK(r.plan.size() <= 2);
    CHECK_FALSE(r.hit_cap);
  }
  CHECK(unsolved > 0);
}

TEST_CASE("flexible budget runs until solved or the hard cap") {
  const auto s = board(taskgen::example_silhouette());
  PlannerConfig pc = vanilla(1);
  pc.flexible = true;
  pc.hard_cap = 500;
  Rng rng(5);
  const auto r = plan(s, nullptr, pc, rng);
  CHECK(r.solved);
  CHECK_FALSE(r.hit_cap);
  pc.hard_cap = 1;
  int capped = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rr(seed);
    const auto q = plan(s, nullptr, pc, rr);
    if (!q.solved) {
      CHECK(q.hit_cap);
      ++capped;
    }
  }
  CHECK(capped > 0);
}

TEST_CASE("planning is deterministic in the seed") {
  const auto model = duplet_model(10);
  const auto s = board(taskgen::example_silhouette());
  PlannerConfig pc;
  pc.record_trace = true;
  Rng a(42);
  Rng b(42);
  const auto ra = plan(s, &model, pc, a);
  const auto rb = plan(s, &model, pc, b);
  CHECK(ra.expansions == rb.expansions);
  CHECK(to_json(ra, "x", "full", 42) == to_json(rb, "x", "full", 42));
  const auto j = to_json(ra, "x", "full", 42);
  CHECK(j.at("nodes_evaluated") == ra.nodes_evaluated);
  CHECK(tokens_from_json(tokens_to_json(ra.plan_tokens)) == ra.plan_tokens);
}

}  // TEST_SUITE
