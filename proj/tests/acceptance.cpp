// Runs the acceptance criteria end to end and prints one PASS/FAIL line per
// criterion, with the measured numbers underneath. Exit status is 0 once
// everything ran; --strict makes any FAIL an error as well.

#include <algorithm>
#include <array>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "habitree/harness.hpp"
#include "habitree/planner.hpp"
#include "habitree/seq_model.hpp"
#include "habitree/taskgen.hpp"
#include "oracles.hpp"

using namespace habitree;
using harness::Condition;
using harness::TrialRecord;
using taskgen::Kind;

namespace {

constexpr std::uint64_t kGeneratorSeed = 7;
constexpr std::uint64_t kMasterSeed = 1;
constexpr int kSeeds = 32;

int workers() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "  ok   " : "  FAIL ") + what);
  }
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct ConditionRun {
  Condition condition;
  harness::ProblemFile problems;
  harness::TrainingOutput training;
  std::vector<TrialRecord> budget;
  std::vector<TrialRecord> ambiguous;
};

ConditionRun run_condition(Condition c) {
  harness::GenConfig gc;
  gc.condition = c;
  gc.workers = workers();
  ConditionRun run{c, harness::generate_problems(gc, kGeneratorSeed), {}, {}, {}};
  harness::RunConfig rc;
  rc.master_seed = kMasterSeed;
  rc.workers = workers();
  for (int s = 0; s < kSeeds; ++s) rc.seeds.push_back(static_cast<std::uint64_t>(s));
  run.training = harness::run_training(run.problems, rc);
  run.budget = harness::run_budget_test(run.problems, run.training.models, rc);
  run.ambiguous = harness::run_ambiguous_test(run.problems, run.training.models, rc);
  return run;
}

const std::vector<std::string> kVariants{"full", "open-loop", "one-step", "vanilla"};

double mean_of(const std::vector<TrialRecord>& rs, const std::function<bool(const TrialRecord&)>& keep,
               const std::function<double(const TrialRecord&)>& value) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rs) {
    if (!keep(r)) continue;
    sum += value(r);
    ++n;
  }
  return n ? sum / n : std::nan("");
}

// ---------------------------------------------------------------------------

Verdict anchor() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto inv = tangram::Inventory::standard();
  const auto sil = taskgen::example_silhouette();
  const auto ex = taskgen::solve_exhaustive(sil, inv);
  Rng rng(kMasterSeed);
  const int cx = taskgen::complexity(sil, inv, 32, 0, rng);
  const double runtime = seconds_since(t0);
  v.require(ex.solutions.size() == 1, fmt("unique solution (%zu found)", ex.solutions.size()));
  v.require(cx < ex.tree_size, fmt("complexity %d < tree size %ld", cx, ex.tree_size));
  int lo = cx;
  int hi = cx;
  for (std::uint64_t k = 0; k < 20; ++k) {
    Rng r(derive_seed(kMasterSeed, 17, k));
    const int again = taskgen::complexity(sil, inv, 32, 0, r);
    lo = std::min(lo, again);
    hi = std::max(hi, again);
  }
  v.require(cx - lo <= 3 && hi - cx <= 3, fmt("20 re-runs within +-3 of %d (range %d..%d)", cx, lo, hi));
  v.require(runtime < 1.0, fmt("runtime %.3f s < 1 s", runtime));
  return v;
}

Verdict training_performance(const std::vector<ConditionRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    for (const auto& name : kVariants) {
      const double rate = mean_of(
          run.training.records, [&](const TrialRecord& r) { return r.variant == name; },
          [](const TrialRecord& r) { return r.solved; });
      v.require(rate > 0.9, fmt("%s %-9s solved %.3f > 0.90", harness::to_string(run.condition).c_str(),
                                name.c_str(), rate));
    }
  }
  return v;
}

// Chunk use on solved chunky trials among the given presentation positions.
std::optional<double> window_chunk_use(const std::vector<TrialRecord>& rs, const std::string& variant,
                                       std::uint64_t seed, int from, int to) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rs) {
    if (r.variant != variant || r.seed != seed || r.trial < from || r.trial >= to) continue;
    if (!r.solved || r.kind != Kind::chunky) continue;
    sum += r.used_chunk;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

Verdict chunk_emergence(const std::vector<ConditionRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    const auto& rs = run.training.records;
    const int trials = static_cast<int>(run.problems.training.size());
    const std::string cond = harness::to_string(run.condition);
    for (const std::string name : {"full", "open-loop"}) {
      int positive = 0;
      for (int s = 0; s < kSeeds; ++s) {
        const auto first = window_chunk_use(rs, name, static_cast<std::uint64_t>(s), 0, 5);
        const auto last = window_chunk_use(rs, name, static_cast<std::uint64_t>(s), trials - 5, trials);
        // A seed without solved chunky trials in a window shows no increase.
        if (first && last && *last > *first) ++positive;
      }
      v.require(positive >= 24, fmt("%s %-9s last-5 > first-5 in %d/32 seeds (need 24)", cond.c_str(),
                                    name.c_str(), positive));
    }
    auto use = [&](const std::string& name) {
      return mean_of(
          rs, [&](const TrialRecord& r) { return r.variant == name && r.solved && r.kind == Kind::chunky; },
          [](const TrialRecord& r) { return r.used_chunk; });
    };
    const double full = use("full");
    const double open = use("open-loop");
    v.require(full > open, fmt("%s full chunk use %.3f > open-loop %.3f", cond.c_str(), full, open));
  }
  return v;
}

Verdict budget_ordering(const std::vector<ConditionRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    const std::string cond = harness::to_string(run.condition);
    std::map<std::string, std::map<Kind, double>> rate;
    for (const auto& name : kVariants) {
      for (Kind k : {Kind::chunky, Kind::random}) {
        rate[name][k] = mean_of(
            run.budget,
            [&](const TrialRecord& r) {
              return r.variant == name && r.kind == k && (r.budget == 5 || r.budget == 8 || r.budget == 12);
            },
            [](const TrialRecord& r) { return r.solved; });
      }
    }
    const double full = rate["full"][Kind::chunky];
    const double van = rate["vanilla"][Kind::chunky];
    v.require(full - van >= 0.10, fmt("%s chunky: full %.3f - vanilla %.3f >= 0.10", cond.c_str(), full, van));
    for (const std::string name : {"open-loop", "one-step"}) {
      const double x = rate[name][Kind::chunky];
      v.require(x > van - 0.05 && x < full + 0.05,
                fmt("%s chunky: %s %.3f between vanilla and full (+-0.05)", cond.c_str(), name.c_str(), x));
    }
    double lo = 1.0;
    double hi = 0.0;
    for (const auto& name : kVariants) {
      lo = std::min(lo, rate[name][Kind::random]);
      hi = std::max(hi, rate[name][Kind::random]);
    }
    v.require(hi - lo <= 0.10, fmt("%s random: max gap %.3f <= 0.10 (%.3f..%.3f)", cond.c_str(), hi - lo, lo, hi));
  }
  return v;
}

Verdict ambiguity_economy(const std::vector<ConditionRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    const std::string cond = harness::to_string(run.condition);
    std::map<std::string, double> nodes;
    for (const auto& name : kVariants) {
      nodes[name] = mean_of(
          run.ambiguous, [&](const TrialRecord& r) { return r.variant == name; },
          [](const TrialRecord& r) { return r.nodes_evaluated; });
    }
    for (const std::string mid : {"open-loop", "one-step"}) {
      v.require(nodes["full"] < nodes[mid] && nodes[mid] < nodes["vanilla"],
                fmt("%s nodes: full %.2f < %s %.2f < vanilla %.2f", cond.c_str(), nodes["full"], mid.c_str(),
                    nodes[mid], nodes["vanilla"]));
    }
    v.require(nodes["full"] <= 0.8 * nodes["vanilla"],
              fmt("%s full %.2f at least 20%% below vanilla %.2f", cond.c_str(), nodes["full"], nodes["vanilla"]));
    const double kept = mean_of(
        run.ambiguous, [](const TrialRecord& r) { return r.variant == "full" && r.preserves_order.has_value(); },
        [](const TrialRecord& r) { return *r.preserves_order; });
    const double chance = mean_of(
        run.ambiguous, [](const TrialRecord& r) { return r.variant == "full"; },
        [](const TrialRecord& r) { return r.chance_share.value_or(0.0); });
    v.require(kept > chance, fmt("%s full keeps the chunk in %.3f > chance %.3f", cond.c_str(), kept, chance));
  }
  return v;
}

Verdict reduction() {
  Verdict v;
  const auto inv = tangram::Inventory::standard();
  const auto chunk = taskgen::default_duplet();  // leaves five blocks for random silhouettes
  Rng gen(derive_seed(kMasterSeed, 6));
  int matched = 0;
  int solved = 0;
  for (int i = 0; i < 50; ++i) {
    taskgen::GenOptions opts;
    opts.n_blocks = 3 + i % 3;
    const auto g = taskgen::gen_silhouette(i % 2 ? Kind::chunky : Kind::random, &chunk, inv, tangram::Grid{}, gen,
                                           opts);
    const tangram::BoardState root(tangram::Problem::create(g.silhouette, inv));
    planner::PlannerConfig pc;
    pc.h = 0.0;
    pc.omega = 0.0;
    pc.budget = 1 + (i * 11) % 50;
    pc.c = 0.5 + (i % 4) * 0.5;
    pc.record_trace = true;
    const std::uint64_t seed = derive_seed(kMasterSeed, 60, static_cast<std::uint64_t>(i));
    Rng ref_rng(seed);
    const auto ref = oracle::plain_uct(oracle::Board::from(root), pc.budget, pc.c, ref_rng);
    Rng rng(seed);
    const auto r = planner::plan(root, nullptr, pc, rng);
    std::vector<tangram::Placement> flat;
    for (const auto& e : r.plan) flat.insert(flat.end(), e.placements.begin(), e.placements.end());
    const bool same = r.expansions == ref.expansions && r.nodes_evaluated == ref.nodes && r.solved == ref.solved &&
                      (!ref.solved || flat == ref.solution);
    matched += same;
    solved += ref.solved;
  }
  v.require(matched == 50, fmt("expansion traces identical on %d/50 problems (%d solved)", matched, solved));
  return v;
}

std::vector<std::vector<int>> sequences(int k, int len) {
  std::vector<std::vector<int>> out{{}};
  for (int i = 0; i < len; ++i) {
    std::vector<std::vector<int>> next;
    for (const auto& s : out) {
      for (int a = 0; a < k; ++a) {
        next.push_back(s);
        next.back().push_back(a);
      }
    }
    out = std::move(next);
  }
  return out;
}

habits::Context ctx_of(const std::vector<int>& xs) {
  habits::Context c;
  for (int x : xs) c.push_back({x, 0, 0});
  return c;
}

Verdict sequence_model() {
  Verdict v;
  const habits::Vocabulary vocab(4, 1, 1);
  std::vector<std::vector<int>> contexts;
  for (int len = 0; len <= 3; ++len) {
    for (const auto& c : sequences(4, len)) contexts.push_back(c);
  }
  double worst = 0.0;
  long corpora = 0;
  for (int len = 1; len <= 6; ++len) {
    for (const auto& seq : sequences(4, len)) {
      const double alpha = std::array{0.5, 1.0, 2.5}[static_cast<std::size_t>(corpora % 3)];
      const int depth = 1 + static_cast<int>((corpora / 3) % 3);
      const std::uint64_t seed = derive_seed(kMasterSeed, 7, static_cast<std::uint64_t>(corpora));
      habits::SeqModel m(vocab, habits::SeqModelConfig{alpha, depth, seed});
      oracle::BruteCrf crf(4, alpha, depth, seed);
      m.observe(ctx_of(seq));
      crf.observe(seq);
      for (const auto& c : contexts) {
        const auto d = m.predict(ctx_of(c));
        for (int a = 0; a < 4; ++a) worst = std::max(worst, std::abs(d.prob(a) - crf.prob(c, a)));
      }
      ++corpora;
    }
  }
  v.require(worst <= 1e-12, fmt("%ld corpora, worst |predict - brute force| = %.2e <= 1e-12", corpora, worst));

  Rng rng(derive_seed(kMasterSeed, 70));
  habits::SeqModel m(habits::Vocabulary(7, 10, 6), habits::SeqModelConfig{1.0, 3, 3});
  const auto& vv = m.vocab();
  auto token = [&] { return vv.token(static_cast<int>(uniform_index(rng, vv.size()))); };
  std::vector<ActionToken> pool;
  for (int i = 0; i < 12; ++i) pool.push_back(token());
  for (int e = 0; e < 200; ++e) {
    std::vector<ActionToken> ep;
    const int len = 1 + static_cast<int>(uniform_index(rng, 8));
    for (int i = 0; i < len; ++i) ep.push_back(uniform01(rng) < 0.8 ? pool[uniform_index(rng, pool.size())] : token());
    m.observe(ep);
  }
  double norm = 0.0;
  for (int q = 0; q < 10000; ++q) {
    habits::Context c;
    const int len = static_cast<int>(uniform_index(rng, 5));
    for (int i = 0; i < len; ++i) c.push_back(uniform01(rng) < 0.7 ? pool[uniform_index(rng, pool.size())] : token());
    norm = std::max(norm, std::abs(m.predict(c).total() - 1.0));
  }
  v.require(norm <= 1e-9, fmt("10000 fuzzed queries, worst |sum - 1| = %.2e <= 1e-9", norm));
  return v;
}

tangram::Silhouette random_blob(Rng& rng, tangram::Grid grid, int size) {
  std::set<tangram::Cell> cells{{static_cast<int>(uniform_index(rng, grid.width)), 0}};
  const tangram::Cell steps[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  while (static_cast<int>(cells.size()) < size) {
    auto it = cells.begin();
    std::advance(it, static_cast<long>(uniform_index(rng, cells.size())));
    const tangram::Cell n = *it + steps[uniform_index(rng, 4)];
    if (grid.contains(n)) cells.insert(n);
  }
  return tangram::Silhouette(grid, std::vector<tangram::Cell>(cells.begin(), cells.end()));
}

Verdict environment() {
  Verdict v;
  const auto inv = tangram::Inventory::standard();
  Rng rng(derive_seed(kMasterSeed, 8));
  int agree = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto sil = random_blob(rng, tangram::Grid{10, 6}, 3 + static_cast<int>(uniform_index(rng, 12)));
    tangram::BoardState s(tangram::Problem::create(sil, inv));
    const int steps = static_cast<int>(uniform_index(rng, 5));
    for (int k = 0; k < steps; ++k) {
      const auto moves = tangram::valid_actions(s);
      if (moves.empty()) break;
      s = tangram::apply(s, moves[uniform_index(rng, moves.size())]);
    }
    agree += tangram::valid_actions(s) == oracle::Board::from(s).legal_moves();
  }
  v.require(agree == 1000, fmt("valid_actions equals the rule checker on %d/1000 states", agree));

  // Habit planners with a model that has seen earlier certificates, so
  // chunk edges are proposed.
  int contained = 0;
  int solved = 0;
  int chunked = 0;
  Rng gen(derive_seed(kMasterSeed, 80));
  for (const auto& chunk : {taskgen::default_duplet(), taskgen::default_triplet()}) {
    habits::SeqModel model(habits::Vocabulary(7, 10, 6), habits::SeqModelConfig{1.0, 3, 8});
    for (int i = 0; i < 50; ++i) {
      const auto kind = i % 5 == 4 ? Kind::ambiguous : (i % 2 ? Kind::random : Kind::chunky);
      const auto g = taskgen::gen_silhouette(kind, &chunk, inv, tangram::Grid{}, gen);
      const tangram::BoardState root(tangram::Problem::create(g.silhouette, inv));
      planner::PlannerConfig pc;
      pc.budget = 50;
      Rng prng(derive_seed(kMasterSeed, 81, static_cast<std::uint64_t>(i)));
      const auto r = planner::plan(root, &model, pc, prng);
      chunked += r.used_chunk;
      if (r.solved) {
        ++solved;
        taskgen::Solution flat;
        for (const auto& e : r.plan) flat.insert(flat.end(), e.placements.begin(), e.placements.end());
        const auto ex = taskgen::solve_exhaustive(root);
        contained += std::find(ex.solutions.begin(), ex.solutions.end(), flat) != ex.solutions.end();
      }
      if (!r.plan_tokens.empty()) model.observe(r.plan_tokens);
    }
  }
  v.require(solved > 0 && contained == solved,
            fmt("%d/%d MCTS solutions found by exhaustive search (100 silhouettes, %d used a chunk)", contained,
                solved, chunked));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      std::fprintf(stderr, "usage: %s [--strict]\n", argv[0]);
      return 2;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ConditionRun> runs;
  for (Condition c : {Condition::duplet, Condition::triplet}) runs.push_back(run_condition(c));
  const double experiment_time = seconds_since(t0);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"anchor silhouette", anchor},
      {"training performance", [&] { return training_performance(runs); }},
      {"chunk-use emergence", [&] { return chunk_emergence(runs); }},
      {"budget-restriction ordering", [&] { return budget_ordering(runs); }},
      {"ambiguity economy", [&] { return ambiguity_economy(runs); }},
      {"reduction to plain UCT", reduction},
      {"sequence-model oracle", sequence_model},
      {"environment oracle", environment},
  };
  int passed = 0;
  std::vector<std::string> details;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Verdict v = criteria[i].second();
    passed += v.pass;
    std::printf("criterion %zu %-28s %s\n", i + 1, criteria[i].first.c_str(), v.pass ? "PASS" : "FAIL");
    for (const auto& n : v.notes) details.push_back(fmt("[%zu]%s", i + 1, n.c_str()));
  }
  std::printf("\n%d/%zu criteria pass (experiments: %d seeds, generator seed %llu, master seed %llu, %.1f s)\n",
              passed, criteria.size(), kSeeds, static_cast<unsigned long long>(kGeneratorSeed),
              static_cast<unsigned long long>(kMasterSeed), experiment_time);
  for (const auto& d : details) std::printf("%s\n", d.c_str());
  std::fflush(stdout);
  return strict && passed != static_cast<int>(criteria.size()) ? 1 : 0;
}
