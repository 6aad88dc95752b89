#include "habitree/taskgen.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "habitree/planner.hpp"

namespace habitree::taskgen {

using tangram::BoardState;
using tangram::Cell;
using tangram::Inventory;
using tangram::Placement;
using tangram::Problem;
using tangram::Silhouette;

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::chunky: return "chunky";
    case Kind::random: return "random";
    case Kind::ambiguous: return "ambiguous";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  if (s == "chunky") return Kind::chunky;
  if (s == "random") return Kind::random;
  if (s == "ambiguous") return Kind::ambiguous;
  throw std::invalid_argument("unknown silhouette kind '" + s + "'");
}

std::vector<int> ChunkSpec::blocks() const {
  std::vector<int> out;
  for (const auto& m : members) out.push_back(m.block);
  return out;
}

bool ChunkSpec::uses(int block) const {
  return std::any_of(members.begin(), members.end(), [&](const auto& m) { return m.block == block; });
}

void ChunkSpec::validate(const Inventory& inventory) const {
  if (members.size() < 2 || members.size() > 3) {
    throw std::invalid_argument("a chunk has two or three members");
  }
  std::set<int> seen;
  std::set<Cell> occupied;
  Cell anchor{0, 0};
  for (std::size_t i = 0; i < members.size(); ++i) {
    const int b = members[i].block;
    if (b < 0 || b >= static_cast<int>(inventory.size()) || !seen.insert(b).second) {
      throw std::invalid_argument("chunk members must be distinct inventory blocks");
    }
    if (i > 0) anchor = anchor + members[i].offset;
    std::set<Cell> cells;
    for (Cell off : inventory[static_cast<std::size_t>(b)].cells) cells.insert(anchor + off);
    bool touches = i == 0;
    for (Cell c : cells) {
      if (occupied.contains(c)) throw std::invalid_argument("chunk members overlap");
      for (Cell step : {Cell{1, 0}, Cell{-1, 0}, Cell{0, 1}, Cell{0, -1}}) {
        if (occupied.contains(c + step)) touches = true;
      }
    }
    if (!touches) throw std::invalid_argument("chunk member does not touch its predecessor");
    occupied.insert(cells.begin(), cells.end());
  }
}

nlohmann::json ChunkSpec::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : members) out.push_back({m.block, m.offset.x, m.offset.y});
  return out;
}

ChunkSpec ChunkSpec::from_json(const nlohmann::json& j) {
  ChunkSpec spec;
  for (const auto& m : j) spec.members.push_back({m.at(0).get<int>(), {m.at(1).get<int>(), m.at(2).get<int>()}});
  return spec;
}

ChunkSpec default_duplet() {
  // Horizontal domino with a vertical domino standing on its left end.
  return ChunkSpec{{{1, {0, 0}}, {2, {0, 1}}}};
}

ChunkSpec default_triplet() {
  // The duplet capped by a horizontal bar centred on the vertical domino.
  return ChunkSpec{{{1, {0, 0}}, {2, {0, 1}}, {3, {-1, 2}}}};
}

Silhouette example_silhouette() {
  return Silhouette(tangram::Grid{10, 6}, {{7, 0}, {8, 0}, {6, 1}, {7, 1}, {6, 2},
                                           {4, 1}, {4, 2}, {4, 3}, {5, 3}, {6, 3}});
}

namespace {

void enumerate(const BoardState& s, Solution& path, ExhaustiveResult& out, long max_nodes) {
  if (tangram::is_goal(s)) {
    out.solutions.push_back(path);
    return;
  }
  for (const Placement& a : tangram::valid_actions(s)) {
    if (++out.tree_size > max_nodes) {
      throw TreeTooLarge("game tree exceeds " + std::to_string(max_nodes) + " nodes");
    }
    path.push_back(a);
    enumerate(tangram::apply(s, a), path, out, max_nodes);
    path.pop_back();
  }
}

std::shared_ptr<const Problem> canvas_for(const tangram::Grid& grid, const Inventory& inventory) {
  std::vector<Cell> all;
  for (int x = 0; x < grid.width; ++x) {
    for (int y = 0; y < grid.height; ++y) all.push_back({x, y});
  }
  return Problem::create(Silhouette(grid, all), inventory);
}

std::vector<int> solution_blocks(const Solution& s) {
  std::vector<int> out;
  for (const auto& p : s) out.push_back(p.block);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

ExhaustiveResult solve_exhaustive(const BoardState& root, long max_nodes) {
  ExhaustiveResult out;
  Solution path;
  enumerate(root, path, out, max_nodes);
  return out;
}

ExhaustiveResult solve_exhaustive(const Silhouette& silhouette, const Inventory& inventory,
                                  long max_nodes) {
  return solve_exhaustive(BoardState(Problem::create(silhouette, inventory)), max_nodes);
}

int find_chunk(const Solution& solution, const ChunkSpec& chunk) {
  const std::size_t k = chunk.members.size();
  for (std::size_t i = 0; i + k <= solution.size(); ++i) {
    bool match = solution[i].block == chunk.members[0].block;
    for (std::size_t j = 1; match && j < k; ++j) {
      match = solution[i + j].block == chunk.members[j].block &&
              solution[i + j].anchor - solution[i + j - 1].anchor == chunk.members[j].offset;
    }
    if (match) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> member_order(const Solution& solution, const ChunkSpec& chunk) {
  std::vector<int> out;
  for (const auto& p : solution) {
    if (chunk.uses(p.block)) out.push_back(p.block);
  }
  return out;
}

std::string verify(Kind kind, const ChunkSpec* chunk, const Silhouette& silhouette,
                   const Inventory& inventory, const std::vector<Solution>& certificate) {
  if (certificate.empty()) return "no solution";
  ExhaustiveResult fresh;
  try {
    fresh = solve_exhaustive(silhouette, inventory);
  } catch (const TreeTooLarge& e) {
    return e.what();
  }
  auto a = fresh.solutions;
  auto b = certificate;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) return "certificate does not match the solution set";
  return check_kind(kind, chunk, a);
}

std::string check_kind(Kind kind, const ChunkSpec* chunk, const std::vector<Solution>& a) {
  if (a.empty()) return "no solution";
  if (kind != Kind::random && chunk == nullptr) return "chunk specification missing";
  switch (kind) {
    case Kind::chunky:
      for (const auto& s : a) {
        if (find_chunk(s, *chunk) < 0) return "a solution breaks the chunk";
      }
      break;
    case Kind::random:
      if (chunk != nullptr) {
        for (const auto& s : a) {
          if (find_chunk(s, *chunk) >= 0) return "a solution contains the chunk";
        }
      }
      break;
    case Kind::ambiguous: {
      std::set<std::vector<int>> orders;
      bool preserving = false;
      for (const auto& s : a) {
        const auto order = member_order(s, *chunk);
        if (order.size() == chunk->members.size()) orders.insert(order);
        preserving = preserving || find_chunk(s, *chunk) >= 0;
      }
      if (orders.size() < 2) return "chunk members admit only one order";
      if (!preserving) return "no solution keeps the chunk intact";
      break;
    }
  }
  return {};
}

Generated gen_silhouette(Kind kind, const ChunkSpec* chunk, const Inventory& inventory,
                         const tangram::Grid& grid, Rng& rng, const GenOptions& options) {
  if (kind != Kind::random && chunk == nullptr) {
    throw std::invalid_argument("chunky and ambiguous silhouettes need a chunk");
  }
  if (chunk != nullptr) chunk->validate(inventory);
  const int chunk_size = chunk != nullptr && kind != Kind::random
                             ? static_cast<int>(chunk->members.size())
                             : 0;
  if (options.n_blocks < std::max(1, chunk_size) ||
      options.n_blocks > static_cast<int>(inventory.size())) {
    throw std::invalid_argument("n_blocks does not fit the inventory");
  }
  std::vector<int> others;
  for (int b = 0; b < static_cast<int>(inventory.size()); ++b) {
    if (chunk == nullptr || !chunk->uses(b)) others.push_back(b);
  }
  const int n_extra = options.n_blocks - chunk_size;
  if (static_cast<int>(options.extra_blocks.size()) > 0 &&
      static_cast<int>(options.extra_blocks.size()) != n_extra) {
    throw std::invalid_argument("extra_blocks must name exactly the non-chunk blocks to use");
  }
  if (n_extra > static_cast<int>(others.size())) {
    throw std::invalid_argument("not enough non-chunk blocks");
  }
  const auto canvas = canvas_for(grid, inventory);

  for (int attempt = 0; attempt < options.retry_cap; ++attempt) {
    std::vector<int> extra = options.extra_blocks;
    if (extra.empty()) {
      std::vector<int> pool = others;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      }
      extra.assign(pool.begin(), pool.begin() + n_extra);
    }
    // Growth order: -1 marks where the chunk goes.
    std::vector<int> order = extra;
    if (chunk_size > 0) {
      const std::size_t at = options.chunk_first ? 0 : uniform_index(rng, order.size() + 1);
      order.insert(order.begin() + static_cast<std::ptrdiff_t>(at), -1);
    }
    BoardState s(canvas);
    bool ok = true;
    for (int b : order) {
      const int first = b < 0 ? chunk->members[0].block : b;
      std::vector<Placement> options_for_block;
      for (const Placement& p : tangram::valid_actions(s)) {
        if (p.block == first) options_for_block.push_back(p);
      }
      if (options_for_block.empty()) {
        ok = false;
        break;
      }
      s = tangram::apply(s, options_for_block[uniform_index(rng, options_for_block.size())]);
      if (b >= 0) continue;
      for (std::size_t j = 1; ok && j < chunk->members.size(); ++j) {
        const Placement next{chunk->members[j].block,
                             s.placements().back().anchor + chunk->members[j].offset};
        if (tangram::check(s, next)) {
          ok = false;
        } else {
          s = tangram::apply(s, next);
        }
      }
      if (!ok) break;
    }
    if (!ok) continue;
    std::vector<Cell> cells;
    for (int i = 0; i < grid.cells(); ++i) {
      if (s.occupied()[i]) cells.push_back(grid.cell(i));
    }
    Silhouette sil(grid, cells);
    ExhaustiveResult solved;
    try {
      solved = solve_exhaustive(sil, inventory, options.tree_cap);
    } catch (const TreeTooLarge&) {
      continue;
    }
    if (!check_kind(kind, chunk, solved.solutions).empty()) continue;
    return Generated{std::move(sil), std::move(solved.solutions), solved.tree_size, s.placements()};
  }
  throw GenerationError("no " + to_string(kind) + " silhouette after " +
                        std::to_string(options.retry_cap) + " attempts");
}

int complexity(const Silhouette& silhouette, const Inventory& inventory, int repeats,
               int budget_cap, Rng& rng) {
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  const BoardState root(Problem::create(silhouette, inventory));
  if (budget_cap <= 0) {
    const long tree = solve_exhaustive(root).tree_size;
    budget_cap = static_cast<int>(std::max(1L, 10 * tree));
  }
  planner::PlannerConfig config;
  config.budget = budget_cap;
  config.h = 0.0;
  config.omega = 0.0;
  std::vector<int> nodes;
  for (int r = 0; r < repeats; ++r) {
    Rng run_rng(rng());
    const auto result = planner::plan(root, nullptr, config, run_rng);
    if (result.solved) nodes.push_back(result.nodes_evaluated);
  }
  if (2 * static_cast<int>(nodes.size()) < repeats) {
    throw std::runtime_error("vanilla search failed on more than half of the repeats");
  }
  std::sort(nodes.begin(), nodes.end());
  return nodes[nodes.size() / 2];
}

ProblemSet match_sets(const std::vector<Trial>& chunky, const std::vector<Trial>& random,
                      const MatchOptions& options, Rng& rng) {
  std::vector<const Trial*> cpool;
  std::vector<const Trial*> rpool;
  for (const auto& t : chunky) {
    if (t.complexity <= options.cap) cpool.push_back(&t);
  }
  for (const auto& t : random) {
    if (t.complexity <= options.cap) rpool.push_back(&t);
  }
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument(why + " (eligible chunky " + std::to_string(cpool.size()) +
                                ", random " + std::to_string(rpool.size()) + "; requested " +
                                std::to_string(options.n_chunky) + " + " +
                                std::to_string(options.n_random) + ")");
  };
  if (static_cast<int>(cpool.size()) < options.n_chunky ||
      static_cast<int>(rpool.size()) < options.n_random) {
    fail("candidate pools too small");
  }
  for (std::size_t i = 0; i < rpool.size(); ++i) {
    std::swap(rpool[i], rpool[i + uniform_index(rng, rpool.size() - i)]);
  }

  std::map<int, double> usage;
  auto usage_score = [&](const Trial& t) {
    double score = 0.0;
    for (const auto& s : t.certificate) {
      for (int b : solution_blocks(s)) {
        if (std::find(options.chunk_blocks.begin(), options.chunk_blocks.end(), b) ==
            options.chunk_blocks.end()) {
          score += usage[b] / static_cast<double>(t.certificate.size());
        }
      }
    }
    return score;
  };
  auto add_usage = [&](const Trial& t) {
    for (const auto& s : t.certificate) {
      for (int b : solution_blocks(s)) usage[b] += 1.0 / static_cast<double>(t.certificate.size());
    }
  };

  std::vector<const Trial*> picked_c;
  std::vector<const Trial*> picked_r;
  std::vector<bool> used_c(cpool.size(), false);
  std::vector<bool> used_r(rpool.size(), false);
  // Pairs first: every random trial gets a chunky partner within max_gap.
  while (static_cast<int>(picked_r.size()) < options.n_random) {
    int best_r = -1;
    int best_c = -1;
    double best_score = 0.0;
    for (std::size_t i = 0; i < rpool.size(); ++i) {
      if (used_r[i]) continue;
      for (std::size_t j = 0; j < cpool.size(); ++j) {
        if (used_c[j]) continue;
        const int gap = std::abs(rpool[i]->complexity - cpool[j]->complexity);
        if (gap > options.max_gap) continue;
        const double score = usage_score(*rpool[i]) + usage_score(*cpool[j]) + 0.01 * gap;
        if (best_r < 0 || score < best_score) {
          best_r = static_cast<int>(i);
          best_c = static_cast<int>(j);
          best_score = score;
        }
      }
    }
    if (best_r < 0) fail("not enough complexity-matched pairs");
    used_r[static_cast<std::size_t>(best_r)] = true;
    used_c[static_cast<std::size_t>(best_c)] = true;
    picked_r.push_back(rpool[static_cast<std::size_t>(best_r)]);
    picked_c.push_back(cpool[static_cast<std::size_t>(best_c)]);
    add_usage(*picked_r.back());
    add_usage(*picked_c.back());
  }
  // Remaining chunky trials must sit within max_gap of some selected random.
  while (static_cast<int>(picked_c.size()) < options.n_chunky) {
    int best = -1;
    double best_score = 0.0;
    for (std::size_t j = 0; j < cpool.size(); ++j) {
      if (used_c[j]) continue;
      int gap = options.max_gap + 1;
      for (const Trial* r : picked_r) gap = std::min(gap, std::abs(r->complexity - cpool[j]->complexity));
      if (!picked_r.empty() && gap > options.max_gap) continue;
      const double score = usage_score(*cpool[j]) + 0.01 * gap;
      if (best < 0 || score < best_score) {
        best = static_cast<int>(j);
        best_score = score;
      }
    }
    if (best < 0) fail("not enough complexity-matched chunky trials");
    used_c[static_cast<std::size_t>(best)] = true;
    picked_c.push_back(cpool[static_cast<std::size_t>(best)]);
    add_usage(*picked_c.back());
  }

  ProblemSet set;
  for (const Trial* t : picked_c) set.trials.push_back(*t);
  for (const Trial* t : picked_r) set.trials.push_back(*t);
  auto window_ok = [&]() {
    if (options.min_chunky_per_window <= 0) return true;
    const int n = static_cast<int>(set.trials.size());
    const int w = std::min(options.window, n);
    int head = 0;
    int tail = 0;
    for (int i = 0; i < w; ++i) {
      head += set.trials[static_cast<std::size_t>(i)].kind == Kind::chunky;
      tail += set.trials[static_cast<std::size_t>(n - 1 - i)].kind == Kind::chunky;
    }
    return head >= options.min_chunky_per_window && tail >= options.min_chunky_per_window;
  };
  for (int tries = 0; tries < 10000; ++tries) {
    for (std::size_t i = 0; i < set.trials.size(); ++i) {
      std::swap(set.trials[i], set.trials[i + uniform_index(rng, set.trials.size() - i)]);
    }
    if (window_ok()) return set;
  }
  throw std::invalid_argument("cannot order trials to satisfy the window constraint");
}

nlohmann::json solution_to_json(const Solution& solution) {
  auto j = nlohmann::json::array();
  for (const auto& p : solution) j.push_back({p.block, p.anchor.x, p.anchor.y});
  return j;
}

Solution solution_from_json(const nlohmann::json& j) {
  Solution s;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 3) throw std::invalid_argument("placement must be [block, x, y]");
    s.push_back(Placement{p[0].get<int>(), Cell{p[1].get<int>(), p[2].get<int>()}});
  }
  return s;
}

nlohmann::json trial_to_json(const Trial& trial) {
  auto cert = nlohmann::json::array();
  for (const auto& s : trial.certificate) cert.push_back(solution_to_json(s));
  return {{"id", trial.id},
          {"kind", to_string(trial.kind)},
          {"complexity", trial.complexity},
          {"tree_size", trial.tree_size},
          {"silhouette", trial.silhouette.to_json()},
          {"certificate", cert},
          {"certificate_hash", certificate_hash(trial.certificate)}};
}

Trial trial_from_json(const nlohmann::json& j) {
  Trial t{j.at("id").get<std::string>(), kind_from_string(j.at("kind").get<std::string>()),
          Silhouette::from_json(j.at("silhouette")), j.at("complexity").get<int>(),
          j.at("tree_size").get<long>(), {}};
  for (const auto& s : j.at("certificate")) t.certificate.push_back(solution_from_json(s));
  if (certificate_hash(t.certificate) != j.at("certificate_hash").get<std::string>()) {
    throw std::invalid_argument("certificate hash mismatch for trial " + t.id);
  }
  return t;
}

std::vector<double> block_frequencies(const ProblemSet& set, std::size_t blocks) {
  std::vector<double> freq(blocks, 0.0);
  for (const auto& t : set.trials) {
    for (const auto& s : t.certificate) {
      for (int b : solution_blocks(s)) {
        freq.at(static_cast<std::size_t>(b)) += 1.0 / static_cast<double>(t.certificate.size());
      }
    }
  }
  return freq;
}

std::string certificate_hash(const std::vector<Solution>& certificate) {
  auto sorted = certificate;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](int v) {
    for (int k = 0; k < 4; ++k) {
      h ^= static_cast<std::uint64_t>((static_cast<unsigned>(v) >> (8 * k)) & 0xFFU);
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : sorted) {
    mix(-1);
    for (const auto& p : s) {
      mix(p.block);
      mix(p.anchor.x);
      mix(p.anchor.y);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace habitree::taskgen
