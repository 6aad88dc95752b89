#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "habitree/rng.hpp"
#include "habitree/tangram.hpp"
#include "json.hpp"

namespace habitree::taskgen {

using Solution = std::vector<tangram::Placement>;

enum class Kind { chunky, random, ambiguous };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

struct ChunkMember {
  int block = 0;
  tangram::Cell offset;  // anchor displacement from the previous member; unused for the first
};

// Blocks that always appear together, in the same relative position and
// placement order.
struct ChunkSpec {
  std::vector<ChunkMember> members;

  std::vector<int> blocks() const;
  bool uses(int block) const;
  // Throws std::invalid_argument unless the members are distinct blocks of
  // `inventory`, number 2 or 3, and each touches its predecessor.
  void validate(const tangram::Inventory& inventory) const;

  nlohmann::json to_json() const;
  static ChunkSpec from_json(const nlohmann::json& j);
};

// Default chunks for the standard inventory.
ChunkSpec default_duplet();
ChunkSpec default_triplet();

// Small hand-made target with a single solution on the standard inventory
// and the default 10x6 grid: a domino-h on the floor, a tromino-l on it, a
// domino-v and a 1x3 bar closing an arch to the left. Its full game tree has
// 18 nodes and vanilla search needs about 10 of them.
tangram::Silhouette example_silhouette();

class TreeTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExhaustiveResult {
  std::vector<Solution> solutions;
  long tree_size = 0;  // nodes below the root
};

// Depth-first enumeration of the whole game tree from `root`. Throws
// TreeTooLarge once more than `max_nodes` nodes have been visited.
ExhaustiveResult solve_exhaustive(const tangram::BoardState& root, long max_nodes = 100000);
ExhaustiveResult solve_exhaustive(const tangram::Silhouette& silhouette,
                                  const tangram::Inventory& inventory, long max_nodes = 100000);

// Index in `solution` where the chunk members start as a consecutive run
// in order and in their fixed arrangement, or -1.
int find_chunk(const Solution& solution, const ChunkSpec& chunk);
// Order in which the chunk's blocks appear in `solution` (blocks that do not
// appear are skipped).
std::vector<int> member_order(const Solution& solution, const ChunkSpec& chunk);

struct Generated {
  tangram::Silhouette silhouette;
  std::vector<Solution> certificate;
  long tree_size = 0;
  Solution construction;  // how the generator grew it
};

struct GenOptions {
  int n_blocks = 4;
  int retry_cap = 10000;
  long tree_cap = 100000;
  // Non-chunk blocks to use; empty means a random choice per attempt.
  std::vector<int> extra_blocks;
  // Grow the chunk first, so its first member rests on the floor.
  bool chunk_first = true;
};

// Throws GenerationError after `retry_cap` rejected attempts.
Generated gen_silhouette(Kind kind, const ChunkSpec* chunk, const tangram::Inventory& inventory,
                         const tangram::Grid& grid, Rng& rng, const GenOptions& options = {});

// Kind constraints on a complete solution set; empty string when they hold.
std::string check_kind(Kind kind, const ChunkSpec* chunk, const std::vector<Solution>& solutions);

// Checks a certificate against a fresh exhaustive solve and the kind's
// constraints; empty string when it holds.
std::string verify(Kind kind, const ChunkSpec* chunk, const tangram::Silhouette& silhouette,
                   const tangram::Inventory& inventory, const std::vector<Solution>& certificate);

// Median nodes vanilla MCTS needs to solve the silhouette over `repeats`
// runs. budget_cap <= 0 means ten times the tree size. Throws
// std::runtime_error if more than half of the runs fail.
int complexity(const tangram::Silhouette& silhouette, const tangram::Inventory& inventory,
               int repeats, int budget_cap, Rng& rng);

struct Trial {
  std::string id;
  Kind kind = Kind::random;
  tangram::Silhouette silhouette;
  int complexity = 0;
  long tree_size = 0;
  std::vector<Solution> certificate;
};

nlohmann::json solution_to_json(const Solution& solution);
Solution solution_from_json(const nlohmann::json& j);
// Includes the certificate hash; from_json rejects a certificate that does
// not match its hash.
nlohmann::json trial_to_json(const Trial& trial);
Trial trial_from_json(const nlohmann::json& j);

struct ProblemSet {
  std::vector<Trial> trials;
};

struct MatchOptions {
  int cap = 50;
  int n_chunky = 11;
  int n_random = 8;
  int max_gap = 5;
  std::vector<int> chunk_blocks;  // for marginal balancing; may be empty
  int window = 5;                 // first/last windows that must hold chunky trials
  int min_chunky_per_window = 0;
};

// Complexity-matched selection of chunky and random trials, shuffled.
// Throws std::invalid_argument if the pools cannot supply the sizes.
ProblemSet match_sets(const std::vector<Trial>& chunky, const std::vector<Trial>& random,
                      const MatchOptions& options, Rng& rng);

// Per block id: how many certified solutions (over all trials) use it.
std::vector<double> block_frequencies(const ProblemSet& set, std::size_t blocks);

std::string certificate_hash(const std::vector<Solution>& certificate);

}  // namespace habitree::taskgen
