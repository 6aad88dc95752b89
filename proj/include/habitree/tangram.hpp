#pragma once

#include <bitset>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "habitree/action_token.hpp"
#include "json.hpp"

// Sticky Tangram: blocks are dropped one at a time into a target
// silhouette on a coarse grid. The first block must rest on the floor,
// every later block must share an edge with the construction, and each
// inventory block is used at most once.
namespace habitree::tangram {

struct Cell {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
  friend Cell operator+(Cell a, Cell b) { return {a.x + b.x, a.y + b.y}; }
  friend Cell operator-(Cell a, Cell b) { return {a.x - b.x, a.y - b.y}; }
};

inline constexpr int kMaxGridCells = 256;
using CellMask = std::bitset<kMaxGridCells>;

// y grows upwards; row 0 is the bottom of the grid.
struct Grid {
  int width = 10;
  int height = 6;

  bool contains(Cell c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }
  int index(Cell c) const { return c.y * width + c.x; }
  Cell cell(int index) const { return {index % width, index / width}; }
  int cells() const { return width * height; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

// Throws std::invalid_argument unless 1 <= width, height and the grid fits
// in a CellMask.
void validate(const Grid& grid);

struct BlockShape {
  int id = 0;
  std::string name;
  char glyph = '#';
  // Offsets from the anchor. cells.front() is the anchor (0,0), which is
  // the lexicographically smallest cell (x first, then y).
  std::vector<Cell> cells;
};

// Normalizes `cells` so the anchor sits at (0,0) and checks that the shape
// is non-empty, duplicate-free and 4-connected.
BlockShape make_shape(int id, std::string name, char glyph,
                      std::vector<Cell> cells);

class Inventory {
 public:
  Inventory() = default;
  explicit Inventory(std::vector<BlockShape> shapes);

  // 1x1, 1x2 (horizontal), 2x1 (vertical), 1x3, 2x2, L-tromino and its
  // mirror image.
  static Inventory standard();
  static Inventory from_json(const nlohmann::json& j);
  static Inventory load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::size_t size() const { return shapes_.size(); }
  const BlockShape& operator[](std::size_t i) const { return shapes_.at(i); }
  const std::vector<BlockShape>& shapes() const { return shapes_; }

 private:
  std::vector<BlockShape> shapes_;
};

class Silhouette {
 public:
  Silhouette(Grid grid, const std::vector<Cell>& cells);

  const Grid& grid() const { return grid_; }
  const CellMask& mask() const { return mask_; }
  bool contains(Cell c) const { return grid_.contains(c) && mask_[grid_.index(c)]; }
  int floor_y() const { return floor_y_; }
  // Leftmost cell of the bottom row; origin for the first action token.
  Cell floor_origin() const { return {floor_x_, floor_y_}; }
  int area() const { return static_cast<int>(mask_.count()); }
  std::vector<Cell> cells() const;

  nlohmann::json to_json() const;
  static Silhouette from_json(const nlohmann::json& j);

  friend bool operator==(const Silhouette& a, const Silhouette& b) {
    return a.grid_ == b.grid_ && a.mask_ == b.mask_;
  }

 private:
  Grid grid_;
  CellMask mask_;
  int floor_y_ = 0;
  int floor_x_ = 0;
};

struct Placement {
  int block = 0;
  Cell anchor;

  friend auto operator<=>(const Placement&, const Placement&) = default;
};

enum class Rule {
  unknown_block,
  block_reuse,
  outside_silhouette,
  overlap,
  not_on_floor,
  floating,
  disjoint_remainder,
};

std::string_view rule_name(Rule rule);

class RuleViolation : public std::runtime_error {
 public:
  explicit RuleViolation(Rule rule);
  Rule rule() const { return rule_; }

 private:
  Rule rule_;
};

// A silhouette together with the inventory it is to be built from, plus
// every placement that lies fully inside the silhouette. Immutable and
// shared by all states of one episode.
class Problem {
 public:
  struct Candidate {
    Placement placement;
    CellMask cells;
    CellMask halo;  // cells sharing an edge with the block, excluding it
    bool on_floor = false;
    int size = 0;
  };

  static std::shared_ptr<const Problem> create(Silhouette silhouette,
                                               Inventory inventory);

  const Silhouette& silhouette() const { return silhouette_; }
  const Inventory& inventory() const { return inventory_; }
  const Grid& grid() const { return silhouette_.grid(); }
  // Canonical order: block id, then anchor (x, then y).
  const std::vector<Candidate>& candidates() const { return candidates_; }
  const Candidate* find(const Placement& p) const;
  // Mask-restricted 4-neighbourhood of a grid index.
  const std::vector<int>& neighbours(int index) const { return neighbours_[index]; }

 private:
  Problem(Silhouette silhouette, Inventory inventory);

  Silhouette silhouette_;
  Inventory inventory_;
  std::vector<Candidate> candidates_;
  std::vector<std::vector<int>> neighbours_;
};

class BoardState {
 public:
  explicit BoardState(std::shared_ptr<const Problem> problem);

  const Problem& problem() const { return *problem_; }
  const std::shared_ptr<const Problem>& problem_ptr() const { return problem_; }
  const Silhouette& silhouette() const { return problem_->silhouette(); }
  const std::vector<Placement>& placements() const { return placements_; }
  const CellMask& occupied() const { return occupied_; }
  bool block_used(int block) const { return (used_ >> block) & 1U; }
  int blocks_remaining() const;

 private:
  friend BoardState apply(const BoardState& state, const Placement& action);

  std::shared_ptr<const Problem> problem_;
  std::vector<Placement> placements_;
  CellMask occupied_;
  std::uint64_t used_ = 0;
};

// First violated rule, or nullopt if `action` is legal in `state`.
std::optional<Rule> check(const BoardState& state, const Placement& action);

std::vector<Placement> valid_actions(const BoardState& state);
bool has_valid_action(const BoardState& state);

// Throws RuleViolation naming the violated rule.
BoardState apply(const BoardState& state, const Placement& action);

bool is_goal(const BoardState& state);

ActionToken tokenize(const BoardState& before, const Placement& action);
Placement detokenize(const BoardState& before, const ActionToken& token);

// ASCII picture, top row first: '.' empty silhouette cell, ' ' outside,
// block glyphs for placed blocks.
std::string render(const BoardState& state);

}  // namespace habitree::tangram
