#include "habitree/tangram.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace habitree::tangram {

namespace {

bool four_connected(const std::vector<Cell>& cells) {
  if (cells.empty()) return false;
  std::vector<bool> seen(cells.size(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const Cell c = cells[stack.back()];
    stack.pop_back();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (seen[i]) continue;
      const int d = std::abs(cells[i].x - c.x) + std::abs(cells[i].y - c.y);
      if (d == 1) {
        seen[i] = true;
        ++reached;
        stack.push_back(i);
      }
    }
  }
  return reached == cells.size();
}

constexpr Cell kSteps[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

}  // namespace

void validate(const Grid& grid) {
  if (grid.width < 1 || grid.height < 1 || grid.cells() > kMaxGridCells) {
    throw std::invalid_argument("grid must be at least 1x1 and at most " +
                                std::to_string(kMaxGridCells) + " cells");
  }
}

BlockShape make_shape(int id, std::string name, char glyph,
                      std::vector<Cell> cells) {
  std::sort(cells.begin(), cells.end());
  if (std::adjacent_find(cells.begin(), cells.end()) != cells.end()) {
    throw std::invalid_argument("shape '" + name + "' repeats a cell");
  }
  if (!four_connected(cells)) {
    throw std::invalid_argument("shape '" + name + "' is empty or not 4-connected");
  }
  const Cell anchor = cells.front();
  for (Cell& c : cells) c = c - anchor;
  return BlockShape{id, std::move(name), glyph, std::move(cells)};
}

Inventory::Inventory(std::vector<BlockShape> shapes) : shapes_(std::move(shapes)) {
  if (shapes_.empty() || shapes_.size() > 64) {
    throw std::invalid_argument("inventory needs between 1 and 64 blocks");
  }
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    if (shapes_[i].id != static_cast<int>(i)) {
      throw std::invalid_argument("inventory block ids must be 0..n-1 in order");
    }
  }
}

Inventory Inventory::standard() {
  return Inventory({
      make_shape(0, "mono", 'a', {{0, 0}}),
      make_shape(1, "domino-h", 'b', {{0, 0}, {1, 0}}),
      make_shape(2, "domino-v", 'c', {{0, 0}, {0, 1}}),
      make_shape(3, "tromino-i", 'd', {{0, 0}, {1, 0}, {2, 0}}),
      make_shape(4, "square", 'e', {{0, 0}, {1, 0}, {0, 1}, {1, 1}}),
      make_shape(5, "tromino-l", 'f', {{0, 0}, {1, 0}, {0, 1}}),
      make_shape(6, "tromino-j", 'g', {{0, 0}, {1, 0}, {1, 1}}),
  });
}

Inventory Inventory::from_json(const nlohmann::json& j) {
  std::vector<BlockShape> shapes;
  int id = 0;
  for (const auto& s : j.at("shapes")) {
    std::vector<Cell> cells;
    for (const auto& c : s.at("cells")) cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    const std::string glyph = s.value("glyph", std::string(1, static_cast<char>('a' + id)));
    shapes.push_back(make_shape(id, s.value("name", "block" + std::to_string(id)),
                                glyph.empty() ? '#' : glyph[0], std::move(cells)));
    ++id;
  }
  return Inventory(std::move(shapes));
}

Inventory Inventory::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open shapes file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json Inventory::to_json() const {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : shapes_) {
    nlohmann::json cells = nlohmann::json::array();
    for (Cell c : s.cells) cells.push_back({c.x, c.y});
    shapes.push_back({{"name", s.name}, {"glyph", std::string(1, s.glyph)}, {"cells", cells}});
  }
  return {{"shapes", shapes}};
}

Silhouette::Silhouette(Grid grid, const std::vector<Cell>& cells) : grid_(grid) {
  validate(grid_);
  if (cells.empty()) throw std::invalid_argument("silhouette is empty");
  for (Cell c : cells) {
    if (!grid_.contains(c)) throw std::invalid_argument("silhouette cell outside the grid");
    mask_.set(grid_.index(c));
  }
  if (!four_connected(this->cells())) {
    throw std::invalid_argument("silhouette is not 4-connected");
  }
  floor_y_ = grid_.height;
  floor_x_ = grid_.width;
  for (Cell c : cells) {
    if (c.y < floor_y_ || (c.y == floor_y_ && c.x < floor_x_)) {
      floor_y_ = c.y;
      floor_x_ = c.x;
    }
  }
}

std::vector<Cell> Silhouette::cells() const {
  std::vector<Cell> out;
  for (int i = 0; i < grid_.cells(); ++i) {
    if (mask_[i]) out.push_back(grid_.cell(i));
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json Silhouette::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (Cell c : this->cells()) cells.push_back({c.x, c.y});
  return {{"width", grid_.width}, {"height", grid_.height}, {"cells", cells}};
}

Silhouette Silhouette::from_json(const nlohmann::json& j) {
  std::vector<Cell> cells;
  for (const auto& c : j.at("cells")) cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  return Silhouette(Grid{j.at("width").get<int>(), j.at("height").get<int>()}, cells);
}

std::string_view rule_name(Rule rule) {
  switch (rule) {
    case Rule::unknown_block: return "unknown block";
    case Rule::block_reuse: return "block reuse";
    case Rule::outside_silhouette: return "outside silhouette";
    case Rule::overlap: return "overlap";
    case Rule::not_on_floor: return "not on floor";
    case Rule::floating: return "floating block";
    case Rule::disjoint_remainder: return "disjoint remainder";
  }
  return "unknown rule";
}

RuleViolation::RuleViolation(Rule rule)
    : std::runtime_error("rule violation: " + std::string(rule_name(rule))), rule_(rule) {}

std::shared_ptr<const Problem> Problem::create(Silhouette silhouette, Inventory inventory) {
  return std::shared_ptr<const Problem>(new Problem(std::move(silhouette), std::move(inventory)));
}

Problem::Problem(Silhouette silhouette, Inventory inventory)
    : silhouette_(std::move(silhouette)), inventory_(std::move(inventory)) {
  const Grid& g = silhouette_.grid();
  neighbours_.resize(g.cells());
  for (int i = 0; i < g.cells(); ++i) {
    if (!silhouette_.mask()[i]) continue;
    for (Cell step : kSteps) {
      const Cell n = g.cell(i) + step;
      if (silhouette_.contains(n)) neighbours_[i].push_back(g.index(n));
    }
  }
  for (const BlockShape& shape : inventory_.shapes()) {
    for (int x = 0; x < g.width; ++x) {
      for (int y = 0; y < g.height; ++y) {
        Candidate cand;
        cand.placement = {shape.id, {x, y}};
        bool inside = true;
        for (Cell off : shape.cells) {
          const Cell c = Cell{x, y} + off;
          if (!silhouette_.contains(c)) {
            inside = false;
            break;
          }
          cand.cells.set(g.index(c));
          cand.on_floor = cand.on_floor || c.y == silhouette_.floor_y();
        }
        if (!inside) continue;
        for (Cell off : shape.cells) {
          for (Cell step : kSteps) {
            const Cell n = Cell{x, y} + off + step;
            if (g.contains(n) && !cand.cells[g.index(n)]) cand.halo.set(g.index(n));
          }
        }
        cand.size = static_cast<int>(shape.cells.size());
        candidates_.push_back(cand);
      }
    }
  }
}

const Problem::Candidate* Problem::find(const Placement& p) const {
  auto it = std::lower_bound(candidates_.begin(), candidates_.end(), p,
                             [](const Candidate& c, const Placement& q) { return c.placement < q; });
  if (it == candidates_.end() || it->placement != p) return nullptr;
  return &*it;
}

BoardState::BoardState(std::shared_ptr<const Problem> problem) : problem_(std::move(problem)) {
  if (!problem_) throw std::invalid_argument("board state needs a problem");
}

int BoardState::blocks_remaining() const {
  return static_cast<int>(problem_->inventory().size()) - static_cast<int>(placements_.size());
}

namespace {

// Rule 5: after the placement, every empty region must still touch the
// construction or the floor, and must be big enough for at least one of the
// blocks still in hand. A region smaller than every remaining block can never
// be filled, so the placement would cut it off for good.
bool remainder_ok(const BoardState& state, const Problem::Candidate& cand) {
  const Problem& problem = state.problem();
  const Silhouette& sil = problem.silhouette();
  const Grid& g = sil.grid();
  const CellMask built = state.occupied() | cand.cells;
  CellMask empty = sil.mask() & ~built;
  if (empty.none()) return true;

  int smallest = kMaxGridCells;
  for (const BlockShape& s : problem.inventory().shapes()) {
    if (s.id != cand.placement.block && !state.block_used(s.id)) {
      smallest = std::min(smallest, static_cast<int>(s.cells.size()));
    }
  }
  std::vector<int> stack;
  for (int start = 0; start < g.cells(); ++start) {
    if (!empty[start]) continue;
    bool anchored = false;
    int size = 0;
    stack.assign(1, start);
    empty.reset(start);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      ++size;
      if (g.cell(i).y == sil.floor_y()) anchored = true;
      for (int n : problem.neighbours(i)) {
        if (built[n]) anchored = true;
        if (empty[n]) {
          empty.reset(n);
          stack.push_back(n);
        }
      }
    }
    if (!anchored || size < smallest) return false;
  }
  return true;
}

std::optional<Rule> check_candidate(const BoardState& state, const Problem::Candidate& cand) {
  if (state.block_used(cand.placement.block)) return Rule::block_reuse;
  if ((cand.cells & state.occupied()).any()) return Rule::overlap;
  if (state.placements().empty()) {
    if (!cand.on_floor) return Rule::not_on_floor;
  } else if ((cand.halo & state.occupied()).none()) {
    return Rule::floating;
  }
  if (!remainder_ok(state, cand)) return Rule::disjoint_remainder;
  return std::nullopt;
}

}  // namespace

std::optional<Rule> check(const BoardState& state, const Placement& action) {
  if (action.block < 0 || action.block >= static_cast<int>(state.problem().inventory().size())) {
    return Rule::unknown_block;
  }
  if (state.block_used(action.block)) return Rule::block_reuse;
  const Problem::Candidate* cand = state.problem().find(action);
  if (cand == nullptr) return Rule::outside_silhouette;
  return check_candidate(state, *cand);
}

std::vector<Placement> valid_actions(const BoardState& state) {
  std::vector<Placement> out;
  for (const auto& cand : state.problem().candidates()) {
    if (!check_candidate(state, cand)) out.push_back(cand.placement);
  }
  return out;
}

bool has_valid_action(const BoardState& state) {
  for (const auto& cand : state.problem().candidates()) {
    if (!check_candidate(state, cand)) return true;
  }
  return false;
}

BoardState apply(const BoardState& state, const Placement& action) {
  if (auto violated = check(state, action)) throw RuleViolation(*violated);
  BoardState next = state;
  next.placements_.push_back(action);
  next.occupied_ |= state.problem().find(action)->cells;
  next.used_ |= std::uint64_t{1} << action.block;
  return next;
}

bool is_goal(const BoardState& state) {
  return state.occupied() == state.silhouette().mask();
}

ActionToken tokenize(const BoardState& before, const Placement& action) {
  const Cell origin = before.placements().empty() ? before.silhouette().floor_origin()
                                                  : before.placements().back().anchor;
  const Cell d = action.anchor - origin;
  return {action.block, d.x, d.y};
}

Placement detokenize(const BoardState& before, const ActionToken& token) {
  const Cell origin = before.placements().empty() ? before.silhouette().floor_origin()
                                                  : before.placements().back().anchor;
  return {token.block, origin + Cell{token.dx, token.dy}};
}

std::string render(const BoardState& state) {
  const Silhouette& sil = state.silhouette();
  const Grid& g = sil.grid();
  std::string pic(static_cast<std::size_t>(g.cells()), ' ');
  for (int i = 0; i < g.cells(); ++i) {
    if (sil.mask()[i]) pic[i] = '.';
  }
  for (const Placement& p : state.placements()) {
    const BlockShape& shape = state.problem().inventory()[p.block];
    for (Cell off : shape.cells) {
      const Cell c = p.anchor + off;
      if (g.contains(c)) pic[g.index(c)] = shape.glyph;
    }
  }
  std::ostringstream os;
  for (int y = g.height - 1; y >= 0; --y) {
    os << '|' << pic.substr(static_cast<std::size_t>(y * g.width), g.width) << "|\n";
  }
  os << '+' << std::string(g.width, '-') << "+\n";
  return os.str();
}

}  // namespace habitree::tangram
