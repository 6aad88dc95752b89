#pragma once

#include <compare>
#include <ostream>

namespace habitree {

// One block placement expressed relative to the previous placement (or,
// for the first placement of an episode, relative to the silhouette's
// leftmost floor cell). Carries no board state, so equal tokens recur
// across different problems.
struct ActionToken {
  int block = 0;
  int dx = 0;
  int dy = 0;

  friend auto operator<=>(const ActionToken&, const ActionToken&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const ActionToken& t) {
  return os << 'b' << t.block << '(' << t.dx << ',' << t.dy << ')';
}

}  // namespace habitree
