#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "habitree/action_token.hpp"
#include "habitree/rng.hpp"
#include "json.hpp"

// Online hierarchical Dirichlet process over action tokens.
//
// Every context u (the last <= max_depth tokens, most recent last) owns a
// Chinese restaurant whose base measure is the restaurant of pi(u), the
// context with its earliest token dropped. The empty context backs off to
// the uniform distribution over the vocabulary. Seating follows a single
// sampled path: each new customer either joins an existing table of its
// token (weight = table size) or opens a new one (weight = alpha * parent
// predictive), and a new table sends one customer up to the parent.
namespace habitree::habits {

class VocabularyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// All (block, dx, dy) with 0 <= block < blocks, |dx| < width, |dy| < height.
class Vocabulary {
 public:
  Vocabulary(int blocks, int width, int height);

  std::size_t size() const { return size_; }
  bool contains(const ActionToken& t) const;
  // Throws VocabularyError for tokens outside the alphabet.
  int index(const ActionToken& t) const;
  ActionToken token(int index) const;

  int blocks() const { return blocks_; }
  int width() const { return width_; }
  int height() const { return height_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  int blocks_;
  int width_;
  int height_;
  std::size_t size_;
};

using Context = std::vector<ActionToken>;

// Drops the earliest token.
Context truncate(const Context& context);

// Next-token distribution. Tokens absent from `entries` all carry
// `background`; entries are sorted by vocabulary index.
struct PredictiveDist {
  std::size_t vocab_size = 0;
  double background = 0.0;
  std::vector<std::pair<int, double>> entries;
  double entropy = 0.0;  // nats

  double prob(int index) const;
  std::vector<double> dense() const;
  double total() const;
};

struct SeqModelConfig {
  double alpha = 1.0;
  int max_depth = 3;
  std::uint64_t seed = 0;
};

class SeqModel {
 public:
  struct TokenTables {
    int customers = 0;
    int direct = 0;  // customers seated by observations, not by child tables
    std::vector<int> tables;
  };
  struct Restaurant {
    int customers = 0;
    int tables = 0;
    std::map<int, TokenTables> tokens;
  };

  SeqModel(Vocabulary vocab, SeqModelConfig config);
  SeqModel(const SeqModel& other);
  SeqModel& operator=(const SeqModel& other);

  const Vocabulary& vocab() const { return vocab_; }
  double alpha() const { return config_.alpha; }
  int max_depth() const { return config_.max_depth; }

  // Seats every token of one episode, each conditioned on its own
  // preceding (up to max_depth) tokens from the same episode. The whole
  // episode is validated before anything is seated.
  void observe(std::span<const ActionToken> episode);
  // One customer for `token` in the restaurant of `context`.
  void seat(const Context& context, const ActionToken& token);

  PredictiveDist predict(const Context& context) const;
  double probability(const Context& context, const ActionToken& token) const;
  ActionToken sample(const PredictiveDist& dist, Rng& rng) const;

  // Keys are vocabulary indices, most recent last.
  const std::map<std::vector<int>, Restaurant>& restaurants() const { return restaurants_; }
  // Empty string if consistent, else a description of the first problem.
  std::string check_consistency() const;

  std::uint64_t observe_calls() const { return observe_calls_.load(std::memory_order_relaxed); }
  std::uint64_t query_calls() const { return query_calls_.load(std::memory_order_relaxed); }

  nlohmann::json to_json() const;
  static SeqModel from_json(const nlohmann::json& j);
  std::string serialize() const { return to_json().dump(); }

 private:
  std::vector<int> key_of(const Context& context) const;
  double probability_key(std::span<const int> key, int token) const;
  void seat_key(std::vector<int> key, int token, bool direct);

  Vocabulary vocab_;
  SeqModelConfig config_;
  Rng rng_;
  std::map<std::vector<int>, Restaurant> restaurants_;
  mutable std::atomic<std::uint64_t> observe_calls_{0};
  mutable std::atomic<std::uint64_t> query_calls_{0};
};

// Grows a chunk from `first` by sampling successors while the next-token
// entropy (given context + chunk so far) is below `omega` and the chunk is
// shorter than `max_len`. Returns at least [first].
std::vector<ActionToken> unroll_chunk(const SeqModel& model, const Context& context,
                                      const ActionToken& first, double omega, int max_len,
                                      Rng& rng);

// Predictability of the first action of a primitive or chunk.
double habit_value(const SeqModel& model, const Context& context, const ActionToken& first);

}  // namespace habitree::habits
