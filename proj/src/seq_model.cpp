#include "habitree/seq_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace habitree::habits {

namespace {

constexpr const char* kFormat = "habitree-seqmodel";
constexpr int kVersion = 1;

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

Vocabulary::Vocabulary(int blocks, int width, int height)
    : blocks_(blocks), width_(width), height_(height) {
  if (blocks < 1 || width < 1 || height < 1) {
    throw std::invalid_argument("vocabulary dimensions must be positive");
  }
  size_ = static_cast<std::size_t>(blocks) * (2 * width - 1) * (2 * height - 1);
}

bool Vocabulary::contains(const ActionToken& t) const {
  return t.block >= 0 && t.block < blocks_ && std::abs(t.dx) < width_ && std::abs(t.dy) < height_;
}

int Vocabulary::index(const ActionToken& t) const {
  if (!contains(t)) {
    std::ostringstream os;
    os << "token " << t << " is not in the vocabulary";
    throw VocabularyError(os.str());
  }
  const int span_y = 2 * height_ - 1;
  const int span_x = 2 * width_ - 1;
  return (t.block * span_x + (t.dx + width_ - 1)) * span_y + (t.dy + height_ - 1);
}

ActionToken Vocabulary::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= size_) {
    throw VocabularyError("vocabulary index out of range");
  }
  const int span_y = 2 * height_ - 1;
  const int span_x = 2 * width_ - 1;
  const int dy = index % span_y - (height_ - 1);
  const int rest = index / span_y;
  const int dx = rest % span_x - (width_ - 1);
  return {rest / span_x, dx, dy};
}

Context truncate(const Context& context) {
  if (context.empty()) return {};
  return Context(context.begin() + 1, context.end());
}

double PredictiveDist::prob(int index) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), index,
                             [](const auto& e, int i) { return e.first < i; });
  if (it != entries.end() && it->first == index) return it->second;
  return background;
}

std::vector<double> PredictiveDist::dense() const {
  std::vector<double> out(vocab_size, background);
  for (const auto& [i, p] : entries) out[static_cast<std::size_t>(i)] = p;
  return out;
}

double PredictiveDist::total() const {
  double s = background * static_cast<double>(vocab_size - entries.size());
  for (const auto& e : entries) s += e.second;
  return s;
}

SeqModel::SeqModel(Vocabulary vocab, SeqModelConfig config)
    : vocab_(vocab), config_(config), rng_(config.seed) {
  if (!(config_.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (config_.max_depth < 0) throw std::invalid_argument("max_depth must be non-negative");
}

SeqModel::SeqModel(const SeqModel& other)
    : vocab_(other.vocab_),
      config_(other.config_),
      rng_(other.rng_),
      restaurants_(other.restaurants_),
      observe_calls_(other.observe_calls()),
      query_calls_(other.query_calls()) {}

SeqModel& SeqModel::operator=(const SeqModel& other) {
  if (this != &other) {
    vocab_ = other.vocab_;
    config_ = other.config_;
    rng_ = other.rng_;
    restaurants_ = other.restaurants_;
    observe_calls_.store(other.observe_calls(), std::memory_order_relaxed);
    query_calls_.store(other.query_calls(), std::memory_order_relaxed);
  }
  return *this;
}

std::vector<int> SeqModel::key_of(const Context& context) const {
  const std::size_t keep = std::min(context.size(), static_cast<std::size_t>(config_.max_depth));
  std::vector<int> key;
  key.reserve(keep);
  for (auto it = context.end() - static_cast<std::ptrdiff_t>(keep); it != context.end(); ++it) {
    key.push_back(vocab_.index(*it));
  }
  return key;
}

double SeqModel::probability_key(std::span<const int> key, int token) const {
  double p = 1.0 / static_cast<double>(vocab_.size());
  // Shortest suffix first: [], [last], [second-last, last], ...
  for (std::size_t len = 0; len <= key.size(); ++len) {
    const std::vector<int> suffix(key.end() - static_cast<std::ptrdiff_t>(len), key.end());
    auto it = restaurants_.find(suffix);
    if (it == restaurants_.end() || it->second.customers == 0) continue;
    const Restaurant& r = it->second;
    auto tok = r.tokens.find(token);
    const double count = tok == r.tokens.end() ? 0.0 : tok->second.customers;
    p = (count + config_.alpha * p) / (r.customers + config_.alpha);
  }
  return p;
}

void SeqModel::seat_key(std::vector<int> key, int token, bool direct) {
  // Parent predictive must be read before this restaurant changes.
  double parent_p = 1.0 / static_cast<double>(vocab_.size());
  if (!key.empty()) {
    parent_p = probability_key(std::span<const int>(key).subspan(1), token);
  }
  Restaurant& r = restaurants_[key];
  TokenTables& t = r.tokens[token];
  bool open_table = true;
  if (t.customers > 0) {
    const double new_weight = config_.alpha * parent_p;
    double u = uniform01(rng_) * (t.customers + new_weight);
    for (int& size : t.tables) {
      if (u < size) {
        ++size;
        open_table = false;
        break;
      }
      u -= size;
    }
  }
  if (open_table) {
    t.tables.push_back(1);
    ++r.tables;
  }
  ++t.customers;
  ++r.customers;
  if (direct) ++t.direct;
  if (open_table && !key.empty()) {
    key.erase(key.begin());
    seat_key(std::move(key), token, false);
  }
}

void SeqModel::seat(const Context& context, const ActionToken& token) {
  const int index = vocab_.index(token);
  observe_calls_.fetch_add(1, std::memory_order_relaxed);
  seat_key(key_of(context), index, true);
}

void SeqModel::observe(std::span<const ActionToken> episode) {
  std::vector<int> indices;
  indices.reserve(episode.size());
  for (const auto& t : episode) indices.push_back(vocab_.index(t));
  observe_calls_.fetch_add(1, std::memory_order_relaxed);
  const auto depth = static_cast<std::size_t>(config_.max_depth);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t start = i > depth ? i - depth : 0;
    seat_key(std::vector<int>(indices.begin() + static_cast<std::ptrdiff_t>(start),
                              indices.begin() + static_cast<std::ptrdiff_t>(i)),
             indices[i], true);
  }
}

PredictiveDist SeqModel::predict(const Context& context) const {
  query_calls_.fetch_add(1, std::memory_order_relaxed);
  const std::vector<int> key = key_of(context);
  PredictiveDist d;
  d.vocab_size = vocab_.size();
  // p(a) = background + extra(a); extra is sparse and non-negative.
  double background = 1.0 / static_cast<double>(vocab_.size());
  std::vector<std::pair<int, double>> extra;
  std::vector<std::pair<int, double>> merged;
  for (std::size_t len = 0; len <= key.size(); ++len) {
    const std::vector<int> suffix(key.end() - static_cast<std::ptrdiff_t>(len), key.end());
    auto it = restaurants_.find(suffix);
    if (it == restaurants_.end() || it->second.customers == 0) continue;
    const Restaurant& r = it->second;
    const double denom = r.customers + config_.alpha;
    const double keep = config_.alpha / denom;
    background *= keep;
    merged.clear();
    auto e = extra.begin();
    auto c = r.tokens.begin();
    while (e != extra.end() || c != r.tokens.end()) {
      if (c == r.tokens.end() || (e != extra.end() && e->first < c->first)) {
        merged.emplace_back(e->first, e->second * keep);
        ++e;
      } else if (e == extra.end() || c->first < e->first) {
        if (c->second.customers > 0) merged.emplace_back(c->first, c->second.customers / denom);
        ++c;
      } else {
        merged.emplace_back(e->first, e->second * keep + c->second.customers / denom);
        ++e;
        ++c;
      }
    }
    extra.swap(merged);
  }
  d.background = background;
  d.entries.reserve(extra.size());
  double h = -static_cast<double>(vocab_.size() - extra.size()) * plogp(background);
  for (const auto& [i, x] : extra) {
    const double p = background + x;
    d.entries.emplace_back(i, p);
    h -= plogp(p);
  }
  d.entropy = std::max(0.0, h);
  return d;
}

double SeqModel::probability(const Context& context, const ActionToken& token) const {
  query_calls_.fetch_add(1, std::memory_order_relaxed);
  return probability_key(key_of(context), vocab_.index(token));
}

ActionToken SeqModel::sample(const PredictiveDist& dist, Rng& rng) const {
  double u = uniform01(rng) * dist.total();
  const double bg = dist.background;
  int prev = -1;
  int last_positive = -1;
  auto take_gap = [&](int gap) -> int {
    if (gap <= 0 || bg <= 0.0) return -1;
    const double mass = gap * bg;
    if (u < mass) return prev + 1 + std::min(gap - 1, static_cast<int>(u / bg));
    u -= mass;
    last_positive = prev + gap;
    return -1;
  };
  for (const auto& [i, p] : dist.entries) {
    if (int hit = take_gap(i - prev - 1); hit >= 0) return vocab_.token(hit);
    if (u < p) return vocab_.token(i);
    u -= p;
    if (p > 0.0) last_positive = i;
    prev = i;
  }
  if (int hit = take_gap(static_cast<int>(dist.vocab_size) - prev - 1); hit >= 0) {
    return vocab_.token(hit);
  }
  // Rounding left u past the end.
  return vocab_.token(last_positive >= 0 ? last_positive : 0);
}

std::string SeqModel::check_consistency() const {
  std::map<std::pair<std::vector<int>, int>, int> injected;
  for (const auto& [key, r] : restaurants_) {
    int customers = 0;
    int tables = 0;
    for (const auto& [tok, t] : r.tokens) {
      int seated = 0;
      for (int s : t.tables) {
        if (s < 1) return "empty table";
        seated += s;
      }
      if (seated != t.customers) return "table sizes do not sum to customer count";
      if (static_cast<int>(t.tables.size()) > t.customers) return "more tables than customers";
      if ((t.customers > 0) != !t.tables.empty()) return "customers without tables";
      customers += t.customers;
      tables += static_cast<int>(t.tables.size());
      if (!key.empty()) {
        injected[{std::vector<int>(key.begin() + 1, key.end()), tok}] +=
            static_cast<int>(t.tables.size());
      }
    }
    if (customers != r.customers || tables != r.tables) return "restaurant totals out of date";
  }
  for (const auto& [key, r] : restaurants_) {
    for (const auto& [tok, t] : r.tokens) {
      auto it = injected.find({key, tok});
      const int from_children = it == injected.end() ? 0 : it->second;
      if (t.customers != t.direct + from_children) return "parent counts do not match child tables";
    }
  }
  for (const auto& [k, n] : injected) {
    auto it = restaurants_.find(k.first);
    if (n > 0 && (it == restaurants_.end() || !it->second.tokens.contains(k.second))) {
      return "child table without parent customer";
    }
  }
  return {};
}

nlohmann::json SeqModel::to_json() const {
  auto token_json = [&](int index) {
    const ActionToken t = vocab_.token(index);
    return nlohmann::json::array({t.block, t.dx, t.dy});
  };
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& [key, r] : restaurants_) {
    nlohmann::json ctx = nlohmann::json::array();
    for (int i : key) ctx.push_back(token_json(i));
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& [tok, t] : r.tokens) {
      toks.push_back({{"token", token_json(tok)}, {"direct", t.direct}, {"tables", t.tables}});
    }
    rs.push_back({{"context", ctx}, {"tokens", toks}});
  }
  std::ostringstream rng_state;
  rng_state << rng_;
  return {{"format", kFormat},
          {"version", kVersion},
          {"alpha", config_.alpha},
          {"max_depth", config_.max_depth},
          {"seed", config_.seed},
          {"vocab", {{"blocks", vocab_.blocks()}, {"width", vocab_.width()}, {"height", vocab_.height()}}},
          {"rng", rng_state.str()},
          {"restaurants", rs}};
}

SeqModel SeqModel::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kFormat) throw std::runtime_error("not a sequence-model file");
  if (j.at("version").get<int>() != kVersion) {
    throw std::runtime_error("unsupported sequence-model version " + j.at("version").dump());
  }
  const auto& v = j.at("vocab");
  SeqModel m(Vocabulary(v.at("blocks").get<int>(), v.at("width").get<int>(), v.at("height").get<int>()),
             SeqModelConfig{j.at("alpha").get<double>(), j.at("max_depth").get<int>(),
                            j.at("seed").get<std::uint64_t>()});
  std::istringstream rng_state(j.at("rng").get<std::string>());
  rng_state >> m.rng_;
  if (!rng_state) throw std::runtime_error("corrupt sequence-model rng state");
  auto index_of = [&](const nlohmann::json& t) {
    return m.vocab_.index({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
  };
  for (const auto& r : j.at("restaurants")) {
    std::vector<int> key;
    for (const auto& t : r.at("context")) key.push_back(index_of(t));
    Restaurant& rest = m.restaurants_[key];
    for (const auto& t : r.at("tokens")) {
      TokenTables& tt = rest.tokens[index_of(t.at("token"))];
      tt.direct = t.at("direct").get<int>();
      tt.tables = t.at("tables").get<std::vector<int>>();
      for (int s : tt.tables) tt.customers += s;
      rest.customers += tt.customers;
      rest.tables += static_cast<int>(tt.tables.size());
    }
  }
  if (auto err = m.check_consistency(); !err.empty()) {
    throw std::runtime_error("inconsistent sequence-model file: " + err);
  }
  return m;
}

std::vector<ActionToken> unroll_chunk(const SeqModel& model, const Context& context,
                                      const ActionToken& first, double omega, int max_len,
                                      Rng& rng) {
  std::vector<ActionToken> chunk{first};
  Context ctx = context;
  ctx.push_back(first);
  while (static_cast<int>(chunk.size()) < max_len && omega > 0.0) {
    const PredictiveDist next = model.predict(ctx);
    if (!(next.entropy < omega)) break;
    const ActionToken t = model.sample(next, rng);
    chunk.push_back(t);
    ctx.push_back(t);
  }
  return chunk;
}

double habit_value(const SeqModel& model, const Context& context, const ActionToken& first) {
  return model.probability(context, first);
}

}  // namespace habitree::habits
