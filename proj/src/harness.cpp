#include "habitree/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "habitree/rng.hpp"

namespace habitree::harness {

using taskgen::Kind;
using taskgen::Trial;
using tangram::BoardState;
using tangram::Problem;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kGenTag = 0x67656e;
constexpr std::uint64_t kComplexityTag = 0x63706c78;
constexpr std::uint64_t kOrderTag = 0x6f726472;
constexpr std::uint64_t kModelTag = 0x6d6f646c;
constexpr std::uint64_t kTrainTag = 0x7472616e;
constexpr std::uint64_t kBudgetTag = 0x62756467;
constexpr std::uint64_t kAmbiguousTag = 0x616d6267;

template <class F>
void parallel_for(std::size_t n, int workers, F&& body) {
  const std::size_t threads =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string to_string(Condition condition) {
  return condition == Condition::duplet ? "duplet" : "triplet";
}

Condition condition_from_string(const std::string& s) {
  if (s == "duplet") return Condition::duplet;
  if (s == "triplet") return Condition::triplet;
  throw std::invalid_argument("unknown condition '" + s + "' (expected duplet or triplet)");
}

taskgen::ChunkSpec default_chunk(Condition condition) {
  return condition == Condition::duplet ? taskgen::default_duplet() : taskgen::default_triplet();
}

planner::PlannerConfig VariantConfig::planner_config() const {
  planner::PlannerConfig config;
  config.budget = budget;
  config.c = c;
  config.h = uses_model ? h : 0.0;
  config.omega = uses_model ? omega : 0.0;
  return config;
}

std::vector<VariantConfig> table_variants() {
  return {
      {"full", 50, 1.0, 5.0, 1.5, 1.0, true},
      {"open-loop", 50, 1.0, 0.0, 1.5, 1.0, true},
      {"one-step", 50, 1.0, 5.0, 0.0, 1.0, true},
      {"vanilla", 50, 1.0, 0.0, 0.0, 1.0, false},
  };
}

VariantConfig find_variant(const std::vector<VariantConfig>& variants, const std::string& name) {
  for (const auto& v : variants) {
    if (v.name == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "'");
}

// ---------------------------------------------------------------------------
// Problem files

nlohmann::json ProblemFile::to_json() const {
  auto trials = [](const std::vector<Trial>& ts) {
    auto a = nlohmann::json::array();
    for (const auto& t : ts) a.push_back(taskgen::trial_to_json(t));
    return a;
  };
  auto budgets = nlohmann::json::array();
  for (const auto& [b, ts] : budget_tests) budgets.push_back({{"budget", b}, {"trials", trials(ts)}});
  return {{"format", "habitree-problems"},
          {"version", kVersion},
          {"condition", to_string(condition)},
          {"generator_seed", generator_seed},
          {"grid", {{"width", grid.width}, {"height", grid.height}}},
          {"inventory", inventory.to_json()},
          {"chunk", chunk.to_json()},
          {"complexity_cap", complexity_cap},
          {"training", trials(training)},
          {"budget_tests", budgets},
          {"ambiguous", trials(ambiguous)}};
}

ProblemFile ProblemFile::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "habitree-problems") throw FormatError("not a problem file");
    if (j.at("version") != kVersion) {
      throw FormatError("problem file version " + j.at("version").dump() + " is not supported (expected " +
                        std::to_string(kVersion) + ")");
    }
    ProblemFile f;
    f.condition = condition_from_string(j.at("condition").get<std::string>());
    f.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    f.grid = tangram::Grid{j.at("grid").at("width").get<int>(), j.at("grid").at("height").get<int>()};
    tangram::validate(f.grid);
    f.inventory = tangram::Inventory::from_json(j.at("inventory"));
    f.chunk = taskgen::ChunkSpec::from_json(j.at("chunk"));
    f.chunk.validate(f.inventory);
    f.complexity_cap = j.at("complexity_cap").get<int>();
    auto trials = [&](const nlohmann::json& a) {
      std::vector<Trial> ts;
      for (const auto& t : a) {
        ts.push_back(taskgen::trial_from_json(t));
        if (!(ts.back().silhouette.grid() == f.grid)) {
          throw FormatError("trial " + ts.back().id + " uses a different grid");
        }
      }
      return ts;
    };
    f.training = trials(j.at("training"));
    for (const auto& b : j.at("budget_tests")) {
      f.budget_tests[b.at("budget").get<int>()] = trials(b.at("trials"));
    }
    f.ambiguous = trials(j.at("ambiguous"));
    return f;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad problem file: ") + e.what());
  }
}

ProblemFile ProblemFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return from_json(j);
}

void ProblemFile::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Generation

std::pair<int, int> training_split(int trials) {
  if (trials < 2) throw std::invalid_argument("a training set needs at least 2 trials");
  const int chunky = std::clamp(static_cast<int>(std::lround(trials * 4.0 / 7.0)), 1, trials - 1);
  return {chunky, trials - chunky};
}

namespace {

class Generator {
 public:
  Generator(const GenConfig& config, std::uint64_t seed)
      : config_(config),
        seed_(seed),
        chunk_(config.chunk.value_or(default_chunk(config.condition))),
        rng_(derive_seed(seed, kGenTag)) {
    tangram::validate(config_.grid);
    chunk_.validate(config_.inventory);
  }

  const taskgen::ChunkSpec& chunk() const { return chunk_; }

  // `n` fresh silhouettes of `kind` with their complexity; those vanilla
  // search cannot measure or that exceed the cap are dropped, so fewer may
  // come back.
  std::vector<Trial> batch(Kind kind, int n) {
    std::vector<Trial> out;
    std::vector<std::uint64_t> cx_seeds;
    for (int i = 0; i < n; ++i) {
      taskgen::GenOptions options;
      options.chunk_first = config_.chunk_first;
      auto g = taskgen::gen_silhouette(kind, &chunk_, config_.inventory, config_.grid, rng_, options);
      const bool seen = std::any_of(seen_.begin(), seen_.end(),
                                    [&](const tangram::Silhouette& s) { return s == g.silhouette; });
      if (seen) continue;
      seen_.push_back(g.silhouette);
      const int k = counter_[kind]++;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%s-%03d", to_string(config_.condition).c_str(),
                    taskgen::to_string(kind).c_str(), k);
      out.push_back(Trial{id, kind, g.silhouette, 0, g.tree_size, std::move(g.certificate)});
      cx_seeds.push_back(derive_seed(seed_, kComplexityTag, static_cast<std::uint64_t>(kind),
                                     static_cast<std::uint64_t>(k)));
    }
    std::vector<int> cx(out.size(), -1);
    parallel_for(out.size(), config_.workers, [&](std::size_t i) {
      Rng r(cx_seeds[i]);
      try {
        cx[i] = taskgen::complexity(out[i].silhouette, config_.inventory, config_.complexity_repeats,
                                    0, r);
      } catch (const std::runtime_error&) {
        cx[i] = -1;
      }
    });
    std::vector<Trial> kept;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (cx[i] < 0 || cx[i] > config_.complexity_cap) continue;
      out[i].complexity = cx[i];
      kept.push_back(std::move(out[i]));
    }
    return kept;
  }

  // Exactly `n` trials, generating more as needed.
  std::vector<Trial> exactly(Kind kind, int n) {
    std::vector<Trial> out;
    for (int round = 0; static_cast<int>(out.size()) < n; ++round) {
      if (round > 1000) throw taskgen::GenerationError("cannot fill " + taskgen::to_string(kind) + " test set");
      auto more = batch(kind, n - static_cast<int>(out.size()));
      for (auto& t : more) out.push_back(std::move(t));
    }
    return out;
  }

  Rng& rng() { return rng_; }

 private:
  const GenConfig& config_;
  std::uint64_t seed_;
  taskgen::ChunkSpec chunk_;
  Rng rng_;
  std::vector<tangram::Silhouette> seen_;
  std::map<Kind, int> counter_;
};

}  // namespace

ProblemFile generate_problems(const GenConfig& config, std::uint64_t seed) {
  Generator gen(config, seed);
  ProblemFile f;
  f.condition = config.condition;
  f.generator_seed = seed;
  f.grid = config.grid;
  f.inventory = config.inventory;
  f.chunk = gen.chunk();
  f.complexity_cap = config.complexity_cap;

  const auto [n_chunky, n_random] = training_split(config.trials);
  taskgen::MatchOptions match;
  match.cap = config.complexity_cap;
  match.n_chunky = n_chunky;
  match.n_random = n_random;
  match.max_gap = config.max_gap;
  match.chunk_blocks = f.chunk.blocks();
  std::vector<Trial> chunky;
  std::vector<Trial> random;
  for (;;) {
    for (auto& t : gen.batch(Kind::chunky, config.pool_step)) chunky.push_back(std::move(t));
    for (auto& t : gen.batch(Kind::random, config.pool_step)) random.push_back(std::move(t));
    try {
      f.training = taskgen::match_sets(chunky, random, match, gen.rng()).trials;
      break;
    } catch (const std::invalid_argument& e) {
      if (static_cast<int>(chunky.size() + random.size()) >= config.max_pool) {
        throw taskgen::GenerationError(std::string("cannot assemble a matched training set: ") + e.what());
      }
    }
  }
  for (int b : config.budgets) {
    if (b < 1) throw std::invalid_argument("test budgets must be >= 1");
    auto& set = f.budget_tests[b];
    for (auto& t : gen.exactly(Kind::chunky, config.per_budget_chunky)) set.push_back(std::move(t));
    for (auto& t : gen.exactly(Kind::random, config.per_budget_random)) set.push_back(std::move(t));
  }
  f.ambiguous = gen.exactly(Kind::ambiguous, config.ambiguous);
  return f;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

TrialRecord make_record(const std::string& experiment, const ProblemFile& problems,
                        const VariantConfig& variant, std::uint64_t seed, int index,
                        const Trial& trial, int budget, const planner::PlanResult& result) {
  TrialRecord r;
  r.experiment = experiment;
  r.condition = problems.condition;
  r.variant = variant.name;
  r.seed = seed;
  r.trial = index;
  r.silhouette_id = trial.id;
  r.kind = trial.kind;
  r.complexity = trial.complexity;
  r.budget = budget;
  r.solved = result.solved;
  r.hit_cap = result.hit_cap;
  r.nodes_evaluated = result.nodes_evaluated;
  r.used_chunk = result.used_chunk;
  r.chunk_lengths = result.chunk_lengths;
  r.plan_tokens = result.plan_tokens;
  for (const auto& e : result.plan) {
    r.edge_sizes.push_back(static_cast<int>(e.placements.size()));
    for (const auto& p : e.placements) r.plan_placements.push_back(p);
  }
  r.silhouette = trial.silhouette;
  return r;
}

habits::SeqModel fresh_model(const ProblemFile& problems, const VariantConfig& variant,
                             const RunConfig& config, std::uint64_t seed) {
  habits::SeqModelConfig mc;
  mc.alpha = variant.alpha;
  mc.max_depth = config.max_depth;
  mc.seed = derive_seed(config.master_seed, kModelTag, seed);
  return habits::SeqModel(
      habits::Vocabulary(static_cast<int>(problems.inventory.size()), problems.grid.width,
                         problems.grid.height),
      mc);
}

const habits::SeqModel* model_for(const std::vector<StreamModel>& models, const VariantConfig& variant,
                                  std::uint64_t seed) {
  if (!variant.uses_model) return nullptr;
  for (const auto& m : models) {
    if (m.variant == variant.name && m.seed == seed) return &m.model;
  }
  throw std::invalid_argument("no trained model for variant " + variant.name + ", seed " +
                              std::to_string(seed));
}

BoardState root_state(const ProblemFile& problems, const Trial& trial) {
  return BoardState(Problem::create(trial.silhouette, problems.inventory));
}

}  // namespace

TrainingOutput run_training(const ProblemFile& problems, const RunConfig& config) {
  const std::size_t nv = config.variants.size();
  const std::size_t ns = config.seeds.size();
  std::vector<std::vector<TrialRecord>> records(nv * ns);
  std::vector<std::optional<StreamModel>> models(nv * ns);
  parallel_for(nv * ns, config.workers, [&](std::size_t job) {
    const VariantConfig& variant = config.variants[job / ns];
    const std::uint64_t seed = config.seeds[job % ns];
    habits::SeqModel model = fresh_model(problems, variant, config, seed);
    std::vector<std::size_t> order(problems.training.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(config.master_seed, kOrderTag, seed));
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::swap(order[i], order[i + uniform_index(order_rng, order.size() - i)]);
    }
    Rng rng(derive_seed(config.master_seed, kTrainTag, seed));
    const auto pc = variant.planner_config();
    int index = 0;
    for (std::size_t t : order) {
      const Trial& trial = problems.training[t];
      const auto result =
          planner::plan(root_state(problems, trial), variant.uses_model ? &model : nullptr, pc, rng);
      records[job].push_back(
          make_record("training", problems, variant, seed, index++, trial, pc.budget, result));
      if (variant.uses_model && !result.plan_tokens.empty()) model.observe(result.plan_tokens);
    }
    models[job] = StreamModel{variant.name, seed, std::move(model)};
  });
  TrainingOutput out;
  for (auto& rs : records) {
    for (auto& r : rs) out.records.push_back(std::move(r));
  }
  for (auto& m : models) out.models.push_back(std::move(*m));
  return out;
}

std::vector<TrialRecord> run_budget_test(const ProblemFile& problems,
                                         const std::vector<StreamModel>& models,
                                         const RunConfig& config, std::vector<int> budgets) {
  if (budgets.empty()) {
    // Tightening order: largest budget first.
    for (auto it = problems.budget_tests.rbegin(); it != problems.budget_tests.rend(); ++it) {
      budgets.push_back(it->first);
    }
  }
  for (int b : budgets) {
    if (!problems.budget_tests.count(b)) {
      throw std::invalid_argument("problem file has no test silhouettes for budget " + std::to_string(b));
    }
  }
  const std::size_t nv = config.variants.size();
  const std::size_t ns = config.seeds.size();
  std::vector<std::vector<TrialRecord>> records(nv * ns);
  parallel_for(nv * ns, config.workers, [&](std::size_t job) {
    const VariantConfig& variant = config.variants[job / ns];
    const std::uint64_t seed = config.seeds[job % ns];
    const habits::SeqModel* model = model_for(models, variant, seed);
    Rng rng(derive_seed(config.master_seed, kBudgetTag, seed));
    int index = 0;
    for (int b : budgets) {
      auto pc = variant.planner_config();
      pc.budget = b;
      for (const Trial& trial : problems.budget_tests.at(b)) {
        const auto result = planner::plan(root_state(problems, trial), model, pc, rng);
        records[job].push_back(make_record("budget", problems, variant, seed, index++, trial, b, result));
      }
    }
  });
  std::vector<TrialRecord> out;
  for (auto& rs : records) {
    for (auto& r : rs) out.push_back(std::move(r));
  }
  return out;
}

double chance_order_share(const std::vector<taskgen::Solution>& certificate,
                          const taskgen::ChunkSpec& chunk) {
  if (certificate.empty()) return 0.0;
  int keep = 0;
  for (const auto& s : certificate) keep += taskgen::find_chunk(s, chunk) >= 0;
  return static_cast<double>(keep) / static_cast<double>(certificate.size());
}

std::vector<TrialRecord> run_ambiguous_test(const ProblemFile& problems,
                                            const std::vector<StreamModel>& models,
                                            const RunConfig& config, int hard_cap) {
  const std::size_t nv = config.variants.size();
  const std::size_t ns = config.seeds.size();
  std::vector<std::vector<TrialRecord>> records(nv * ns);
  parallel_for(nv * ns, config.workers, [&](std::size_t job) {
    const VariantConfig& variant = config.variants[job / ns];
    const std::uint64_t seed = config.seeds[job % ns];
    const habits::SeqModel* model = model_for(models, variant, seed);
    Rng rng(derive_seed(config.master_seed, kAmbiguousTag, seed));
    auto pc = variant.planner_config();
    pc.flexible = true;
    pc.hard_cap = hard_cap;
    int index = 0;
    for (const Trial& trial : problems.ambiguous) {
      const auto result = planner::plan(root_state(problems, trial), model, pc, rng);
      auto r = make_record("ambiguous", problems, variant, seed, index++, trial, 0, result);
      if (result.solved) r.preserves_order = taskgen::find_chunk(r.plan_placements, problems.chunk) >= 0;
      r.chance_share = chance_order_share(trial.certificate, problems.chunk);
      records[job].push_back(std::move(r));
    }
  });
  std::vector<TrialRecord> out;
  for (auto& rs : records) {
    for (auto& r : rs) out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json j = {{"experiment", r.experiment},
                      {"condition", to_string(r.condition)},
                      {"variant", r.variant},
                      {"seed", r.seed},
                      {"trial", r.trial},
                      {"silhouette_id", r.silhouette_id},
                      {"kind", taskgen::to_string(r.kind)},
                      {"complexity", r.complexity},
                      {"budget", r.budget},
                      {"solved", r.solved},
                      {"hit_cap", r.hit_cap},
                      {"nodes_evaluated", r.nodes_evaluated},
                      {"used_chunk", r.used_chunk},
                      {"chunk_lengths", r.chunk_lengths},
                      {"plan_tokens", planner::tokens_to_json(r.plan_tokens)},
                      {"plan", taskgen::solution_to_json(r.plan_placements)},
                      {"edge_sizes", r.edge_sizes}};
  j["preserves_order"] = r.preserves_order ? nlohmann::json(*r.preserves_order) : nlohmann::json();
  j["chance_share"] = r.chance_share ? nlohmann::json(*r.chance_share) : nlohmann::json();
  j["silhouette"] = r.silhouette ? r.silhouette->to_json() : nlohmann::json();
  return j;
}

TrialRecord record_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.experiment = j.at("experiment").get<std::string>();
  r.condition = condition_from_string(j.at("condition").get<std::string>());
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.trial = j.at("trial").get<int>();
  r.silhouette_id = j.at("silhouette_id").get<std::string>();
  r.kind = taskgen::kind_from_string(j.at("kind").get<std::string>());
  r.complexity = j.at("complexity").get<int>();
  r.budget = j.at("budget").get<int>();
  r.solved = j.at("solved").get<bool>();
  r.hit_cap = j.at("hit_cap").get<bool>();
  r.nodes_evaluated = j.at("nodes_evaluated").get<int>();
  r.used_chunk = j.at("used_chunk").get<bool>();
  r.chunk_lengths = j.at("chunk_lengths").get<std::vector<int>>();
  r.plan_tokens = planner::tokens_from_json(j.at("plan_tokens"));
  r.plan_placements = taskgen::solution_from_json(j.at("plan"));
  r.edge_sizes = j.at("edge_sizes").get<std::vector<int>>();
  if (!j.at("preserves_order").is_null()) r.preserves_order = j["preserves_order"].get<bool>();
  if (!j.at("chance_share").is_null()) r.chance_share = j["chance_share"].get<double>();
  if (!j.at("silhouette").is_null()) r.silhouette = tangram::Silhouette::from_json(j["silhouette"]);
  return r;
}

const std::vector<std::string>& csv_header() {
  static const std::vector<std::string> header{
      "experiment", "condition",     "variant",     "seed",           "trial",
      "silhouette_id", "kind",       "complexity",  "budget",         "solved",
      "hit_cap",    "nodes_evaluated", "used_chunk", "chunk_lengths", "preserves_order",
      "chance_share", "plan_tokens"};
  return header;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

void write_csv(std::ostream& out, const std::vector<TrialRecord>& records) {
  const auto& header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\r\n";
  for (const auto& r : records) {
    std::string lengths;
    for (std::size_t i = 0; i < r.chunk_lengths.size(); ++i) {
      lengths += (i ? ";" : "") + std::to_string(r.chunk_lengths[i]);
    }
    std::ostringstream tokens;
    for (std::size_t i = 0; i < r.plan_tokens.size(); ++i) tokens << (i ? " " : "") << r.plan_tokens[i];
    const std::vector<std::string> fields{
        r.experiment,
        to_string(r.condition),
        r.variant,
        std::to_string(r.seed),
        std::to_string(r.trial),
        r.silhouette_id,
        taskgen::to_string(r.kind),
        std::to_string(r.complexity),
        std::to_string(r.budget),
        r.solved ? "1" : "0",
        r.hit_cap ? "1" : "0",
        std::to_string(r.nodes_evaluated),
        r.used_chunk ? "1" : "0",
        lengths,
        r.preserves_order ? (*r.preserves_order ? "1" : "0") : "",
        r.chance_share ? fmt_double(*r.chance_share) : "",
        tokens.str()};
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_field(fields[i]);
    out << "\r\n";
  }
}

void write_jsonl(std::ostream& out, const std::vector<TrialRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<TrialRecord> read_jsonl(std::istream& in) {
  std::vector<TrialRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError("record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json models_to_json(const std::vector<StreamModel>& models) {
  auto a = nlohmann::json::array();
  for (const auto& m : models) {
    a.push_back({{"variant", m.variant}, {"seed", m.seed}, {"model", m.model.to_json()}});
  }
  return {{"format", "habitree-models"}, {"version", 1}, {"models", a}};
}

std::vector<StreamModel> models_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "habitree-models") throw FormatError("not a model file");
    if (j.at("version") != 1) throw FormatError("model file version " + j.at("version").dump() + " is not supported");
    std::vector<StreamModel> out;
    for (const auto& m : j.at("models")) {
      out.push_back(StreamModel{m.at("variant").get<std::string>(), m.at("seed").get<std::uint64_t>(),
                                habits::SeqModel::from_json(m.at("model"))});
    }
    return out;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad model file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Aggregation

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.count;
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.half_width = 1.96 * std::sqrt(ss / (s.count - 1)) / std::sqrt(static_cast<double>(s.count));
  }
  return s;
}

int complexity_bin(int complexity, int lo, int hi) {
  if (hi <= lo) return 0;
  const int bin = (complexity - lo) * 3 / (hi - lo + 1);
  return std::clamp(bin, 0, 2);
}

std::vector<SummaryRow> aggregate(const std::vector<TrialRecord>& records) {
  // (experiment, condition, variant, bucket, metric) -> seed -> values.
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  std::map<Key, std::map<std::uint64_t, std::vector<double>>> cells;
  std::map<std::string, std::pair<int, int>> ranges;  // condition -> training complexity range
  for (const auto& r : records) {
    if (r.experiment != "training") continue;
    auto [it, fresh] = ranges.try_emplace(to_string(r.condition), r.complexity, r.complexity);
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.complexity);
      it->second.second = std::max(it->second.second, r.complexity);
    }
  }
  for (const auto& r : records) {
    const std::string cond = to_string(r.condition);
    const std::string kind = taskgen::to_string(r.kind);
    auto add = [&](const std::string& bucket, const std::string& metric, double v) {
      cells[Key{r.experiment, cond, r.variant, bucket, metric}][r.seed].push_back(v);
    };
    auto common = [&](const std::string& bucket) {
      add(bucket, "success", r.solved);
      add(bucket, "nodes_evaluated", r.nodes_evaluated);
      if (r.solved && r.kind == Kind::chunky) add(bucket, "chunk_use", r.used_chunk);
    };
    if (r.experiment == "training") {
      char trial[32];
      std::snprintf(trial, sizeof trial, "trial=%02d", r.trial + 1);
      common(trial);
      common("kind=" + kind);
      const auto& range = ranges.at(cond);
      common("complexity_bin=" + std::to_string(complexity_bin(r.complexity, range.first, range.second) + 1) +
             ",kind=" + kind);
    } else if (r.experiment == "budget") {
      common("budget=" + std::to_string(r.budget) + ",kind=" + kind);
    } else {
      common("all");
      if (r.preserves_order) add("all", "order_preserved", *r.preserves_order);
      if (r.chance_share) add("all", "chance_share", *r.chance_share);
      add("all", "hit_cap", r.hit_cap);
    }
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, per_seed] : cells) {
    std::vector<double> means;
    for (const auto& [seed, values] : per_seed) {
      double sum = 0.0;
      for (double v : values) sum += v;
      means.push_back(sum / static_cast<double>(values.size()));
    }
    const Stat s = summarize(means);
    rows.push_back(SummaryRow{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                              std::get<4>(key), s.mean, s.count, s.mean - s.half_width,
                              s.mean + s.half_width});
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "experiment,condition,variant,bucket,metric,mean,count,ci_low,ci_high\r\n";
  for (const auto& r : rows) {
    out << csv_field(r.experiment) << ',' << csv_field(r.condition) << ',' << csv_field(r.variant) << ','
        << csv_field(r.bucket) << ',' << csv_field(r.metric) << ',' << fmt_double(r.mean) << ',' << r.count
        << ',' << fmt_double(r.ci_low) << ',' << fmt_double(r.ci_high) << "\r\n";
  }
}

}  // namespace habitree::harness
