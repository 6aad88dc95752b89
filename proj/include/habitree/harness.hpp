#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "habitree/planner.hpp"
#include "habitree/seq_model.hpp"
#include "habitree/tangram.hpp"
#include "habitree/taskgen.hpp"
#include "json.hpp"

namespace habitree::harness {

enum class Condition { duplet, triplet };

std::string to_string(Condition condition);
Condition condition_from_string(const std::string& s);
taskgen::ChunkSpec default_chunk(Condition condition);

struct VariantConfig {
  std::string name;
  int budget = 50;
  double c = 1.0;
  double h = 0.0;
  double omega = 0.0;
  double alpha = 1.0;
  bool uses_model = false;

  planner::PlannerConfig planner_config() const;
};

// full, open-loop, one-step, vanilla.
std::vector<VariantConfig> table_variants();
// Throws std::invalid_argument for an unknown name.
VariantConfig find_variant(const std::vector<VariantConfig>& variants, const std::string& name);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything the experiments run on, written once by `gen`.
struct ProblemFile {
  static constexpr int kVersion = 1;

  Condition condition = Condition::duplet;
  std::uint64_t generator_seed = 0;
  tangram::Grid grid;
  tangram::Inventory inventory = tangram::Inventory::standard();
  taskgen::ChunkSpec chunk;
  int complexity_cap = 50;
  std::vector<taskgen::Trial> training;
  std::map<int, std::vector<taskgen::Trial>> budget_tests;  // keyed by budget
  std::vector<taskgen::Trial> ambiguous;

  nlohmann::json to_json() const;
  // Checks format, version and every certificate hash. Throws FormatError.
  static ProblemFile from_json(const nlohmann::json& j);
  static ProblemFile load(const std::string& path);
  void save(const std::string& path) const;
};

struct GenConfig {
  Condition condition = Condition::duplet;
  int trials = 19;
  std::vector<int> budgets{12, 8, 5, 1};
  int per_budget_chunky = 2;
  int per_budget_random = 2;
  int ambiguous = 8;
  int complexity_cap = 50;
  int complexity_repeats = 32;
  int max_gap = 5;
  int pool_step = 40;   // pool growth per round while matching fails
  int max_pool = 2000;
  tangram::Grid grid;
  tangram::Inventory inventory = tangram::Inventory::standard();
  std::optional<taskgen::ChunkSpec> chunk;  // defaults per condition
  bool chunk_first = true;                  // see taskgen::GenOptions
  int workers = 1;
};

// 4:3 chunky:random split of a training-set size, rounded to the nearest
// integer on the chunky side.
std::pair<int, int> training_split(int trials);

// Deterministic in (config, seed), independent of config.workers.
ProblemFile generate_problems(const GenConfig& config, std::uint64_t seed);

struct TrialRecord {
  std::string experiment;  // training, budget, ambiguous
  Condition condition = Condition::duplet;
  std::string variant;
  std::uint64_t seed = 0;
  int trial = 0;
  std::string silhouette_id;
  taskgen::Kind kind = taskgen::Kind::random;
  int complexity = 0;
  int budget = 0;  // 0 for the flexible budget
  bool solved = false;
  bool hit_cap = false;
  int nodes_evaluated = 0;
  bool used_chunk = false;
  std::vector<int> chunk_lengths;
  std::vector<ActionToken> plan_tokens;
  std::vector<tangram::Placement> plan_placements;
  std::vector<int> edge_sizes;  // placements per plan edge
  // Kept in the JSON-lines mirror so a plan can be replayed on its own.
  std::optional<tangram::Silhouette> silhouette;
  // Ambiguous test only: whether a solved plan kept the chunk intact (its
  // members consecutive, in order and in arrangement), and the share of
  // certified solutions that do.
  std::optional<bool> preserves_order;
  std::optional<double> chance_share;
};

// Trained sequence model of one (variant, seed) stream.
struct StreamModel {
  std::string variant;
  std::uint64_t seed = 0;
  habits::SeqModel model;
};

struct RunConfig {
  std::vector<VariantConfig> variants = table_variants();
  std::vector<std::uint64_t> seeds;
  std::uint64_t master_seed = 0;
  int workers = 1;
  int max_depth = 3;
};

struct TrainingOutput {
  std::vector<TrialRecord> records;
  std::vector<StreamModel> models;  // one per (variant, seed), variant-major
};

// For each (variant, seed): a fresh model, the training trials in a
// per-seed shuffled order, b from the variant, and observe() after every
// trial for model variants.
TrainingOutput run_training(const ProblemFile& problems, const RunConfig& config);

// Frozen models; `budgets` empty means every budget in the problem file.
std::vector<TrialRecord> run_budget_test(const ProblemFile& problems,
                                         const std::vector<StreamModel>& models,
                                         const RunConfig& config, std::vector<int> budgets = {});

std::vector<TrialRecord> run_ambiguous_test(const ProblemFile& problems,
                                            const std::vector<StreamModel>& models,
                                            const RunConfig& config, int hard_cap = 500);

// Share of certified solutions that keep the chunk intact.
double chance_order_share(const std::vector<taskgen::Solution>& certificate,
                          const taskgen::ChunkSpec& chunk);

nlohmann::json to_json(const TrialRecord& record);
TrialRecord record_from_json(const nlohmann::json& j);

const std::vector<std::string>& csv_header();
void write_csv(std::ostream& out, const std::vector<TrialRecord>& records);
void write_jsonl(std::ostream& out, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_jsonl(std::istream& in);
// RFC 4180 field quoting.
std::string csv_field(const std::string& s);

nlohmann::json models_to_json(const std::vector<StreamModel>& models);
std::vector<StreamModel> models_from_json(const nlohmann::json& j);

struct SummaryRow {
  std::string experiment;
  std::string condition;
  std::string variant;
  std::string bucket;
  std::string metric;
  double mean = 0.0;
  int count = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct Stat {
  double mean = 0.0;
  int count = 0;
  double half_width = 0.0;  // 95% normal approximation
};

Stat summarize(const std::vector<double>& values);

// Means with 95% intervals per (experiment, condition, variant, bucket)
// for success, nodes_evaluated, chunk use and chunk-order preservation.
std::vector<SummaryRow> aggregate(const std::vector<TrialRecord>& records);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

// Three equal-width complexity bins over the recorded training
// complexities of one condition; returns the bin index of `complexity`.
int complexity_bin(int complexity, int lo, int hi);

}  // namespace habitree::harness
