#include "habitree/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "habitree/harness.hpp"

namespace habitree {

namespace fs = std::filesystem;
using harness::Condition;
using harness::ProblemFile;
using harness::TrialRecord;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config;
  std::string condition = "duplet";
  int trials = 19;
  std::string seeds;
  int budget = 50;
  double c = 1.0;
  double h = 5.0;
  double omega = 1.5;
  double alpha = 1.0;
  std::string grid = "10x6";
  std::string shapes;
  std::string in;
  std::string out;
  int workers = 1;
  std::uint64_t master_seed = 0;

  std::set<std::string> given;  // flags set on the command line or in the config file
  bool has(const std::string& name) const { return given.count(name) > 0; }
};

// "N" -> 0..N-1; "a-b" -> a..b; "a,b,c" -> the list.
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  try {
    if (s.find(',') != std::string::npos) {
      std::stringstream in(s);
      std::string part;
      while (std::getline(in, part, ',')) {
        if (!part.empty()) out.push_back(std::stoull(part));
      }
    } else if (const auto dash = s.find('-'); dash != std::string::npos) {
      const auto a = std::stoull(s.substr(0, dash));
      const auto b = std::stoull(s.substr(dash + 1));
      if (b < a) throw UsageError("empty seed range " + s);
      for (auto i = a; i <= b; ++i) out.push_back(i);
    } else {
      const auto n = std::stoull(s);
      for (std::uint64_t i = 0; i < n; ++i) out.push_back(i);
    }
  } catch (const std::logic_error&) {
    throw UsageError("--seeds expects N, a-b or a,b,c; got '" + s + "'");
  }
  if (out.empty()) throw UsageError("--seeds selects no seeds");
  return out;
}

// For the record filters of replay and model-dump a plain integer names one
// seed rather than a count.
std::vector<std::uint64_t> parse_seed_filter(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) {
    return {std::stoull(s)};
  }
  return parse_seeds(s);
}

tangram::Grid parse_grid(const std::string& s) {
  int w = 0;
  int h = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> w >> x >> h) || (x != 'x' && x != 'X') || !in.eof()) {
    throw UsageError("--grid expects WxH, e.g. 10x6; got '" + s + "'");
  }
  tangram::Grid g{w, h};
  try {
    tangram::validate(g);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--grid: ") + e.what());
  }
  return g;
}

void validate(const Options& o) {
  if (o.trials < 2) throw UsageError("--trials must be >= 2");
  if (o.budget < 1) throw UsageError("--budget must be >= 1");
  if (!(o.c >= 0)) throw UsageError("--c must be >= 0");
  if (!(o.h >= 0)) throw UsageError("--h must be >= 0");
  if (!(o.omega >= 0)) throw UsageError("--omega must be >= 0");
  if (!(o.alpha > 0)) throw UsageError("--alpha must be > 0");
  if (o.workers < 1) throw UsageError("--workers must be >= 1");
}

tangram::Inventory inventory(const Options& o) {
  return o.shapes.empty() ? tangram::Inventory::standard() : tangram::Inventory::load(o.shapes);
}

std::vector<harness::VariantConfig> variants(const Options& o) {
  auto vs = harness::table_variants();
  for (auto& v : vs) {
    if (o.has("budget")) v.budget = o.budget;
    if (o.has("c")) v.c = o.c;
    if (o.has("alpha")) v.alpha = o.alpha;
    if (o.has("h") && v.h > 0) v.h = o.h;
    if (o.has("omega") && v.omega > 0) v.omega = o.omega;
  }
  return vs;
}

harness::RunConfig run_config(const Options& o, std::vector<std::uint64_t> default_seeds) {
  harness::RunConfig rc;
  rc.variants = variants(o);
  rc.seeds = o.has("seeds") ? parse_seeds(o.seeds) : std::move(default_seeds);
  rc.master_seed = o.master_seed;
  rc.workers = o.workers;
  return rc;
}

std::string need(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(command + " needs " + flag);
  return value;
}

void write_records(const fs::path& dir, const std::string& stem, const std::vector<TrialRecord>& records) {
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / (stem + ".csv"), std::ios::binary);
    harness::write_csv(csv, records);
  }
  {
    std::ofstream jsonl(dir / (stem + ".jsonl"), std::ios::binary);
    harness::write_jsonl(jsonl, records);
  }
  std::ofstream summary(dir / ("summary_" + stem + ".csv"), std::ios::binary);
  harness::write_summary_csv(summary, harness::aggregate(records));
}

// Run directory written by `train`, or a path inside it.
fs::path run_dir(const std::string& in) {
  fs::path p(in);
  return fs::is_directory(p) ? p : p.parent_path();
}

std::vector<harness::StreamModel> load_models(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw harness::FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw harness::FormatError(path.string() + ": " + e.what());
  }
  return harness::models_from_json(j);
}

std::vector<std::uint64_t> model_seeds(const std::vector<harness::StreamModel>& models) {
  std::set<std::uint64_t> seeds;
  for (const auto& m : models) seeds.insert(m.seed);
  return {seeds.begin(), seeds.end()};
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%5.1f%%", 100.0 * v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen(const Options& o, std::ostream& out) {
  harness::GenConfig gc;
  gc.condition = harness::condition_from_string(o.condition);
  gc.trials = o.trials;
  gc.grid = parse_grid(o.grid);
  gc.inventory = inventory(o);
  gc.workers = o.workers;
  const std::string path = need(o.out, "--out", "gen");
  const ProblemFile f = harness::generate_problems(gc, o.master_seed);
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  f.save(path);
  int chunky = 0;
  int lo = f.complexity_cap;
  int hi = 0;
  for (const auto& t : f.training) {
    chunky += t.kind == taskgen::Kind::chunky;
    lo = std::min(lo, t.complexity);
    hi = std::max(hi, t.complexity);
  }
  std::size_t tests = 0;
  for (const auto& [b, ts] : f.budget_tests) tests += ts.size();
  out << "wrote " << path << ": " << harness::to_string(f.condition) << ", " << chunky << " chunky + "
      << f.training.size() - static_cast<std::size_t>(chunky) << " random training trials (complexity " << lo
      << ".." << hi << "), " << tests << " budget-test and " << f.ambiguous.size()
      << " ambiguous silhouettes\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const std::string in = need(o.in, "--in", "train");
  const fs::path dir = need(o.out, "--out", "train");
  const ProblemFile f = ProblemFile::load(in);
  std::vector<std::uint64_t> def;
  for (std::uint64_t s = 0; s < 32; ++s) def.push_back(s);
  const auto rc = run_config(o, def);
  const auto result = harness::run_training(f, rc);
  fs::create_directories(dir);
  const fs::path copy = dir / "problems.json";
  if (!fs::exists(copy) || !fs::equivalent(copy, in)) {
    fs::copy_file(in, copy, fs::copy_options::overwrite_existing);
  }
  write_records(dir, "training", result.records);
  {
    std::ofstream models(dir / "models.json", std::ios::binary);
    models << harness::models_to_json(result.models).dump() << '\n';
  }
  out << "training, " << harness::to_string(f.condition) << ", " << rc.seeds.size() << " seeds x "
      << f.training.size() << " trials\n";
  out << "variant      solved  mean nodes  chunk use (solved chunky)\n";
  for (const auto& v : rc.variants) {
    double solved = 0;
    double nodes = 0;
    double chunk = 0;
    int n = 0;
    int nc = 0;
    for (const auto& r : result.records) {
      if (r.variant != v.name) continue;
      ++n;
      solved += r.solved;
      nodes += r.nodes_evaluated;
      if (r.solved && r.kind == taskgen::Kind::chunky) {
        ++nc;
        chunk += r.used_chunk;
      }
    }
    char line[128];
    std::snprintf(line, sizeof line, "%-11s %s  %10.2f  %s\n", v.name.c_str(), pct(solved / std::max(1, n)).c_str(),
                  nodes / std::max(1, n), nc ? pct(chunk / nc).c_str() : "    -");
    out << line;
  }
  out << "wrote " << dir.string() << "/{problems.json,models.json,training.csv,training.jsonl,summary_training.csv}\n";
  return 0;
}

int cmd_test_budget(const Options& o, std::ostream& out) {
  const fs::path dir = run_dir(need(o.in, "--in", "test-budget"));
  const fs::path out_dir = need(o.out, "--out", "test-budget");
  const ProblemFile f = ProblemFile::load((dir / "problems.json").string());
  const auto models = load_models(dir / "models.json");
  const auto rc = run_config(o, model_seeds(models));
  std::vector<int> budgets;
  if (o.has("budget")) budgets.push_back(o.budget);
  const auto records = harness::run_budget_test(f, models, rc, budgets);
  write_records(out_dir, "budget", records);
  std::map<std::tuple<int, std::string, std::string>, std::pair<double, int>> cells;
  for (const auto& r : records) {
    auto& c = cells[{-r.budget, taskgen::to_string(r.kind), r.variant}];
    c.first += r.solved;
    c.second += 1;
  }
  out << "budget test, " << harness::to_string(f.condition) << ", " << rc.seeds.size() << " seeds\n";
  out << "budget  kind     ";
  for (const auto& v : rc.variants) {
    char h[32];
    std::snprintf(h, sizeof h, "%10s", v.name.c_str());
    out << h;
  }
  out << '\n';
  std::set<std::pair<int, std::string>> rows;
  for (const auto& [k, v] : cells) rows.insert({std::get<0>(k), std::get<1>(k)});
  for (const auto& [nb, kind] : rows) {
    char h[32];
    std::snprintf(h, sizeof h, "%6d  %-8s", -nb, kind.c_str());
    out << h;
    for (const auto& v : rc.variants) {
      const auto& c = cells[{nb, kind, v.name}];
      out << "    " << pct(c.second ? c.first / c.second : 0.0);
    }
    out << '\n';
  }
  out << "wrote " << out_dir.string() << "/{budget.csv,budget.jsonl,summary_budget.csv}\n";
  return 0;
}

int cmd_test_ambiguous(const Options& o, std::ostream& out) {
  const fs::path dir = run_dir(need(o.in, "--in", "test-ambiguous"));
  const fs::path out_dir = need(o.out, "--out", "test-ambiguous");
  const ProblemFile f = ProblemFile::load((dir / "problems.json").string());
  const auto models = load_models(dir / "models.json");
  const auto rc = run_config(o, model_seeds(models));
  const auto records = harness::run_ambiguous_test(f, models, rc);
  write_records(out_dir, "ambiguous", records);
  out << "ambiguous test, " << harness::to_string(f.condition) << ", flexible budget (cap 500), "
      << rc.seeds.size() << " seeds\n";
  out << "variant     mean nodes  solved  chunk kept  chance\n";
  for (const auto& v : rc.variants) {
    double nodes = 0;
    double solved = 0;
    double kept = 0;
    double chance = 0;
    int n = 0;
    int nk = 0;
    for (const auto& r : records) {
      if (r.variant != v.name) continue;
      ++n;
      nodes += r.nodes_evaluated;
      solved += r.solved;
      chance += r.chance_share.value_or(0.0);
      if (r.preserves_order) {
        ++nk;
        kept += *r.preserves_order;
      }
    }
    char line[160];
    std::snprintf(line, sizeof line, "%-11s %10.2f  %s      %s  %s\n", v.name.c_str(), nodes / std::max(1, n),
                  pct(solved / std::max(1, n)).c_str(), pct(nk ? kept / nk : 0.0).c_str(),
                  pct(chance / std::max(1, n)).c_str());
    out << line;
  }
  out << "wrote " << out_dir.string() << "/{ambiguous.csv,ambiguous.jsonl,summary_ambiguous.csv}\n";
  return 0;
}

int cmd_replay(const Options& o, std::ostream& out) {
  const std::string in = need(o.in, "--in", "replay");
  std::ifstream file(in);
  if (!file) throw harness::FormatError("cannot open " + in);
  const auto records = harness::read_jsonl(file);
  std::optional<std::uint64_t> seed;
  if (o.has("seeds")) seed = parse_seed_filter(o.seeds).front();
  std::optional<int> trial;
  if (o.has("trials")) trial = o.trials;
  const auto inv = inventory(o);
  int shown = 0;
  for (const auto& r : records) {
    if (seed && r.seed != *seed) continue;
    if (trial && r.trial != *trial) continue;
    if (!seed && !trial && shown > 0) break;
    if (!r.silhouette) throw harness::FormatError("record has no silhouette to replay on");
    ++shown;
    out << r.experiment << " " << harness::to_string(r.condition) << " " << r.variant << " seed " << r.seed
        << " trial " << r.trial << " " << r.silhouette_id << " (" << taskgen::to_string(r.kind)
        << ", complexity " << r.complexity << "): " << (r.solved ? "solved" : "unsolved") << " with "
        << r.nodes_evaluated << " nodes, " << r.edge_sizes.size() << " steps\n";
    tangram::BoardState state(tangram::Problem::create(*r.silhouette, inv));
    out << tangram::render(state);
    std::size_t at = 0;
    for (std::size_t step = 0; step < r.edge_sizes.size(); ++step) {
      const int k = r.edge_sizes[step];
      out << "step " << step + 1 << (k > 1 ? " [chunk of " + std::to_string(k) + "]" : "") << ":";
      for (int i = 0; i < k; ++i, ++at) {
        out << " " << r.plan_tokens.at(at);
        state = tangram::apply(state, r.plan_placements.at(at));
      }
      out << '\n' << tangram::render(state);
    }
  }
  if (shown == 0) throw UsageError("no record matches the --seeds / --trials filter");
  return 0;
}

int cmd_model_dump(const Options& o, std::ostream& out) {
  const std::string in = need(o.in, "--in", "model-dump");
  const fs::path path = fs::is_directory(in) ? fs::path(in) / "models.json" : fs::path(in);
  const auto models = load_models(path);
  if (models.empty()) return 0;
  const auto seeds = o.has("seeds") ? parse_seed_filter(o.seeds) : std::vector<std::uint64_t>{models.front().seed};
  constexpr std::size_t kTop = 5;
  for (const auto& m : models) {
    if (std::find(seeds.begin(), seeds.end(), m.seed) == seeds.end()) continue;
    out << "== " << m.variant << " seed " << m.seed << ": " << m.model.restaurants().size() << " contexts\n";
    for (const auto& [key, rest] : m.model.restaurants()) {
      if (rest.customers == 0) continue;
      habits::Context ctx;
      for (int i : key) ctx.push_back(m.model.vocab().token(i));
      const auto dist = m.model.predict(ctx);
      auto entries = dist.entries;
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      out << "[";
      for (std::size_t i = 0; i < ctx.size(); ++i) out << (i ? " " : "") << ctx[i];
      char head[96];
      std::snprintf(head, sizeof head, "] n=%d H=%.3f:", rest.customers, dist.entropy);
      out << head;
      for (std::size_t i = 0; i < std::min(kTop, entries.size()); ++i) {
        char p[32];
        std::snprintf(p, sizeof p, "=%.3f", entries[i].second);
        out << " " << m.model.vocab().token(entries[i].first) << p;
      }
      out << '\n';
    }
  }
  return 0;
}

void apply_config_file(CLI::App& app, Options& o) {
  std::ifstream in(o.config);
  if (!in) throw UsageError("cannot open config file " + o.config);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const std::exception& e) {
    throw UsageError(o.config + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "default")) {
      throw UsageError(o.config + ": sections are not supported (" + item.fullname() + ")");
    }
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + item.name);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError(o.config + ": unknown key '" + item.name + "'");
    }
    if (opt->count() > 0) continue;  // the command line wins
    if (item.inputs.size() != 1) throw UsageError(o.config + ": key '" + item.name + "' needs one value");
    opt->add_result(item.inputs.front());
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError(o.config + ": " + item.name + ": " + e.what());
    }
    o.given.insert(item.name);
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  o.workers = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  CLI::App app{"Monte-Carlo tree search with learned action habits on the Sticky Tangram task", "habitree"};
  app.set_help_flag("--help", "print this help");  // -h would clash with --h
  app.add_option("command", o.command, "gen | train | test-budget | test-ambiguous | replay | model-dump")
      ->required()
      ->check(CLI::IsMember({"gen", "train", "test-budget", "test-ambiguous", "replay", "model-dump"}));
  app.add_option("config", o.config, "optional key = value file; flags override it");
  const std::vector<std::pair<std::string, CLI::Option*>> flags{
      {"condition", app.add_option("--condition", o.condition, "duplet or triplet")
                        ->check(CLI::IsMember({"duplet", "triplet"}))},
      {"trials", app.add_option("--trials", o.trials, "gen: training-set size; replay: trial index")},
      {"seeds", app.add_option("--seeds", o.seeds, "N (0..N-1), a-b or a,b,c")},
      {"budget", app.add_option("--budget", o.budget, "node budget b (train); single test budget (test-budget)")},
      {"c", app.add_option("--c", o.c, "exploration coefficient")},
      {"h", app.add_option("--h", o.h, "habit weight of the habit variants")},
      {"omega", app.add_option("--omega", o.omega, "open-loop entropy threshold (nats)")},
      {"alpha", app.add_option("--alpha", o.alpha, "HDP concentration")},
      {"grid", app.add_option("--grid", o.grid, "grid size WxH")},
      {"shapes", app.add_option("--shapes", o.shapes, "block inventory JSON file")},
      {"in", app.add_option("--in", o.in, "input file or run directory")},
      {"out", app.add_option("--out", o.out, "output file or directory")},
      {"workers", app.add_option("--workers", o.workers, "parallel (variant, seed) streams")},
      {"master-seed", app.add_option("--master-seed", o.master_seed, "seed of all randomness")},
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help comes through here too, with code 0.
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  try {
    for (const auto& [name, opt] : flags) {
      if (opt->count() > 0) o.given.insert(name);
    }
    if (!o.config.empty()) apply_config_file(app, o);
    validate(o);
    if (o.command == "gen") return cmd_gen(o, out);
    if (o.command == "train") return cmd_train(o, out);
    if (o.command == "test-budget") return cmd_test_budget(o, out);
    if (o.command == "test-ambiguous") return cmd_test_ambiguous(o, out);
    if (o.command == "replay") return cmd_replay(o, out);
    return cmd_model_dump(o, out);
  } catch (const UsageError& e) {
    err << "habitree: " << e.what() << '\n';
    return 2;
  } catch (const harness::FormatError& e) {
    err << "habitree: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "habitree: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace habitree
