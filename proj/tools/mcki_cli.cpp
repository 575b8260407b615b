// mcki command-line entry point: router training, evaluation, benchmarking
// and report rendering.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mcki/config.hpp"
#include "mcki/harness.hpp"
#include "mcki/pipeline.hpp"
#include "mcki/report.hpp"

namespace {

using namespace mcki;
using json = nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config_file;
  KeyValues overrides;  // in command-line order
};

/// Registers a flag that writes `key` when given.
void key_option(CLI::App* app, Flags& flags, const std::string& name, const std::string& key,
                const std::string& help) {
  app->add_option_function<std::string>(
      name, [&flags, key](const std::string& v) { flags.overrides.emplace_back(key, v); }, help);
}

void common_options(CLI::App* app, Flags& flags) {
  app->add_option("--config", flags.config_file, "Configuration file of key = value lines");
  app->add_option_function<std::vector<std::string>>(
      "--set",
      [&flags](const std::vector<std::string>& items) {
        for (const auto& item : items) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value");
          flags.overrides.emplace_back(item.substr(0, eq), item.substr(eq + 1));
        }
      },
      "Override any configuration key (key=value)");
  key_option(app, flags, "--backend", "backend", "synthetic | remote");
  key_option(app, flags, "--checkpoint", "router.checkpoint", "Router checkpoint path");
  key_option(app, flags, "--seed", "seed", "Router seed");
}

RunConfig resolve(const Flags& flags) {
  RunConfig cfg;
  if (!flags.config_file.empty()) apply_config(cfg, load_config_file(flags.config_file));
  apply_config(cfg, flags.overrides);
  return cfg;
}

CaseSet load_required(const std::filesystem::path& path, const char* key) {
  if (path.empty()) throw UsageError(fmt::format("{} is not set", key));
  if (!std::filesystem::exists(path)) {
    throw UsageError(fmt::format("{} '{}' does not exist", key, path.string()));
  }
  return load_cases(path);
}

std::string require_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) throw UsageError(fmt::format("environment variable {} is not set", name));
  return v;
}

struct BackendBundle {
  std::shared_ptr<Backend> backend;
  std::shared_ptr<const SyntheticWorld> world;
};

/// Synthetic worlds are rebuilt from the checkpoint when it recorded one, so
/// training and evaluation see the same centroids.
BackendBundle make_backend(RunConfig& cfg, const std::vector<const CaseSet*>& sets,
                           const RouterCheckpoint* ckpt) {
  BackendBundle out;
  if (cfg.backend == "remote") {
    RemoteBackendConfig rc;
    rc.url = require_env("BACKEND_URL");
    rc.timeout = std::chrono::milliseconds(cfg.backend_timeout_ms);
    rc.max_retries = cfg.backend_max_retries;
    rc.max_in_flight = cfg.backend_max_in_flight;
    out.backend = std::make_shared<RemoteBackend>(rc);
    return out;
  }
  std::vector<std::string> known;
  if (ckpt && ckpt->extras.contains("synthetic")) {
    cfg.synthetic = world_config_from_json(ckpt->extras.at("synthetic"), known);
  }
  out.world = make_world(cfg.synthetic, known, sets);
  out.backend = std::make_shared<SyntheticBackend>(out.world, sets);
  return out;
}

std::optional<RouterCheckpoint> load_router(RunConfig& cfg) {
  if (cfg.method != "mcki") return std::nullopt;
  if (!std::filesystem::exists(cfg.checkpoint)) {
    throw UsageError(fmt::format("router checkpoint '{}' does not exist (run train-router first)",
                                 cfg.checkpoint.string()));
  }
  auto ckpt = load_checkpoint(cfg.checkpoint);
  cfg.hyper = ckpt.hyper;
  return ckpt;
}

std::unique_ptr<InsertionMethod> make_method(const RunConfig& cfg, MethodContext ctx,
                                             const std::optional<RouterCheckpoint>& ckpt) {
  if (cfg.method == "base") return std::make_unique<BaseMethod>(std::move(ctx));
  if (cfg.method == "ike-lite") return std::make_unique<IkeLiteMethod>(std::move(ctx), cfg.ike);
  const double tau = cfg.tau_override.value_or(ckpt->tau);
  return std::make_unique<MckiMethod>(
      std::move(ctx), std::make_shared<const RouterParams>(ckpt->params), tau, cfg.mcki);
}

std::vector<ScoreKind> score_kinds(const RunConfig& cfg) {
  if (cfg.scorer == "rouge_l") return {ScoreKind::rouge_l};
  if (cfg.scorer == "judge") return {ScoreKind::judge};
  return {ScoreKind::rouge_l, ScoreKind::judge};
}

Scorer make_scorer(const RunConfig& cfg) {
  if (cfg.scorer == "rouge_l") return Scorer{};
  HttpJudgeConfig jc;
  try {
    jc = HttpJudgeConfig::from_environment();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  jc.model = cfg.judge_model;
  jc.max_retries = cfg.judge_max_retries;
  jc.timeout = std::chrono::milliseconds(cfg.judge_timeout_ms);
  jc.max_in_flight = cfg.judge_max_in_flight;
  if (!cfg.judge_prompt_file.empty()) {
    std::ifstream in(cfg.judge_prompt_file);
    if (!in) throw UsageError("cannot read judge prompt '" + cfg.judge_prompt_file.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    jc.prompt_template = ss.str();
  }
  return Scorer(std::make_shared<HttpJudge>(jc));
}

void append_run_values(KeyValues& values, const InsertionMethod& method,
                       const std::optional<RouterCheckpoint>& ckpt, const RunConfig& cfg) {
  values.emplace_back("run.backend_model", method.backend().model_name());
  if (const auto* m = dynamic_cast<const MckiMethod*>(&method)) {
    values.emplace_back("run.tau", fmt::format("{}", m->tau()));
    values.emplace_back("run.tau_calibrated", fmt::format("{}", ckpt->tau));
  }
  if (cfg.scorer != "rouge_l") values.emplace_back("run.judge_prompt", kJudgePromptVersion);
}

void print_summary(const char* label, const std::vector<double>& xs) {
  const auto s = summarize(xs);
  fmt::print("{:<10} n={:<6} mean={:+.4f} min={:+.4f} max={:+.4f}\n", label, s.count, s.mean,
             s.min, s.max);
}

// ---------------------------------------------------------------------------

int cmd_make_fixtures(const std::filesystem::path& dir, int scenarios, int cases,
                      const std::vector<std::string>& splits) {
  std::filesystem::create_directories(dir);
  for (const auto& split : splits) {
    const auto set = make_fixture_cases({scenarios, cases, split});
    const auto path = dir / (split + ".jsonl");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    write_cases(out, set);
    fmt::print("wrote {} cases to {}\n", set.size(), path.string());
  }
  return 0;
}

int cmd_train_router(const Flags& flags) {
  RunConfig cfg = resolve(flags);
  const CaseSet cases = load_required(cfg.train_data, "data.train");
  auto bundle = make_backend(cfg, {&cases}, nullptr);

  auto trained = train_and_calibrate(cases, *bundle.backend, cfg.prompts, cfg.hyper);
  if (bundle.world) trained.checkpoint.extras["synthetic"] = world_to_json(*bundle.world);
  json echo = json::object();
  for (const auto& [k, v] : echo_config(cfg)) echo[k] = v;
  trained.checkpoint.extras["config"] = echo;

  if (cfg.checkpoint.has_parent_path()) std::filesystem::create_directories(cfg.checkpoint.parent_path());
  save_checkpoint(cfg.checkpoint, trained.checkpoint);

  const auto& t = trained.training;
  fmt::print("router trained: {} steps, mean loss {:.6f} -> {:.6f}\n", t.step_losses.size(),
             t.initial_mean_loss, t.final_mean_loss);
  print_summary("positives", t.scores.positives);
  print_summary("negatives", t.scores.negatives);
  fmt::print("tau {:.6f}, calibration accuracy {:.4f} ({} / {})\n", trained.calibration.tau,
             trained.calibration.accuracy(), trained.calibration.correct,
             trained.calibration.total);
  fmt::print("checkpoint written to {}\n", cfg.checkpoint.string());
  return 0;
}

int cmd_eval(const Flags& flags) {
  RunConfig cfg = resolve(flags);
  const CaseSet cases = load_required(cfg.eval_data, "data.eval");
  const auto kinds = score_kinds(cfg);
  const Scorer scorer = make_scorer(cfg);
  auto ckpt = load_router(cfg);
  auto bundle = make_backend(cfg, {&cases}, ckpt ? &*ckpt : nullptr);

  MethodContext ctx{bundle.backend, cfg.prompts};
  auto method = make_method(cfg, ctx, ckpt);
  const HarnessOptions options{kinds, cfg.workers, cfg.accumulate_memory};

  KeyValues values;
  std::string retention;
  bool failed = false;
  auto check = [&](std::size_t scored, std::size_t total) {
    if (total > 0 && scored == 0) failed = true;
  };
  if (cfg.mode == "single") {
    const auto units = derive_single_cases(cases);
    const auto report = eval_single(units, *method, scorer, options);
    for (const auto& [k, agg] : report.by_kind) check(agg.cases_scored, units.size());
    values = report_values(report, echo_config(cfg));
  } else {
    const auto chains = derive_sequential_chains(cases, cfg.order);
    const auto report = eval_sequential(chains, *method, scorer, cfg.retention, options);
    for (const auto& [k, agg] : report.by_kind) check(agg.chains_scored, chains.size());
    values = report_values(report, echo_config(cfg));
    retention = retention_rows(report);
  }
  append_run_values(values, *method, ckpt, cfg);

  const auto files = emit_report(values, retention, cfg.output_dir, cfg.run_id);
  std::cout << render_table(values);
  fmt::print("\nreport: {}\ntable: {}\n", files.report.string(), files.table.string());
  if (!files.retention.empty()) fmt::print("retention: {}\n", files.retention.string());
  if (failed) {
    spdlog::error("every evaluation unit was dropped for at least one score kind");
    return kExitFailure;
  }
  return 0;
}

int cmd_bench(const Flags& flags, std::optional<std::size_t> n) {
  RunConfig cfg = resolve(flags);
  if (n) {
    cfg.bench_n_train = *n;
    cfg.bench_n_eval = *n;
  }
  if (cfg.bench_n_eval == 0) throw UsageError("bench needs at least one evaluation case (--n >= 1)");
  const CaseSet eval_cases = load_required(cfg.eval_data, "data.eval");
  std::optional<CaseSet> train_cases;
  if (!cfg.train_data.empty()) train_cases = load_required(cfg.train_data, "data.train");

  auto ckpt = load_router(cfg);
  std::vector<const CaseSet*> sets{&eval_cases};
  if (train_cases) sets.push_back(&*train_cases);
  auto bundle = make_backend(cfg, sets, ckpt ? &*ckpt : nullptr);
  MethodContext ctx{bundle.backend, cfg.prompts};
  auto method = make_method(cfg, ctx, ckpt);

  auto units = derive_single_cases(eval_cases);
  std::shuffle(units.begin(), units.end(), std::mt19937_64(hash_key(cfg.hyper.seed, {"bench"})));

  EfficiencyOptions opts;
  opts.n_eval = cfg.bench_n_eval;
  opts.hyper = cfg.hyper;
  std::vector<TrainingBatch> batches;
  if (method->router()) {
    batches = build_training_batches(train_cases ? *train_cases : eval_cases, *bundle.backend,
                                     cfg.prompts, cfg.hyper);
    opts.n_train = std::min(cfg.bench_n_train, batches.size());
    opts.train_batches = batches;
  } else {
    opts.n_train = 0;
  }
  const auto report = measure_efficiency(*method, units, opts);
  auto values = report_values(report, echo_config(cfg));
  append_run_values(values, *method, ckpt, cfg);
  const auto files = emit_report(values, {}, cfg.output_dir, cfg.run_id);
  std::cout << render_table(values);
  fmt::print("\nreport: {}\n", files.report.string());
  return 0;
}

int cmd_report(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw UsageError(fmt::format("report '{}' does not exist", path.string()));
  }
  std::cout << render_table(read_report(path));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("mcki"));

  CLI::App app{"Memory-conditioned knowledge insertion: router training and evaluation"};
  app.require_subcommand(1);

  Flags train_flags, eval_flags, bench_flags;

  auto* train = app.add_subcommand("train-router", "Train the router and calibrate its threshold");
  common_options(train, train_flags);
  key_option(train, train_flags, "--train", "data.train", "Training case file");
  key_option(train, train_flags, "--epochs", "router.epochs", "Training epochs");
  key_option(train, train_flags, "--d-route", "router.d_route", "Route vector dimension");
  key_option(train, train_flags, "--lr", "router.learning_rate", "Adam learning rate");

  auto* eval = app.add_subcommand("eval", "Evaluate a method on a case file");
  common_options(eval, eval_flags);
  key_option(eval, eval_flags, "--data", "data.eval", "Evaluation case file");
  key_option(eval, eval_flags, "--mode", "mode", "single | sequential");
  key_option(eval, eval_flags, "--order", "order", "Sequential partition order (default en,zh,ar)");
  key_option(eval, eval_flags, "--method", "method", "mcki | base | ike-lite");
  key_option(eval, eval_flags, "--scorer", "scorer", "rouge_l | judge | both");
  key_option(eval, eval_flags, "--out", "output.dir", "Report directory");
  key_option(eval, eval_flags, "--run-id", "run_id", "Report file stem");
  key_option(eval, eval_flags, "--workers", "workers", "Evaluation workers");
  key_option(eval, eval_flags, "--tau", "router.tau_override", "Threshold override");
  eval->add_flag_callback(
      "--retention", [&] { eval_flags.overrides.emplace_back("retention", "true"); },
      "Measure the retention grid in sequential mode");

  std::optional<std::size_t> bench_n;
  auto* bench = app.add_subcommand("bench", "Measure train, insert and request timings");
  common_options(bench, bench_flags);
  key_option(bench, bench_flags, "--data", "data.eval", "Evaluation case file");
  key_option(bench, bench_flags, "--train", "data.train", "Training case file (router timing)");
  key_option(bench, bench_flags, "--method", "method", "mcki | base | ike-lite");
  key_option(bench, bench_flags, "--out", "output.dir", "Report directory");
  key_option(bench, bench_flags, "--run-id", "run_id", "Report file stem");
  bench->add_option("--n", bench_n, "Cases timed for training and evaluation (default 100)");

  std::filesystem::path report_path;
  auto* report = app.add_subcommand("report", "Render a saved report");
  report->add_option("--render", report_path, "Report file (.report)")->required();

  std::filesystem::path fixture_dir = "fixtures";
  int fixture_scenarios = 20, fixture_cases = 10;
  std::vector<std::string> fixture_splits{"train", "test"};
  auto* fixtures = app.add_subcommand("make-fixtures", "Write synthetic case files");
  fixtures->add_option("--out", fixture_dir, "Output directory");
  fixtures->add_option("--scenarios", fixture_scenarios, "Scenarios per split")
      ->check(CLI::Range(2, 100000));
  fixtures->add_option("--cases", fixture_cases, "Cases per scenario")->check(CLI::Range(2, 100000));
  fixtures->add_option("--splits", fixture_splits, "Split names")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train_router(train_flags);
    if (*eval) return cmd_eval(eval_flags);
    if (*bench) return cmd_bench(bench_flags, bench_n);
    if (*report) return cmd_report(report_path);
    if (*fixtures) {
      return cmd_make_fixtures(fixture_dir, fixture_scenarios, fixture_cases, fixture_splits);
    }
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const CaseFileError& e) {
    spdlog::error("case file: {}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
