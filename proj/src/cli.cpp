#include "sizecast/cli.hpp"

#include "sizecast/baseline.hpp"
#include "sizecast/domain.hpp"
#include "sizecast/error.hpp"
#include "sizecast/eval.hpp"
#include "sizecast/hbayes.hpp"
#include "sizecast/predict.hpp"
#include "sizecast/synthgen.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>
#include <tbb/global_control.h>
#include <tbb/task_arena.h>
#include <tbb/info.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

namespace sizecast::cli {

namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::string orders_path;
  std::string catalog_path;
  std::string size_config_path;
  std::string model_path;
  std::string out_path;
  std::string kind;
  std::uint64_t seed = 0;
  int threads = 0;

  // training
  double h_min = 0.5;
  int max_sweeps = 200;
  double tol = 1e-4;
  double mu0 = 42.0;
  double sigma0 = 3.0;
  double alpha_dp = 0.5;
  int truncation = 4;

  // evaluation
  int folds = 3;
  int gap_days = 21;
  int val_days = 28;
  bool exclude_unknown = false;

  // recommendation
  std::string customer_id;
  std::string article_id;
  double tau_joint = 0.0;
  double tau_param = 0.0;
  double eval_tau_param = 0.9;

  // simulation
  std::size_t sim_customers = 200;
  std::size_t sim_articles = 50;
  std::size_t sim_orders = 20'000;
};

std::ifstream open_input(const std::string& path, std::string_view what) {
  if (path.empty()) throw DataError(fmt::format("missing {} path", what));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {} file '{}'", what, path));
  return in;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  out << content;
  out.flush();
  if (!out) throw DataError(fmt::format("failed writing '{}'", path.string()));
}

SizeSystemConfig load_size_config(const RunConfig& run) {
  if (run.size_config_path.empty()) return {};
  auto in = open_input(run.size_config_path, "size config");
  return SizeSystemConfig::parse(in);
}

Catalog load_catalog(const RunConfig& run, const SizeSystemConfig& config) {
  auto in = open_input(run.catalog_path, "catalog");
  auto catalog = parse_catalog(in, config);
  for (const auto& msg : catalog.rejected()) spdlog::warn("{}", msg);
  return catalog;
}

OrdersDataset load_orders(const RunConfig& run, const SizeSystemConfig& config, const Catalog& catalog) {
  auto in = open_input(run.orders_path, "orders");
  auto ds = parse_orders(in, config, catalog);
  const auto& s = ds.stats;
  spdlog::info("orders: {} rows, {} accepted, {} other returns, {} malformed, {} unknown article", s.total_rows,
               s.accepted, s.other_returns, s.malformed, s.unknown_article);
  for (const auto& e : ds.errors) spdlog::debug("orders line {}: {}", e.line, e.message);
  return ds;
}

Hyperparams hyperparams(const RunConfig& run) {
  auto h = Hyperparams::defaults();
  if (!(run.sigma0 > 0.0)) throw DataError("--sigma0 must be positive");
  h.default_size_prior = {run.mu0, run.sigma0 * run.sigma0};
  h.dp_concentration = run.alpha_dp;
  h.truncation = run.truncation;
  h.validate();
  return h;
}

FitOptions fit_options(const RunConfig& run) {
  FitOptions f;
  f.seed = run.seed;
  f.max_sweeps = run.max_sweeps;
  f.tol = run.tol;
  return f;
}

int cmd_train(const RunConfig& run) {
  if (run.kind != "baseline" && run.kind != "hbayes") throw DataError("--kind must be baseline or hbayes");
  const auto hyper = hyperparams(run);
  const auto config = load_size_config(run);
  const auto catalog = load_catalog(run, config);
  const auto dataset = load_orders(run, config, catalog);
  nlohmann::json doc;
  if (run.kind == "baseline") {
    BaselineOptions options;
    options.h_min = run.h_min;
    const auto model = fit_baseline(dataset, options);
    spdlog::info("baseline: {} customers, {} articles", model.customers.size(), model.articles.size());
    doc = to_json(model);
  } else {
    auto options = fit_options(run);
    options.on_sweep = [](int sweep, double value) { spdlog::info("sweep {} elbo {}", sweep, format_double(value)); };
    const auto state = fit_hbayes(dataset, catalog, hyper, options);
    spdlog::info("hbayes: {} sweeps, w={} w'={} eta_S={} eta_B={}", state.elbo_trace.size(),
                 format_double(state.global.w), format_double(state.global.w_prime),
                 format_double(state.global.eta_small.mean), format_double(state.global.eta_big.mean));
    doc = to_json(state);
  }
  write_file(run.out_path, doc.dump(1) + "\n");
  spdlog::info("model written to {}", run.out_path);
  return kExitOk;
}

int cmd_evaluate(const RunConfig& run) {
  const auto hyper = hyperparams(run);
  const auto config = load_size_config(run);
  const auto catalog = load_catalog(run, config);
  const auto dataset = load_orders(run, config, catalog);
  EvalOptions options;
  options.n_folds = run.folds;
  options.gap_days = run.gap_days;
  options.val_days = run.val_days;
  options.tau_param = run.eval_tau_param;
  options.curves_include_unknown = !run.exclude_unknown;
  options.baseline.h_min = run.h_min;
  options.hyper = hyper;
  options.fit = fit_options(run);
  const auto report = run_evaluation(dataset, catalog, options);
  emit_report(report, run.out_path);
  for (const auto model : {ModelKind::Baseline, ModelKind::HBayes}) {
    for (const bool include : {true, false}) {
      if (const auto agg = report.aggregate(model, include)) {
        spdlog::info("{} {} unknown customers: avg log joint {:.4f} +- {:.4f}", to_string(model),
                     include ? "incl." : "excl.", agg->mean, agg->std);
      }
    }
  }
  spdlog::info("report written to {}", run.out_path);
  return kExitOk;
}

int cmd_recommend(const RunConfig& run, std::ostream& out) {
  if (run.tau_joint < 0.0 || run.tau_joint > 1.0 || run.tau_param < 0.0 || run.tau_param > 1.0) {
    throw DataError("thresholds must lie in [0, 1]");
  }
  const auto config = load_size_config(run);
  const auto catalog = load_catalog(run, config);
  if (!catalog.contains(run.article_id)) {
    throw DataError(fmt::format("article '{}' is not in the catalog", run.article_id));
  }
  auto in = open_input(run.model_path, "model");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("model file '{}' is not valid JSON: {}", run.model_path, e.what()));
  }
  const auto kind = doc.value("kind", std::string{});
  Recommendation rec;
  try {
    JointTable table;
    if (kind == "baseline") {
      table = baseline_table(baseline_from_json(doc), catalog, run.customer_id, run.article_id);
    } else if (kind == "hbayes") {
      table = hbayes_table(hbayes_from_json(doc), catalog, run.customer_id, run.article_id);
    } else {
      throw DataError(fmt::format("model file '{}' has unknown kind '{}'", run.model_path, kind));
    }
    rec = recommend(table, run.tau_joint, run.tau_param);
  } catch (const DegenerateSupportError& e) {
    spdlog::warn("{}; abstaining", e.what());
    rec = abstention(run.tau_joint, run.tau_param, std::nullopt);
  }
  out << recommendation_json(rec, run.customer_id, run.article_id).dump() << '\n';
  return kExitOk;
}

int cmd_simulate(const RunConfig& run) {
  SynthConfig cfg;
  cfg.n_customers = run.sim_customers;
  cfg.n_articles = run.sim_articles;
  cfg.n_orders = run.sim_orders;
  cfg.seed = run.seed;
  cfg.hyper = hyperparams(run);
  const auto data = sample_dataset(cfg);
  const fs::path dir = run.out_path;
  std::ostringstream orders, catalog;
  write_orders_csv(orders, data.dataset.orders);
  write_catalog_csv(catalog, data.catalog);
  write_file(dir / "orders.csv", orders.str());
  write_file(dir / "catalog.csv", catalog.str());
  write_file(dir / "truth.json", to_json(data.truth).dump(1) + "\n");
  spdlog::info("wrote {} orders, {} articles, {} customers to {}", data.dataset.size(), data.catalog.size(),
               data.truth.customers.size(), dir.string());
  return kExitOk;
}

// Routes the default logger to `err` for the lifetime of the guard.
class LoggingScope {
 public:
  explicit LoggingScope(std::ostream& err) : previous_(spdlog::default_logger()) { setup_logging(err); }
  ~LoggingScope() {
    spdlog::default_logger()->flush();
    spdlog::set_default_logger(previous_);
  }
  LoggingScope(const LoggingScope&) = delete;
  LoggingScope& operator=(const LoggingScope&) = delete;

 private:
  static void setup_logging(std::ostream& err);
  std::shared_ptr<spdlog::logger> previous_;
};

void LoggingScope::setup_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("sizecast", sink);
  logger->set_pattern("[%l] %v");
  auto level = spdlog::level::info;
  if (const char* env = std::getenv("SIZECAST_LOG")) level = spdlog::level::from_str(env);
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

void add_common(CLI::App* cmd, RunConfig& run) {
  cmd->add_option("--threads", run.threads, "Worker thread cap (0 = available parallelism)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

void add_training(CLI::App* cmd, RunConfig& run) {
  cmd->add_option("--seed", run.seed, "Random seed")->capture_default_str();
  cmd->add_option("--h-min", run.h_min, "Baseline KDE bandwidth floor")->capture_default_str();
  cmd->add_option("--max-sweeps", run.max_sweeps, "Maximum coordinate-ascent sweeps")->capture_default_str();
  cmd->add_option("--tol", run.tol, "Relative ELBO change for convergence")->capture_default_str();
  cmd->add_option("--mu0", run.mu0, "Default prior mean of a customer's size")->capture_default_str();
  cmd->add_option("--sigma0", run.sigma0, "Default prior std of a customer's size")->capture_default_str();
  cmd->add_option("--alpha-dp", run.alpha_dp, "Stick-breaking concentration")->capture_default_str();
  cmd->add_option("--truncation", run.truncation, "Mixture truncation level")->capture_default_str();
}

void add_inputs(CLI::App* cmd, RunConfig& run, bool with_orders) {
  if (with_orders) cmd->add_option("--orders", run.orders_path, "Orders CSV")->required();
  cmd->add_option("--catalog", run.catalog_path, "Catalog CSV")->required();
  cmd->add_option("--size-config", run.size_config_path, "Size-system normalization file");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Size recommendation: train, evaluate, recommend and simulate", "sizecast"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Fit a model and write it as JSON");
  train->add_option("--kind", cfg.kind, "Model kind")->required()->check(CLI::IsMember({"baseline", "hbayes"}));
  add_inputs(train, cfg, true);
  train->add_option("--out", cfg.out_path, "Model output path")->required();
  add_training(train, cfg);
  add_common(train, cfg);

  auto* evaluate = app.add_subcommand("evaluate", "Temporal cross-validation of both models");
  add_inputs(evaluate, cfg, true);
  evaluate->add_option("--out", cfg.out_path, "Report output directory")->required();
  evaluate->add_option("--folds", cfg.folds, "Number of validation folds")->capture_default_str();
  evaluate->add_option("--gap-days", cfg.gap_days, "Days skipped between training and validation")
      ->capture_default_str();
  evaluate->add_option("--val-days", cfg.val_days, "Length of each validation window in days")->capture_default_str();
  evaluate->add_option("--tau-param", cfg.eval_tau_param, "Parameter-confidence threshold of the joint+param curve")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  evaluate->add_flag("--exclude-unknown-customers", cfg.exclude_unknown,
                     "Score curves only on customers seen in training");
  add_training(evaluate, cfg);
  add_common(evaluate, cfg);

  auto* rec = app.add_subcommand("recommend", "Recommend a size for one customer and article");
  rec->add_option("--model", cfg.model_path, "Model JSON written by train")->required();
  add_inputs(rec, cfg, false);
  rec->add_option("--customer", cfg.customer_id, "Customer id")->required();
  rec->add_option("--article", cfg.article_id, "Article id")->required();
  rec->add_option("--tau-joint", cfg.tau_joint, "Minimum p(size, kept) to recommend")->capture_default_str();
  rec->add_option("--tau-param", cfg.tau_param, "Minimum parameter confidence (hbayes)")->capture_default_str();
  add_common(rec, cfg);

  auto* sim = app.add_subcommand("simulate", "Sample a synthetic dataset from the hierarchical model");
  sim->add_option("--customers", cfg.sim_customers, "Number of customers")->capture_default_str();
  sim->add_option("--articles", cfg.sim_articles, "Number of articles")->capture_default_str();
  sim->add_option("--orders", cfg.sim_orders, "Number of orders")->capture_default_str();
  sim->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  sim->add_option("--mu0", cfg.mu0, "Prior mean of a person's size")->capture_default_str();
  sim->add_option("--sigma0", cfg.sigma0, "Prior std of a person's size")->capture_default_str();
  sim->add_option("--alpha-dp", cfg.alpha_dp, "Stick-breaking concentration")->capture_default_str();
  sim->add_option("--truncation", cfg.truncation, "Mixture truncation level")->capture_default_str();
  sim->add_option("--out", cfg.out_path, "Output directory")->required();
  add_common(sim, cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "run 'sizecast " << sub->get_name() << " --help' for usage\n";
    }
    return kExitUsage;
  }

  LoggingScope logging(err);
  const int threads = cfg.threads > 0 ? cfg.threads : tbb::info::default_concurrency();
  tbb::global_control limit(tbb::global_control::max_allowed_parallelism, static_cast<std::size_t>(threads));
  tbb::task_arena arena(threads);

  try {
    return arena.execute([&] {
      if (train->parsed()) return cmd_train(cfg);
      if (evaluate->parsed()) return cmd_evaluate(cfg);
      if (rec->parsed()) return cmd_recommend(cfg, out);
      return cmd_simulate(cfg);
    });
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UndefinedMetricError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace sizecast::cli
