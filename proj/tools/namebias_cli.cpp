// namebias: run name-intervention audits stage by stage or end to end.

#include <chrono>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "namebias/audit.hpp"

using namespace namebias;

namespace {

struct Options {
  std::string census, templates, out = "audit", dataset_names;
  std::size_t k = 200;
  std::vector<std::string> endpoints, comparisons, metrics;
  std::string policy = "BOTH", test = "welch";
  std::uint64_t seed = 0;
  std::size_t bins = 10, nmf_k = 8, nmf_max_iter = 200, component_names = 4;
  double nmf_tol = 1e-4;
  std::size_t max_in_flight = 32, retries = 2;
  long timeout_ms = 60000;
};

AuditConfig to_config(const Options& o) {
  AuditConfig cfg;
  cfg.census_dir = o.census;
  cfg.template_file = o.templates;
  cfg.output_dir = o.out;
  cfg.dataset_names = o.dataset_names;
  cfg.k = o.k;
  for (const auto& e : o.endpoints) cfg.endpoints.push_back(parse_endpoint_spec(e));
  if (!o.comparisons.empty()) {
    cfg.comparisons.clear();
    for (const auto& c : o.comparisons) cfg.comparisons.push_back(parse_comparison(c));
  }
  if (!o.metrics.empty()) {
    cfg.metrics.clear();
    for (const auto& m : o.metrics) {
      auto metric = parse_metric(m);
      if (!metric) throw Error("unknown metric `" + m + "` (expected ACC or AGR)");
      cfg.metrics.push_back(*metric);
    }
  }
  auto policy = parse_pronoun_policy(o.policy);
  if (!policy) throw Error("unknown pronoun policy `" + o.policy + "`");
  cfg.policy = *policy;
  if (o.test == "welch") cfg.test = TestKind::Welch;
  else if (o.test == "paired") cfg.test = TestKind::Paired;
  else throw Error("unknown test `" + o.test + "` (expected welch or paired)");
  cfg.seed = o.seed;
  cfg.coverage_bins = o.bins;
  cfg.nmf_components = o.nmf_k;
  cfg.nmf_max_iter = o.nmf_max_iter;
  cfg.nmf_tol = o.nmf_tol;
  cfg.component_names = o.component_names;
  cfg.transport.max_in_flight = o.max_in_flight;
  cfg.transport.max_retries = o.retries;
  cfg.transport.batch_timeout = std::chrono::milliseconds(o.timeout_ms);
  apply_env_overrides(cfg);
  return cfg;
}

void print_ledger(const std::vector<LedgerEntry>& notices, const std::vector<LedgerEntry>& errors) {
  for (const auto& n : notices) std::cerr << "note [" << n.stage << "] " << n.message << "\n";
  for (const auto& e : errors) std::cerr << "error [" << e.stage << "] " << e.message << "\n";
}

// Runs one stage against an existing audit directory.
int run_stage(const AuditConfig& cfg, const std::string& name, void (*body)(AuditContext&), bool needs_endpoints) {
  if (needs_endpoints && cfg.endpoints.empty()) throw Error("at least one --endpoint is required");
  std::filesystem::create_directories(cfg.output_dir);
  DirectoryLock lock(cfg.output_dir);
  AuditContext ctx(cfg);
  if (name == "predict") write_manifest(ctx, false);
  ctx.stage(name, [&] { body(ctx); });
  print_ledger(ctx.notices(), ctx.errors());
  return ctx.errors().empty() ? 0 : 2;
}

int print_report(const AuditConfig& cfg) {
  const auto dir = cfg.output_dir;
  bool any = false;
  if (std::filesystem::exists(dir / "direct_effects.json")) {
    const auto reports = load_direct_effects(dir / "direct_effects.json");
    std::cout << direct_effects_text(reports) << "\n";
    any = true;
  }
  if (std::filesystem::exists(dir / "indirect_effects.json")) {
    const auto reports = load_indirect_effects(dir / "indirect_effects.json");
    std::cout << indirect_effects_text(reports) << "\n";
    any = true;
  }
  if (std::filesystem::exists(dir / "correlation.txt")) {
    std::cout << read_file(dir / "correlation.txt");
    any = true;
  }
  if (!any) throw Error("no effect tables in " + dir.string() + "; run `effects` first");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure how first names shift a model's multiple-choice answers"};
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options o;
  app.add_option("--census", o.census, "Directory of yobYYYY.txt census files");
  app.add_option("--templates", o.templates, "Template JSON file");
  app.add_option("--out", o.out, "Audit output directory")->capture_default_str();
  app.add_option("-k,--k", o.k, "Names per intervention set")->capture_default_str();
  app.add_option("--endpoint", o.endpoints, "Checkpoint endpoint as tag=spec (stub:..., cmd:..., file:...)");
  app.add_option("--compare", o.comparisons, "Comparison such as MOST->LEAST (default: the four standard ones)");
  app.add_option("--metric", o.metrics, "ACC and/or AGR (default: both)");
  app.add_option("--pronouns", o.policy, "BOTH, BY_NAME_GENDER, FIXED_FEMALE or FIXED_MALE")->capture_default_str();
  app.add_option("--test", o.test, "welch or paired")->capture_default_str();
  app.add_option("--seed", o.seed, "Seed for the NMF initialization")->capture_default_str();
  app.add_option("--dataset-names", o.dataset_names, "Names used by a dataset, one per line, optional ,count");
  app.add_option("--bins", o.bins, "Coverage quantile bins")->capture_default_str();
  app.add_option("--nmf-k", o.nmf_k, "NMF components")->capture_default_str();
  app.add_option("--nmf-max-iter", o.nmf_max_iter, "NMF iteration cap")->capture_default_str();
  app.add_option("--nmf-tol", o.nmf_tol, "NMF relative-decrease tolerance")->capture_default_str();
  app.add_option("--component-names", o.component_names, "Names per group in component maps")->capture_default_str();
  app.add_option("--max-in-flight", o.max_in_flight, "Requests outstanding per adapter")->capture_default_str();
  app.add_option("--retries", o.retries, "Adapter relaunches per batch")->capture_default_str();
  app.add_option("--timeout-ms", o.timeout_ms, "Per-batch timeout")->capture_default_str();

  app.add_subcommand("ingest", "Build intervention sets from the census");
  app.add_subcommand("grid", "Instantiate templates for every set's names");
  app.add_subcommand("predict", "Query every endpoint for the instance grid");
  app.add_subcommand("effects", "Direct and indirect effects, curves and correlation");
  app.add_subcommand("similarity", "Per-layer embedding similarity of MOST vs LEAST");
  app.add_subcommand("components", "NMF neuron-component maps");
  app.add_subcommand("coverage", "Census-frequency coverage of a dataset's names");
  app.add_subcommand("report", "Print the effect tables of an audit directory");
  app.add_subcommand("all", "Run every stage");

  CLI11_PARSE(app, argc, argv);
  const auto command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = to_config(o);
    if (command == "all") {
      const auto outcome = run_audit(cfg);
      print_ledger(outcome.notices, outcome.errors);
      std::cerr << "audit written to " << cfg.output_dir.string() << "\n";
      return static_cast<int>(outcome.code);
    }
    if (command == "report") return print_report(cfg);
    if (command == "ingest") {
      if (cfg.census_dir.empty()) throw Error("--census is required");
      return run_stage(cfg, command, stage_ingest, false);
    }
    if (command == "grid") return run_stage(cfg, command, stage_grid, false);
    if (command == "predict") return run_stage(cfg, command, stage_predict, true);
    if (command == "effects") return run_stage(cfg, command, stage_effects, true);
    if (command == "similarity") return run_stage(cfg, command, stage_similarity, true);
    if (command == "components") return run_stage(cfg, command, stage_components, true);
    if (command == "coverage") {
      if (cfg.dataset_names.empty()) throw Error("--dataset-names is required");
      return run_stage(cfg, command, stage_coverage, false);
    }
  } catch (const std::exception& e) {
    std::cerr << "namebias: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
