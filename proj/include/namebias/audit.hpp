#pragma once

// End-to-end audit: census -> intervention sets -> instance grid ->
// predictions per checkpoint -> effect tables, plus similarity profiles,
// component renderings and the coverage report when their inputs exist.
//
// Every stage reads what earlier stages wrote to the output directory, so a
// single stage can be rerun on its own. A failing stage records an entry in
// errors.json and the remaining stages still run.

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "namebias/bridge.hpp"
#include "namebias/census.hpp"
#include "namebias/components.hpp"
#include "namebias/contextualization.hpp"
#include "namebias/coverage.hpp"
#include "namebias/effects.hpp"
#include "namebias/protocol.hpp"
#include "namebias/report.hpp"
#include "namebias/templates.hpp"

namespace namebias {

namespace fs = std::filesystem;

struct EndpointSpec {
  std::string tag;
  std::string spec;

  friend bool operator==(const EndpointSpec&, const EndpointSpec&) = default;
};

// "tag=spec"; a bare spec gets the tag "default".
inline EndpointSpec parse_endpoint_spec(std::string_view text) {
  const auto eq = text.find('=');
  const auto colon = text.find(':');
  if (eq == std::string_view::npos || (colon != std::string_view::npos && colon < eq))
    return {"default", std::string(trim(text))};
  EndpointSpec e{std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
  if (e.tag.empty()) throw Error("endpoint `" + std::string(text) + "` has an empty tag");
  return e;
}

struct AuditConfig {
  fs::path census_dir;
  fs::path template_file;
  fs::path output_dir;
  // Optional "name[,count]" file for the coverage report.
  fs::path dataset_names;
  std::size_t k = 200;
  // Checkpoint order is the order given here.
  std::vector<EndpointSpec> endpoints;
  std::vector<Comparison> comparisons = default_comparisons();
  std::vector<Metric> metrics = {Metric::Acc, Metric::Agr};
  PronounPolicy policy = PronounPolicy::Both;
  TestKind test = TestKind::Welch;
  std::uint64_t seed = 0;
  std::size_t coverage_bins = 10;
  std::size_t nmf_components = 8;
  std::size_t nmf_max_iter = 200;
  double nmf_tol = 1e-4;
  // Names per group shown in the component renderings.
  std::size_t component_names = 4;
  TransportOptions transport;

  void validate() const {
    if (endpoints.empty()) throw Error("config: at least one endpoint is required");
    if (comparisons.empty()) throw Error("config: at least one comparison is required");
    if (metrics.empty()) throw Error("config: at least one metric is required");
    if (k < 1) throw Error("config: k must be at least 1");
    if (coverage_bins < 2) throw Error("config: coverage bins must be at least 2");
    std::set<std::string> tags;
    for (const auto& e : endpoints)
      if (!tags.insert(e.tag).second) throw Error("config: duplicate checkpoint tag `" + e.tag + "`");
  }
};

// NAMEBIAS_ENDPOINT_<TAG> replaces the spec of the endpoint tagged TAG
// (upper-cased, non-alphanumerics as '_').
inline std::string endpoint_env_var(std::string_view tag) {
  std::string v = "NAMEBIAS_ENDPOINT_";
  for (unsigned char c : tag) v += std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_';
  return v;
}

inline void apply_env_overrides(AuditConfig& cfg) {
  for (auto& e : cfg.endpoints)
    if (const char* v = std::getenv(endpoint_env_var(e.tag).c_str()); v && *v) e.spec = v;
}

// The output directory is left out: the snapshot describes the run, not where it landed.
inline nlohmann::json config_snapshot(const AuditConfig& cfg) {
  nlohmann::json endpoints = nlohmann::json::array();
  for (const auto& e : cfg.endpoints) endpoints.push_back({{"tag", e.tag}, {"spec", e.spec}});
  nlohmann::json comparisons = nlohmann::json::array();
  for (const auto& c : cfg.comparisons) comparisons.push_back(c.label());
  nlohmann::json metrics = nlohmann::json::array();
  for (auto m : cfg.metrics) metrics.push_back(to_string(m));
  return {{"census_dir", cfg.census_dir.string()},
          {"template_file", cfg.template_file.string()},
          {"dataset_names", cfg.dataset_names.string()},
          {"k", cfg.k},
          {"endpoints", endpoints},
          {"comparisons", comparisons},
          {"metrics", metrics},
          {"pronoun_policy", to_string(cfg.policy)},
          {"test", to_string(cfg.test)},
          {"seed", cfg.seed},
          {"coverage_bins", cfg.coverage_bins},
          {"nmf", {{"k", cfg.nmf_components}, {"max_iter", cfg.nmf_max_iter}, {"tol", cfg.nmf_tol}}},
          {"component_names", cfg.component_names},
          {"transport",
           {{"max_in_flight", cfg.transport.max_in_flight},
            {"max_retries", cfg.transport.max_retries},
            {"batch_timeout_ms", cfg.transport.batch_timeout.count()}}}};
}

// ---------------------------------------------------------------------------
// Run bookkeeping

struct LedgerEntry {
  std::string stage;
  std::string message;
};

// Exclusive ownership of an audit directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot create lock file " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error("audit directory " + dir.string() + " is in use by another process");
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

enum class ExitCode : int { Ok = 0, Fatal = 1, Partial = 2 };

struct AuditOutcome {
  ExitCode code = ExitCode::Ok;
  std::vector<LedgerEntry> errors;
  std::vector<LedgerEntry> notices;
};

// Shared state of one audit run. Endpoints are opened on first use and kept
// for the later stages.
class AuditContext {
 public:
  explicit AuditContext(AuditConfig cfg) : cfg_(std::move(cfg)) {}

  const AuditConfig& config() const noexcept { return cfg_; }
  const fs::path& dir() const noexcept { return cfg_.output_dir; }

  void error(std::string stage, std::string message) { errors_.push_back({std::move(stage), std::move(message)}); }
  void notice(std::string stage, std::string message) { notices_.push_back({std::move(stage), std::move(message)}); }
  const std::vector<LedgerEntry>& errors() const noexcept { return errors_; }
  const std::vector<LedgerEntry>& notices() const noexcept { return notices_; }

  // Runs `body`; an exception becomes a ledger entry. Returns success.
  bool stage(const std::string& name, const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    try {
      body();
    } catch (const std::exception& e) {
      error(name, e.what());
      ok = false;
    }
    timing_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    status_[name] = ok ? "ok" : "failed";
    return ok;
  }

  void skip(const std::string& name, const std::string& why) {
    status_[name] = "skipped";
    notice(name, why);
  }

  const std::map<std::string, std::string>& status() const noexcept { return status_; }
  const std::map<std::string, double>& timing() const noexcept { return timing_; }

  std::vector<InterventionSet> sets() const { return load_sets(dir() / "intervention_sets.json"); }
  StatsMap stats() const { return load_stats(dir() / "name_stats.json"); }
  std::vector<Instance> instances() const { return load_instances_jsonl(dir() / "instances.jsonl"); }

  ModelEndpoint& endpoint(const EndpointSpec& e) {
    auto it = endpoints_.find(e.tag);
    if (it != endpoints_.end()) return *it->second;
    auto ep = make_endpoint(e.spec, e.tag, resolver(), cfg_.transport);
    return *endpoints_.emplace(e.tag, std::move(ep)).first->second;
  }

  // Opens every endpoint not yet open, concurrently so subprocess handshakes
  // overlap. Failures are recorded against `stage`.
  void open_endpoints(const std::string& stage) {
    std::vector<std::unique_ptr<ModelEndpoint>> opened(cfg_.endpoints.size());
    std::vector<std::string> failures(cfg_.endpoints.size());
    const auto resolve = resolver();
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < cfg_.endpoints.size(); ++i) {
      if (endpoints_.contains(cfg_.endpoints[i].tag) || failed_.contains(cfg_.endpoints[i].tag)) continue;
      threads.emplace_back([&, i] {
        try {
          opened[i] = make_endpoint(cfg_.endpoints[i].spec, cfg_.endpoints[i].tag, resolve, cfg_.transport);
        } catch (const std::exception& ex) {
          failures[i] = ex.what();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < cfg_.endpoints.size(); ++i) {
      if (opened[i]) endpoints_.emplace(cfg_.endpoints[i].tag, std::move(opened[i]));
      if (!failures[i].empty()) {
        failed_.insert(cfg_.endpoints[i].tag);
        error(stage, cfg_.endpoints[i].tag + ": " + failures[i]);
      }
    }
  }

  bool has_endpoint(const std::string& tag) const { return endpoints_.contains(tag); }

 private:
  AuditConfig cfg_;
  std::vector<LedgerEntry> errors_, notices_;
  std::map<std::string, std::string> status_;
  std::map<std::string, double> timing_;
  std::map<std::string, std::unique_ptr<ModelEndpoint>> endpoints_;
  std::set<std::string> failed_;

  // biased(LABEL) stubs resolve LABEL against this run's intervention sets.
  stub::SetResolver resolver() const {
    auto sets = load_sets(dir() / "intervention_sets.json");
    return [sets = std::move(sets)](std::string_view label) -> std::optional<std::vector<std::string>> {
      auto l = parse_set_label(label);
      if (!l) return std::nullopt;
      return find_set(sets, *l).names;
    };
  }
};

// ---------------------------------------------------------------------------
// Stages

namespace detail {

inline std::vector<SetLabel> referenced_sets(const AuditConfig& cfg) {
  std::vector<SetLabel> labels;
  for (const auto& c : cfg.comparisons)
    for (auto l : {c.from, c.to})
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  return labels;
}

inline nlohmann::json ledger_json(const std::vector<LedgerEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) arr.push_back({{"stage", e.stage}, {"message", e.message}});
  return arr;
}

inline fs::path predictions_path(const fs::path& dir, const std::string& tag) {
  return dir / "predictions" / (tag + ".jsonl");
}

// Stats-based variant selection applies whenever names carry their majority pronouns.
inline const StatsMap* selection_stats(const AuditConfig& cfg, const StatsMap& stats) {
  return cfg.policy == PronounPolicy::Both || cfg.policy == PronounPolicy::ByNameGender ? &stats : nullptr;
}

}  // namespace detail

// Census -> intervention_sets.json and name_stats.json (the names used).
inline void stage_ingest(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto records = parse_census_dir(cfg.census_dir);
  const auto stats = aggregate_stats(records);
  if (stats.empty()) throw Error("census directory " + cfg.census_dir.string() + " holds no names");
  const auto sets = build_intervention_sets(stats, cfg.k);
  StatsMap used;
  for (const auto& s : sets) {
    if (s.truncated)
      ctx.notice("ingest", std::string(to_string(s.label)) + " holds " + std::to_string(s.names.size()) +
                               " names, fewer than k = " + std::to_string(cfg.k));
    for (const auto& n : s.names) used.emplace(n, stats.at(n));
  }
  fs::create_directories(ctx.dir());
  write_file_atomic(ctx.dir() / "intervention_sets.json", dump_sets(sets));
  write_file_atomic(ctx.dir() / "name_stats.json", dump_stats(used));
}

// Templates x names of every referenced set -> instances.jsonl.
inline void stage_grid(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto templates = load_templates(cfg.template_file);
  const auto sets = ctx.sets();
  const auto stats = ctx.stats();
  std::vector<std::string> names;
  for (auto label : detail::referenced_sets(cfg)) {
    const auto& s = find_set(sets, label);
    names.insert(names.end(), s.names.begin(), s.names.end());
  }
  const auto grid = instance_grid(templates, names, cfg.policy, &stats);
  write_file_atomic(ctx.dir() / "instances.jsonl", dump_instances_jsonl(grid));
}

// Writes the manifest; called before any model call and again at the end.
inline void write_manifest(AuditContext& ctx, bool final) {
  const auto& cfg = ctx.config();
  nlohmann::json sets = nlohmann::json::object();
  if (fs::exists(ctx.dir() / "intervention_sets.json"))
    for (const auto& s : ctx.sets()) {
      std::string joined;
      for (const auto& n : s.names) joined += n + "\n";
      sets[std::string(to_string(s.label))] = {
          {"hash", "fnv1a64:" + hex64(fnv1a64(joined))}, {"size", s.names.size()}, {"truncated", s.truncated}};
    }
  std::size_t instance_count = 0;
  if (fs::exists(ctx.dir() / "instances.jsonl")) instance_count = ctx.instances().size();
  std::string template_hash;
  if (fs::exists(cfg.template_file)) template_hash = "fnv1a64:" + hex64(fnv1a64(read_file(cfg.template_file)));

  nlohmann::json timing = nlohmann::json::object();
  for (const auto& [stage, seconds] : ctx.timing()) timing[stage] = seconds;
  const nlohmann::json manifest = {
      {"toolkit_version", kVersion},
      {"complete", final},
      {"config", config_snapshot(cfg)},
      {"template_hash", template_hash},
      {"intervention_sets", sets},
      {"instance_count", instance_count},
      {"aggregation",
       {{"direct_effects", "effect = mean over templates of the per-template difference; effect_sum = sum"},
        {"indirect_effects", "value = mean flip rate over (template, name) cells; sum = flip count"},
        {"correlation", "Spearman rho across checkpoints, accuracy vs effect"}}},
      {"stages", ctx.status()},
      {"timing", timing}};
  write_file_atomic(ctx.dir() / "manifest.json", manifest.dump(2) + "\n");
}

// One prediction pass per endpoint -> predictions/<tag>.jsonl.
inline void stage_predict(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto instances = ctx.instances();
  fs::create_directories(ctx.dir() / "predictions");
  ctx.open_endpoints("predict");

  struct Outcome {
    std::optional<BatchResult<PredictionRecord>> result;
    std::string error;
  };
  std::vector<Outcome> outcomes(cfg.endpoints.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.endpoints.size(); ++i) {
    if (!ctx.has_endpoint(cfg.endpoints[i].tag)) continue;
    auto& ep = ctx.endpoint(cfg.endpoints[i]);
    if (!ep.info().can(Capability::Predict)) {
      outcomes[i].error = "endpoint lacks the predict capability";
      continue;
    }
    threads.emplace_back([&, i, ep_ptr = &ep] {
      try {
        outcomes[i].result = predict_batch(*ep_ptr, instances);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();

  for (std::size_t i = 0; i < cfg.endpoints.size(); ++i) {
    const auto& tag = cfg.endpoints[i].tag;
    auto& o = outcomes[i];
    if (!o.error.empty()) ctx.error("predict", tag + ": " + o.error);
    if (!o.result) continue;
    for (const auto& f : o.result->failures) ctx.error("predict", tag + ": " + f.id + ": " + f.message);
    write_file_atomic(detail::predictions_path(ctx.dir(), tag), dump_predictions_jsonl(o.result->records));
  }
}

// Direct and indirect effects, epoch curves and the correlation table.
inline void stage_effects(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto instances = ctx.instances();
  const auto sets = ctx.sets();
  const auto stats = ctx.stats();
  const auto* select_stats = detail::selection_stats(cfg, stats);

  std::vector<CheckpointPredictions> checkpoints;
  for (const auto& e : cfg.endpoints) {
    const auto path = detail::predictions_path(ctx.dir(), e.tag);
    if (!fs::exists(path)) {
      ctx.error("effects", e.tag + ": no predictions file");
      continue;
    }
    std::vector<std::string> unmatched;
    const auto records = load_predictions_jsonl(path);
    checkpoints.push_back({e.tag, group_predictions(instances, records, &unmatched)});
    if (!unmatched.empty())
      ctx.error("effects", e.tag + ": " + std::to_string(unmatched.size()) + " predictions match no instance");
  }
  if (checkpoints.empty()) throw Error("no checkpoint has predictions");

  SweepResult sweep;
  std::vector<CheckpointPredictions> usable;
  for (auto& cp : checkpoints) {
    try {
      auto r = epoch_sweep(std::span<const CheckpointPredictions>(&cp, 1), sets, cfg.comparisons, cfg.metrics,
                           select_stats, cfg.test);
      sweep.reports.insert(sweep.reports.end(), r.reports.begin(), r.reports.end());
      sweep.curves.insert(sweep.curves.end(), r.curves.begin(), r.curves.end());
      usable.push_back(cp);
    } catch (const std::exception& e) {
      ctx.error("effects", cp.tag + ": " + e.what());
    }
  }
  if (!sweep.reports.empty()) {
    write_file_atomic(ctx.dir() / "direct_effects.csv", direct_effects_csv(sweep.reports));
    write_file_atomic(ctx.dir() / "direct_effects.json", direct_effects_json(sweep.reports));
    write_file_atomic(ctx.dir() / "direct_effects.txt", direct_effects_text(sweep.reports));
    write_file_atomic(ctx.dir() / "epoch_curves.csv", curves_csv(sweep.curves));
  }

  if (cfg.policy != PronounPolicy::Both) {
    ctx.notice("effects", "indirect effects need pronoun policy BOTH; skipped");
  } else {
    std::vector<IndirectReport> indirect;
    for (const auto& cp : usable)
      for (auto label : detail::referenced_sets(cfg)) {
        try {
          auto r = indirect_effect(cp.grouped, find_set(sets, label));
          r.checkpoint = cp.tag;
          indirect.push_back(r);
        } catch (const std::exception& e) {
          ctx.error("effects", cp.tag + ": " + std::string(to_string(label)) + ": " + e.what());
        }
      }
    if (!indirect.empty()) {
      write_file_atomic(ctx.dir() / "indirect_effects.csv", indirect_effects_csv(indirect));
      write_file_atomic(ctx.dir() / "indirect_effects.json", indirect_effects_json(indirect));
      write_file_atomic(ctx.dir() / "indirect_effects.txt", indirect_effects_text(indirect));
    }
  }

  if (usable.size() < 3) {
    ctx.notice("effects", "correlation table needs at least 3 checkpoints; " + std::to_string(usable.size()) +
                              " available");
  } else {
    const auto rows = accuracy_effect_correlation(usable, sweep);
    write_file_atomic(ctx.dir() / "correlation.csv", correlation_csv(rows));
    write_file_atomic(ctx.dir() / "correlation.txt", correlation_text(rows));
  }
}

// Per-layer similarity of MOST vs LEAST name embeddings.
inline void stage_similarity(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto instances = ctx.instances();
  const auto sets = ctx.sets();
  const auto& most = find_set(sets, SetLabel::Most);
  const auto& least = find_set(sets, SetLabel::Least);
  std::set<std::string> wanted(most.names.begin(), most.names.end());
  wanted.insert(least.names.begin(), least.names.end());
  std::vector<Instance> subset;
  for (const auto& i : instances)
    if (wanted.contains(i.name)) subset.push_back(i);
  if (subset.empty()) throw Error("no instances for MOST or LEAST names; add a comparison that uses them");

  ctx.open_endpoints("similarity");
  bool any = false;
  for (const auto& e : cfg.endpoints) {
    if (!ctx.has_endpoint(e.tag)) continue;
    auto& ep = ctx.endpoint(e);
    if (!ep.info().can(Capability::Embed)) continue;
    any = true;
    try {
      const auto r = embed_names(ep, subset);
      for (const auto& f : r.failures) ctx.error("similarity", e.tag + ": " + f.id + ": " + f.message);
      auto gm = build_embedding_group("MOST", most.names, subset, r.records);
      auto gl = build_embedding_group("LEAST", least.names, subset, r.records);
      align_templates(gm, gl);
      const auto rows = similarity_profile(gm, gl);
      write_file_atomic(ctx.dir() / ("similarity_" + e.tag + ".csv"), similarity_csv(rows));
    } catch (const std::exception& ex) {
      ctx.error("similarity", e.tag + ": " + ex.what());
    }
  }
  if (!any) ctx.notice("similarity", "no endpoint declares the embed capability; similarity profile skipped");
}

// NMF component maps for a few MOST and LEAST names on the first template.
inline void stage_components(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto instances = ctx.instances();
  const auto sets = ctx.sets();
  const auto stats = ctx.stats();
  if (instances.empty()) throw Error("no instances");
  const auto& first_template = instances.front().template_id;

  std::vector<Instance> chosen;
  for (auto label : {SetLabel::Most, SetLabel::Least}) {
    std::size_t taken = 0;
    for (const auto& name : find_set(sets, label).names) {
      if (taken == cfg.component_names) break;
      const auto preferred = majority_pronouns(stats, name);
      const Instance* pick = nullptr;
      for (const auto& i : instances) {
        if (i.template_id != first_template || i.name != name) continue;
        if (!pick || (!preferred.empty() && i.pronouns.label == preferred.front())) pick = &i;
      }
      if (!pick) continue;
      if (std::none_of(chosen.begin(), chosen.end(), [&](const Instance& c) { return c.id == pick->id; }))
        chosen.push_back(*pick);
      ++taken;
    }
  }
  if (chosen.empty()) throw Error("no instances for MOST or LEAST names on template `" + first_template + "`");

  NmfConfig nmf_cfg;
  nmf_cfg.k = cfg.nmf_components;
  nmf_cfg.max_iter = cfg.nmf_max_iter;
  nmf_cfg.tol = cfg.nmf_tol;
  nmf_cfg.seed = cfg.seed;

  ctx.open_endpoints("components");
  bool any = false;
  for (const auto& e : cfg.endpoints) {
    if (!ctx.has_endpoint(e.tag)) continue;
    auto& ep = ctx.endpoint(e);
    if (!ep.info().can(Capability::Activations)) continue;
    any = true;
    try {
      const auto r = fetch_activations(ep, chosen);
      for (const auto& f : r.failures) ctx.error("components", e.tag + ": " + f.id + ": " + f.message);
      std::vector<ComponentMap> maps;
      for (const auto& b : r.records) maps.push_back(analyze_activations(b, nmf_cfg));
      const auto html = render_components(maps, RenderFormat::Html);
      for (const auto& w : html.warnings) ctx.notice("components", e.tag + ": " + w);
      write_file_atomic(ctx.dir() / ("components_" + e.tag + ".html"), html.document);
      write_file_atomic(ctx.dir() / ("components_" + e.tag + ".json"),
                        render_components(maps, RenderFormat::Json).document);
    } catch (const std::exception& ex) {
      ctx.error("components", e.tag + ": " + ex.what());
    }
  }
  if (!any) ctx.notice("components", "no endpoint declares the activations capability; component maps skipped");
}

inline void stage_coverage(AuditContext& ctx) {
  const auto& cfg = ctx.config();
  const auto stats = aggregate_stats(parse_census_dir(cfg.census_dir));
  const auto report = coverage_report(load_name_occurrences(cfg.dataset_names), stats, cfg.coverage_bins);
  if (!report.unmatched.empty())
    ctx.notice("coverage", std::to_string(report.unmatched.size()) + " dataset names are not in the census");
  write_file_atomic(ctx.dir() / "coverage.csv", coverage_csv(report));
  write_file_atomic(ctx.dir() / "coverage.json", coverage_json(report));
}

inline void write_ledger(const AuditContext& ctx) {
  const nlohmann::json doc = {{"errors", detail::ledger_json(ctx.errors())},
                              {"notices", detail::ledger_json(ctx.notices())}};
  write_file_atomic(ctx.dir() / "errors.json", doc.dump(2) + "\n");
}

inline AuditOutcome finish(const AuditContext& ctx, bool fatal) {
  AuditOutcome out;
  out.errors = ctx.errors();
  out.notices = ctx.notices();
  out.code = fatal ? ExitCode::Fatal : (out.errors.empty() ? ExitCode::Ok : ExitCode::Partial);
  return out;
}

// Runs every stage. Ingest and grid failures are fatal because nothing
// downstream can run; later stages fail independently.
inline AuditOutcome run_audit(const AuditConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  DirectoryLock lock(cfg.output_dir);
  AuditContext ctx(cfg);

  const bool ingested = ctx.stage("ingest", [&] { stage_ingest(ctx); });
  const bool gridded = ingested && ctx.stage("grid", [&] { stage_grid(ctx); });
  write_manifest(ctx, false);
  if (!gridded) {
    write_ledger(ctx);
    return finish(ctx, true);
  }

  const bool predicted = ctx.stage("predict", [&] { stage_predict(ctx); });
  if (predicted) ctx.stage("effects", [&] { stage_effects(ctx); });
  else ctx.skip("effects", "prediction stage failed");
  ctx.stage("similarity", [&] { stage_similarity(ctx); });
  ctx.stage("components", [&] { stage_components(ctx); });
  if (cfg.dataset_names.empty()) ctx.skip("coverage", "no dataset names file configured; coverage report skipped");
  else ctx.stage("coverage", [&] { stage_coverage(ctx); });

  write_manifest(ctx, true);
  write_ledger(ctx);
  return finish(ctx, false);
}

}  // namespace namebias
