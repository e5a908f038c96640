#pragma once

// In-memory census, templates and stub predictions for effect tests.

#include <string>
#include <vector>

#include "namebias/bridge.hpp"
#include "namebias/census.hpp"
#include "namebias/effects.hpp"
#include "namebias/templates.hpp"
#include "support.hpp"

namespace testing_support {

struct Fixture {
  namebias::StatsMap stats;
  std::vector<namebias::InterventionSet> sets;
  std::vector<namebias::Template> templates;
  std::vector<namebias::Instance> instances;
};

inline std::vector<namebias::NameRecord> ranked_records(std::size_t n) {
  std::vector<namebias::NameRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "N%02zu", i);
    const auto total = 10 * (n - i) + 1;
    const auto female = total / 2 + (i % 2);
    recs.push_back({name, namebias::Gender::Female, 1990, female});
    recs.push_back({name, namebias::Gender::Male, 2000, total - female});
  }
  return recs;
}

inline Fixture make_fixture(std::size_t census_names, std::size_t k, std::size_t templates,
                            namebias::PronounPolicy policy = namebias::PronounPolicy::Both) {
  using namespace namebias;
  Fixture f;
  f.stats = aggregate_stats(ranked_records(census_names));
  f.sets = build_intervention_sets(f.stats, k);
  f.templates = parse_templates(generated_templates(templates));
  std::vector<std::string> names;
  for (const auto& [name, _] : f.stats) names.push_back(name);
  f.instances = instance_grid(f.templates, names, policy, &f.stats);
  return f;
}

inline namebias::stub::SetResolver resolver_for(const Fixture& f) {
  return [&f](std::string_view label) -> std::optional<std::vector<std::string>> {
    const auto l = namebias::parse_set_label(label);
    if (!l) return std::nullopt;
    return namebias::find_set(f.sets, *l).names;
  };
}

inline namebias::GroupedPredictions run_stub(const Fixture& f, const std::string& spec, const std::string& tag = "stub") {
  namebias::StubEndpoint ep(spec, tag, resolver_for(f));
  const auto r = namebias::predict_batch(ep, f.instances);
  return namebias::group_predictions(f.instances, r.records);
}

}  // namespace testing_support
