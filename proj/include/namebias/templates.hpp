#pragma once

// Commonsense-QA templates with name and pronoun placeholders.
//
// A template holds a question, three candidate answers and a gold label.
// Placeholders: [n] (name), [np1] (subject pronoun), [np2] (object pronoun),
// [np3] (dependent possessive).

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "namebias/census.hpp"
#include "namebias/common.hpp"

namespace namebias {

struct Template {
  std::string id;
  std::string question;
  std::array<std::string, 3> candidates;
  int gold_label = 0;

  friend bool operator==(const Template&, const Template&) = default;
};

enum class PronounLabel { Female, Male };

inline std::string_view to_string(PronounLabel p) noexcept { return p == PronounLabel::Female ? "FEMALE" : "MALE"; }

struct PronounSet {
  PronounLabel label = PronounLabel::Female;
  std::string subject;
  std::string object;
  std::string dep_possessive;

  static PronounSet female() { return {PronounLabel::Female, "she", "her", "her"}; }
  static PronounSet male() { return {PronounLabel::Male, "he", "him", "his"}; }
  static PronounSet of(PronounLabel label) { return label == PronounLabel::Female ? female() : male(); }

  friend bool operator==(const PronounSet&, const PronounSet&) = default;
};

struct Instance {
  std::string id;
  std::string template_id;
  std::string name;
  PronounSet pronouns;
  std::string rendered_question;
  std::array<std::string, 3> rendered_candidates;
  int gold_label = 0;
  // BY_NAME_GENDER could not resolve the name's gender and fell back to both variants.
  bool pronoun_defaulted = false;

  friend bool operator==(const Instance&, const Instance&) = default;
};

inline std::string make_instance_id(std::string_view template_id, std::string_view name, PronounLabel p) {
  std::string id;
  id.append(template_id).append("|").append(name).append("|").append(to_string(p));
  return id;
}

// ---------------------------------------------------------------------------
// Validation and loading

namespace detail {

enum class Slot { Name, Subject, Object, Possessive };

struct Placeholder {
  std::size_t pos;
  std::size_t len;
  std::string token;
};

// Finds every `[identifier]` run. Anything shaped like a placeholder counts,
// so unknown tokens are caught instead of being passed through verbatim.
inline std::vector<Placeholder> scan_placeholders(std::string_view text) {
  std::vector<Placeholder> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '[') continue;
    std::size_t j = i + 1;
    auto ident = [](char c) {
      return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    };
    while (j < text.size() && ident(text[j])) ++j;
    if (j < text.size() && text[j] == ']' && j > i + 1) {
      out.push_back({i, j - i + 1, std::string(text.substr(i, j - i + 1))});
      i = j;
    }
  }
  return out;
}

inline std::optional<Slot> slot_of(std::string_view token) noexcept {
  if (token == "[n]") return Slot::Name;
  if (token == "[np1]") return Slot::Subject;
  if (token == "[np2]") return Slot::Object;
  if (token == "[np3]") return Slot::Possessive;
  return std::nullopt;
}

}  // namespace detail

inline void validate(const Template& t) {
  const std::string where = "template `" + t.id + "`";
  if (t.id.empty()) throw Error("template with empty id");
  if (t.gold_label < 0 || t.gold_label > 2)
    throw Error(where + ": gold label " + std::to_string(t.gold_label) + " out of range 0..2");
  // Returns the number of [n] occurrences.
  auto check = [&](std::string_view text) {
    std::size_t names = 0;
    for (const auto& ph : detail::scan_placeholders(text)) {
      auto slot = detail::slot_of(ph.token);
      if (!slot) throw Error(where + ": unknown placeholder " + ph.token);
      if (*slot == detail::Slot::Name) ++names;
    }
    return names;
  };
  const bool has_name = check(t.question) > 0;
  for (const auto& c : t.candidates) check(c);
  if (!has_name) throw Error(where + ": question has no [n] placeholder");
}

inline Template template_from_json(const nlohmann::json& j) {
  Template t;
  t.id = j.at("id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  const auto& cands = j.at("candidates");
  if (!cands.is_array() || cands.size() != 3)
    throw Error("template `" + t.id + "`: expected exactly 3 candidates, got " +
                std::to_string(cands.is_array() ? cands.size() : 0));
  for (std::size_t i = 0; i < 3; ++i) t.candidates[i] = cands[i].get<std::string>();
  t.gold_label = j.at("label").get<int>();
  return t;
}

inline nlohmann::json to_json(const Template& t) {
  return {{"id", t.id}, {"question", t.question}, {"candidates", t.candidates}, {"label", t.gold_label}};
}

inline std::vector<Template> parse_templates(const nlohmann::json& doc) {
  if (!doc.is_array()) throw Error("template file must hold a JSON array");
  std::vector<Template> out;
  std::set<std::string, std::less<>> seen;
  for (const auto& j : doc) {
    auto t = template_from_json(j);
    validate(t);
    if (!seen.insert(t.id).second) throw Error("duplicate template id `" + t.id + "`");
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Template> load_templates(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return parse_templates(doc);
}

// ---------------------------------------------------------------------------
// Instantiation

namespace detail {

inline bool at_sentence_start(const std::string& rendered) noexcept {
  if (rendered.empty()) return true;
  if (rendered.size() < 2 || rendered.back() != ' ') return false;
  const char p = rendered[rendered.size() - 2];
  return p == '.' || p == '?' || p == '!';
}

// Single left-to-right pass; inserted text is never rescanned.
inline std::string render(std::string_view text, std::string_view name, const PronounSet& p) {
  std::string out;
  out.reserve(text.size() + 16);
  std::size_t cursor = 0;
  for (const auto& ph : scan_placeholders(text)) {
    out.append(text.substr(cursor, ph.pos - cursor));
    cursor = ph.pos + ph.len;
    const auto slot = slot_of(ph.token);
    if (!slot) {
      out.append(ph.token);
      continue;
    }
    if (*slot == Slot::Name) {
      out.append(name);
      continue;
    }
    std::string pronoun = *slot == Slot::Subject ? p.subject : *slot == Slot::Object ? p.object : p.dep_possessive;
    if (at_sentence_start(out) && !pronoun.empty() && pronoun[0] >= 'a' && pronoun[0] <= 'z')
      pronoun[0] = static_cast<char>(pronoun[0] - 'a' + 'A');
    out.append(pronoun);
  }
  out.append(text.substr(cursor));
  return out;
}

}  // namespace detail

inline Instance instantiate(const Template& t, std::string_view name, const PronounSet& p) {
  if (name.empty()) throw Error("instantiate: empty name");
  Instance inst;
  inst.id = make_instance_id(t.id, name, p.label);
  inst.template_id = t.id;
  inst.name = std::string(name);
  inst.pronouns = p;
  inst.rendered_question = detail::render(t.question, name, p);
  for (std::size_t i = 0; i < 3; ++i) inst.rendered_candidates[i] = detail::render(t.candidates[i], name, p);
  inst.gold_label = t.gold_label;
  return inst;
}

enum class PronounPolicy { ByNameGender, FixedFemale, FixedMale, Both };

inline std::string_view to_string(PronounPolicy p) noexcept {
  switch (p) {
    case PronounPolicy::ByNameGender: return "BY_NAME_GENDER";
    case PronounPolicy::FixedFemale: return "FIXED_FEMALE";
    case PronounPolicy::FixedMale: return "FIXED_MALE";
    case PronounPolicy::Both: return "BOTH";
  }
  return "?";
}

inline std::optional<PronounPolicy> parse_pronoun_policy(std::string_view s) noexcept {
  for (auto p : {PronounPolicy::ByNameGender, PronounPolicy::FixedFemale, PronounPolicy::FixedMale, PronounPolicy::Both})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

// Pronoun variants a name receives under the majority-gender rule.
// An empty result means the name is missing from the census aggregate.
inline std::vector<PronounLabel> majority_pronouns(const StatsMap& stats, std::string_view name) {
  auto it = stats.find(name);
  if (it == stats.end()) return {};
  const auto& s = it->second;
  if (s.female_count > s.male_count) return {PronounLabel::Female};
  if (s.male_count > s.female_count) return {PronounLabel::Male};
  return {PronounLabel::Female, PronounLabel::Male};
}

// Instances for every (template, name, pronoun variant), ordered by
// template id, then name, then pronoun label. `stats` is only consulted
// under BY_NAME_GENDER and may be null otherwise.
inline std::vector<Instance> instance_grid(std::span<const Template> templates, std::span<const std::string> names,
                                           PronounPolicy policy, const StatsMap* stats = nullptr) {
  if (policy == PronounPolicy::ByNameGender && stats == nullptr)
    throw Error("instance_grid: BY_NAME_GENDER needs census statistics");
  std::vector<const Template*> order;
  for (const auto& t : templates) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<std::string> sorted_names(names.begin(), names.end());
  std::sort(sorted_names.begin(), sorted_names.end());
  sorted_names.erase(std::unique(sorted_names.begin(), sorted_names.end()), sorted_names.end());

  std::vector<Instance> out;
  for (const auto* t : order) {
    for (const auto& name : sorted_names) {
      std::vector<PronounLabel> variants;
      bool defaulted = false;
      switch (policy) {
        case PronounPolicy::FixedFemale: variants = {PronounLabel::Female}; break;
        case PronounPolicy::FixedMale: variants = {PronounLabel::Male}; break;
        case PronounPolicy::Both: variants = {PronounLabel::Female, PronounLabel::Male}; break;
        case PronounPolicy::ByNameGender:
          variants = majority_pronouns(*stats, name);
          if (variants.empty()) {
            variants = {PronounLabel::Female, PronounLabel::Male};
            defaulted = true;
          }
          break;
      }
      for (auto v : variants) {
        auto inst = instantiate(*t, name, PronounSet::of(v));
        inst.pronoun_defaulted = defaulted;
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

inline std::vector<Instance> instance_grid(std::span<const Template> templates, const InterventionSet& set,
                                           PronounPolicy policy, const StatsMap* stats = nullptr) {
  return instance_grid(templates, std::span<const std::string>(set.names), policy, stats);
}

// ---------------------------------------------------------------------------
// JSONL export

inline nlohmann::json to_json(const Instance& i) {
  return {{"id", i.id},
          {"template_id", i.template_id},
          {"name", i.name},
          {"pronouns",
           {{"label", to_string(i.pronouns.label)},
            {"subject", i.pronouns.subject},
            {"object", i.pronouns.object},
            {"dep_possessive", i.pronouns.dep_possessive}}},
          {"question", i.rendered_question},
          {"candidates", i.rendered_candidates},
          {"label", i.gold_label},
          {"pronoun_defaulted", i.pronoun_defaulted}};
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance i;
  i.id = j.at("id").get<std::string>();
  i.template_id = j.at("template_id").get<std::string>();
  i.name = j.at("name").get<std::string>();
  const auto& p = j.at("pronouns");
  const auto label = p.at("label").get<std::string>();
  if (label != "FEMALE" && label != "MALE") throw Error("unknown pronoun label " + label);
  i.pronouns = {label == "FEMALE" ? PronounLabel::Female : PronounLabel::Male, p.at("subject").get<std::string>(),
                p.at("object").get<std::string>(), p.at("dep_possessive").get<std::string>()};
  i.rendered_question = j.at("question").get<std::string>();
  const auto c = j.at("candidates").get<std::vector<std::string>>();
  if (c.size() != 3) throw Error("instance `" + i.id + "`: expected 3 candidates");
  std::copy(c.begin(), c.end(), i.rendered_candidates.begin());
  i.gold_label = j.at("label").get<int>();
  i.pronoun_defaulted = j.value("pronoun_defaulted", false);
  return i;
}

inline std::string dump_instances_jsonl(std::span<const Instance> instances) {
  std::string out;
  for (const auto& i : instances) out += to_json(i).dump() + "\n";
  return out;
}

inline std::vector<Instance> load_instances_jsonl(const std::filesystem::path& path) {
  std::vector<Instance> out;
  std::size_t line_no = 0;
  const auto content = read_file(path);
  for (auto line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

}  // namespace namebias
