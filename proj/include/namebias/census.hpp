#pragma once

// Census baby-name ingestion and intervention name lists.
//
// Input is a directory of per-year files (yobYYYY.txt) holding lines of the
// form `name,gender,count`. Counts are aggregated over every year and both
// genders; the aggregate drives the frequency (MOST/LEAST) and gender
// (FEMALE/MALE) partitions used for do-interventions.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "namebias/common.hpp"

namespace namebias {

enum class Gender { Female, Male };

struct NameRecord {
  std::string name;
  Gender gender = Gender::Female;
  int year = 0;
  std::uint64_t count = 0;

  friend bool operator==(const NameRecord&, const NameRecord&) = default;
};

struct NameStats {
  std::string name;
  std::uint64_t total_count = 0;
  std::uint64_t female_count = 0;
  std::uint64_t male_count = 0;

  bool is_female() const noexcept { return female_count > 0; }
  bool is_male() const noexcept { return male_count > 0; }

  friend bool operator==(const NameStats&, const NameStats&) = default;
};

// Ordered by name so every traversal is deterministic.
using StatsMap = std::map<std::string, NameStats, std::less<>>;

enum class SetLabel { Most, Least, Female, Male, MostFemale, MostMale, LeastFemale, LeastMale };

inline constexpr std::array<SetLabel, 8> kAllSetLabels = {
    SetLabel::Most,       SetLabel::Least,    SetLabel::Female,      SetLabel::Male,
    SetLabel::MostFemale, SetLabel::MostMale, SetLabel::LeastFemale, SetLabel::LeastMale};

inline std::string_view to_string(SetLabel label) noexcept {
  switch (label) {
    case SetLabel::Most: return "MOST";
    case SetLabel::Least: return "LEAST";
    case SetLabel::Female: return "FEMALE";
    case SetLabel::Male: return "MALE";
    case SetLabel::MostFemale: return "MOST_FEMALE";
    case SetLabel::MostMale: return "MOST_MALE";
    case SetLabel::LeastFemale: return "LEAST_FEMALE";
    case SetLabel::LeastMale: return "LEAST_MALE";
  }
  return "?";
}

inline std::optional<SetLabel> parse_set_label(std::string_view text) noexcept {
  for (auto label : kAllSetLabels)
    if (to_string(label) == text) return label;
  return std::nullopt;
}

struct InterventionSet {
  SetLabel label = SetLabel::Most;
  std::vector<std::string> names;
  std::size_t k = 0;
  // Set when the source had fewer eligible names than k.
  bool truncated = false;

  friend bool operator==(const InterventionSet&, const InterventionSet&) = default;
};

inline std::string_view to_string(Gender g) noexcept { return g == Gender::Female ? "F" : "M"; }

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::optional<int> year_from_filename(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  std::optional<int> year;
  std::size_t i = 0;
  while (i < stem.size()) {
    if (stem[i] < '0' || stem[i] > '9') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < stem.size() && stem[j] >= '0' && stem[j] <= '9') ++j;
    if (j - i == 4) {
      if (year) return std::nullopt;  // ambiguous
      year = std::stoi(stem.substr(i, 4));
    }
    i = j;
  }
  return year;
}

}  // namespace detail

// Parses the content of one per-year file. `source` is used in error messages.
inline std::vector<NameRecord> parse_census_text(std::string_view content, int year,
                                                 const std::string& source) {
  if (!is_valid_utf8(content)) throw Error(source + ": file is not valid UTF-8");
  std::vector<NameRecord> records;
  std::size_t line_no = 0;
  for (auto raw : split_lines(content)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 3)
      throw ParseError(source, line_no, "expected `name,gender,count`, got `" + std::string(line) + "`");
    NameRecord rec;
    rec.name = std::string(trim(fields[0]));
    if (rec.name.empty()) throw ParseError(source, line_no, "empty name");
    const auto gender = trim(fields[1]);
    if (gender == "F")
      rec.gender = Gender::Female;
    else if (gender == "M")
      rec.gender = Gender::Male;
    else
      throw ParseError(source, line_no, "unknown gender code `" + std::string(gender) + "`");
    const auto count = trim(fields[2]);
    auto [ptr, ec] = std::from_chars(count.data(), count.data() + count.size(), rec.count);
    if (ec != std::errc{} || ptr != count.data() + count.size() || count.empty())
      throw ParseError(source, line_no, "count is not a non-negative integer: `" + std::string(count) + "`");
    rec.year = year;
    records.push_back(std::move(rec));
  }
  return records;
}

// Reads every `*.txt` file in `dir` whose stem carries a 4-digit year.
// Files are visited in (year, filename) order so the record order is stable.
inline std::vector<NameRecord> parse_census_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("census directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    auto year = detail::year_from_filename(entry.path());
    if (!year) throw Error("cannot determine year from file name: " + entry.path().string());
    files.emplace_back(*year, entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NameRecord> all;
  for (const auto& [year, path] : files) {
    auto recs = parse_census_text(read_file(path), year, path.filename().string());
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return all;
}

// ---------------------------------------------------------------------------
// Aggregation and list construction

inline StatsMap aggregate_stats(std::span<const NameRecord> records) {
  StatsMap stats;
  for (const auto& r : records) {
    auto& s = stats[r.name];
    s.name = r.name;
    s.total_count += r.count;
    (r.gender == Gender::Female ? s.female_count : s.male_count) += r.count;
  }
  // A name seen only with zero counts carries no frequency information.
  std::erase_if(stats, [](const auto& kv) { return kv.second.total_count == 0; });
  return stats;
}

namespace detail {

using CountOf = std::uint64_t (*)(const NameStats&);

inline std::vector<std::string> ranked(const StatsMap& stats, CountOf count, bool descending,
                                       std::size_t k, bool& truncated) {
  std::vector<const NameStats*> pool;
  for (const auto& [_, s] : stats)
    if (count(s) > 0) pool.push_back(&s);
  // Equal counts fall back to ascending name order in both directions.
  std::sort(pool.begin(), pool.end(), [&](const NameStats* a, const NameStats* b) {
    const auto ca = count(*a), cb = count(*b);
    if (ca != cb) return descending ? ca > cb : ca < cb;
    return a->name < b->name;
  });
  truncated = pool.size() < k;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) names.push_back(pool[i]->name);
  return names;
}

}  // namespace detail

inline std::vector<InterventionSet> build_intervention_sets(const StatsMap& stats, std::size_t k) {
  if (k < 1) throw Error("k must be at least 1");
  const detail::CountOf total = [](const NameStats& s) { return s.total_count; };
  const detail::CountOf female = [](const NameStats& s) { return s.female_count; };
  const detail::CountOf male = [](const NameStats& s) { return s.male_count; };

  std::vector<InterventionSet> sets;
  auto add = [&](SetLabel label, detail::CountOf count, bool descending) {
    InterventionSet set{label, {}, k, false};
    set.names = detail::ranked(stats, count, descending, k, set.truncated);
    sets.push_back(std::move(set));
  };
  add(SetLabel::Most, total, true);
  add(SetLabel::Least, total, false);
  // The bounded FEMALE/MALE lists are the top-k members by gendered count.
  add(SetLabel::Female, female, true);
  add(SetLabel::Male, male, true);
  add(SetLabel::MostFemale, female, true);
  add(SetLabel::MostMale, male, true);
  add(SetLabel::LeastFemale, female, false);
  add(SetLabel::LeastMale, male, false);
  return sets;
}

inline const InterventionSet& find_set(std::span<const InterventionSet> sets, SetLabel label) {
  for (const auto& s : sets)
    if (s.label == label) return s;
  throw Error("intervention set not found: " + std::string(to_string(label)));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const InterventionSet& set) {
  return {{"label", to_string(set.label)}, {"k", set.k}, {"names", set.names}, {"truncated", set.truncated}};
}

inline InterventionSet intervention_set_from_json(const nlohmann::json& j) {
  InterventionSet set;
  const auto label_text = j.at("label").get<std::string>();
  auto label = parse_set_label(label_text);
  if (!label) throw Error("unknown intervention set label: " + label_text);
  set.label = *label;
  set.k = j.at("k").get<std::size_t>();
  set.names = j.at("names").get<std::vector<std::string>>();
  set.truncated = j.value("truncated", false);
  return set;
}

inline std::string dump_sets(std::span<const InterventionSet> sets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : sets) arr.push_back(to_json(s));
  return arr.dump(2) + "\n";
}

inline std::vector<InterventionSet> load_sets(const std::filesystem::path& path) {
  std::vector<InterventionSet> sets;
  for (const auto& j : nlohmann::json::parse(read_file(path))) sets.push_back(intervention_set_from_json(j));
  return sets;
}

// Subset of the aggregate for the names an audit actually uses.
inline std::string dump_stats(const StatsMap& stats) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, s] : stats)
    arr.push_back({{"name", name}, {"total", s.total_count}, {"female", s.female_count}, {"male", s.male_count}});
  return arr.dump(1) + "\n";
}

inline StatsMap load_stats(const std::filesystem::path& path) {
  StatsMap stats;
  for (const auto& j : nlohmann::json::parse(read_file(path))) {
    NameStats s{j.at("name").get<std::string>(), j.at("total").get<std::uint64_t>(),
                j.at("female").get<std::uint64_t>(), j.at("male").get<std::uint64_t>()};
    stats.emplace(s.name, s);
  }
  return stats;
}

}  // namespace namebias
