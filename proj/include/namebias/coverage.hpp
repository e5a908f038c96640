#pragma once

// How a dataset's first names spread over census frequency.
//
// Census names are sorted ascending by total count (ties by name) and cut
// into `bins` quantile bins; bin i holds positions [floor(i N / B),
// floor((i + 1) N / B)). For each bin the report counts the distinct dataset
// names that fall in it and their total occurrences. Names absent from the
// census are listed separately and excluded from the shares.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "namebias/census.hpp"
#include "namebias/common.hpp"
#include "namebias/report.hpp"

namespace namebias {

using NameOccurrences = std::map<std::string, std::uint64_t, std::less<>>;

struct CoverageBin {
  std::size_t index = 0;
  std::size_t census_names = 0;
  std::uint64_t min_count = 0;
  std::uint64_t max_count = 0;
  std::size_t distinct_present = 0;
  std::uint64_t occurrences = 0;
  double occurrence_share = 0.0;
};

struct CoverageReport {
  std::vector<CoverageBin> bins;
  std::uint64_t matched_occurrences = 0;
  NameOccurrences unmatched;
  // Share of matched occurrences in the most frequent bin.
  double top_bin_share = 0.0;
};

// One name per line, optionally followed by ",count". Repeated names add up.
inline NameOccurrences parse_name_occurrences(std::string_view content, const std::string& source = "<names>") {
  NameOccurrences out;
  std::size_t lineno = 0;
  for (auto raw : split_lines(content)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto comma = line.find(',');
    std::uint64_t count = 1;
    std::string name(trim(line.substr(0, comma)));
    if (comma != std::string_view::npos) {
      const auto field = std::string(trim(line.substr(comma + 1)));
      try {
        std::size_t used = 0;
        if (field.empty() || field.front() == '-') throw std::invalid_argument(field);
        count = std::stoull(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw ParseError(source, lineno, "bad occurrence count `" + field + "`");
      }
    }
    if (name.empty()) throw ParseError(source, lineno, "empty name");
    out[name] += count;
  }
  return out;
}

inline NameOccurrences load_name_occurrences(const std::filesystem::path& path) {
  return parse_name_occurrences(read_file(path), path.string());
}

inline CoverageReport coverage_report(const NameOccurrences& dataset, const StatsMap& stats, std::size_t bins) {
  if (bins < 2) throw Error("coverage_report: bins must be at least 2");
  if (dataset.empty()) throw Error("coverage_report: empty name list");
  if (stats.size() < bins)
    throw Error("coverage_report: " + std::to_string(stats.size()) + " census names cannot fill " +
                std::to_string(bins) + " bins");

  std::vector<const NameStats*> order;
  for (const auto& [_, s] : stats) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const NameStats* a, const NameStats* b) { return a->total_count < b->total_count; });

  CoverageReport r;
  const auto n = order.size();
  for (std::size_t b = 0; b < bins; ++b) {
    const auto lo = b * n / bins, hi = (b + 1) * n / bins;
    CoverageBin bin;
    bin.index = b;
    bin.census_names = hi - lo;
    bin.min_count = order[lo]->total_count;
    bin.max_count = order[hi - 1]->total_count;
    for (auto i = lo; i < hi; ++i) {
      auto it = dataset.find(order[i]->name);
      if (it == dataset.end()) continue;
      ++bin.distinct_present;
      bin.occurrences += it->second;
    }
    r.matched_occurrences += bin.occurrences;
    r.bins.push_back(bin);
  }
  for (const auto& [name, count] : dataset)
    if (!stats.contains(name)) r.unmatched.emplace(name, count);
  if (r.matched_occurrences > 0) {
    for (auto& bin : r.bins)
      bin.occurrence_share = static_cast<double>(bin.occurrences) / static_cast<double>(r.matched_occurrences);
    r.top_bin_share = r.bins.back().occurrence_share;
  }
  return r;
}

inline std::string coverage_csv(const CoverageReport& r) {
  std::string out = "bin,census_names,min_count,max_count,distinct_present,occurrences,occurrence_share\n";
  for (const auto& b : r.bins)
    out += std::to_string(b.index) + "," + std::to_string(b.census_names) + "," + std::to_string(b.min_count) + "," +
           std::to_string(b.max_count) + "," + std::to_string(b.distinct_present) + "," +
           std::to_string(b.occurrences) + "," + csv_number(b.occurrence_share) + "\n";
  return out;
}

inline std::string coverage_json(const CoverageReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"bin", b.index},
                    {"census_names", b.census_names},
                    {"min_count", b.min_count},
                    {"max_count", b.max_count},
                    {"distinct_present", b.distinct_present},
                    {"occurrences", b.occurrences},
                    {"occurrence_share", b.occurrence_share}});
  nlohmann::json unmatched = nlohmann::json::object();
  for (const auto& [name, count] : r.unmatched) unmatched[name] = count;
  const nlohmann::json doc = {{"bins", bins},
                              {"matched_occurrences", r.matched_occurrences},
                              {"top_bin_share", r.top_bin_share},
                              {"unmatched", unmatched}};
  return doc.dump(2) + "\n";
}

}  // namespace namebias
