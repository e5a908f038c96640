#pragma once

// Table rendering for effect reports: text, CSV and JSON.
//
// Text cells print the value with three decimals and no leading zero, stars
// appended, and the p-value in parentheses below it (or beside it in the
// inline layout). p-values under .001 print as "<.001"; JSON keeps full
// precision.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "namebias/contextualization.hpp"
#include "namebias/effects.hpp"

namespace namebias {

// 0.258 -> ".258", -0.07 -> "-.070", 1 -> "1.000".
inline std::string format_decimal(double v, int places = 3) {
  if (std::isnan(v)) return "n/a";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  std::string s = buf;
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  if (s.starts_with("0.")) s.erase(0, 1);
  else if (s.starts_with("-0.")) s.erase(1, 1);
  return s;
}

inline std::string format_p(double p) {
  if (std::isnan(p)) return "n/a";
  if (p < 0.001) return "<.001";
  return format_decimal(p, 3);
}

enum class CellLayout { Multiline, Inline };

inline std::string format_cell(double value, double p, CellLayout layout = CellLayout::Multiline) {
  return format_decimal(value) + significance_stars(p) + (layout == CellLayout::Multiline ? "\n" : " ") + "(" +
         format_p(p) + ")";
}

inline std::string format_cell(const EffectReport& r, CellLayout layout = CellLayout::Multiline) {
  return format_cell(r.effect, r.p_value, layout);
}

// Full-precision number for CSV; round-trips through strtod.
inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

namespace detail {

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

// Grid of multi-line cells, columns padded to their widest line.
inline std::string render_grid(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "";
  std::vector<std::vector<std::vector<std::string>>> cells;
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    auto& out = cells.emplace_back();
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::vector<std::string> lines;
      std::stringstream ss(row[c]);
      for (std::string line; std::getline(ss, line);) lines.push_back(line);
      if (lines.empty()) lines.emplace_back();
      if (width.size() <= c) width.push_back(0);
      for (const auto& l : lines) width[c] = std::max(width[c], utf8_width(l));
      out.push_back(std::move(lines));
    }
  }
  std::string text;
  auto rule = [&] {
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    text += std::string(total > 2 ? total - 2 : total, '-') + "\n";
  };
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::size_t height = 0;
    for (const auto& cell : cells[r]) height = std::max(height, cell.size());
    for (std::size_t h = 0; h < height; ++h) {
      std::string line;
      for (std::size_t c = 0; c < cells[r].size(); ++c) {
        const std::string piece = h < cells[r][c].size() ? cells[r][c][h] : "";
        if (c) line += "  ";
        line += piece + std::string(width[c] - utf8_width(piece), ' ');
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      text += line + "\n";
    }
    if (r == 0) rule();
  }
  return text;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Direct effects

// One block per metric; rows are comparisons, columns checkpoints.
inline std::string direct_effects_text(std::span<const EffectReport> reports) {
  if (reports.empty()) throw Error("no direct-effect reports to render");
  std::vector<Metric> metrics;
  std::vector<std::string> comparisons, checkpoints;
  for (const auto& r : reports) {
    detail::push_unique(metrics, r.metric);
    detail::push_unique(comparisons, r.comparison);
    detail::push_unique(checkpoints, r.checkpoint);
  }
  std::string out;
  for (auto m : metrics) {
    if (!out.empty()) out += "\n";
    out += "Direct effect: d_" + std::string(to_string(m)) + "\n\n";
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"comparison"});
    for (const auto& cp : checkpoints) rows.back().push_back(cp);
    for (const auto& c : comparisons) {
      std::vector<std::string> row{c};
      for (const auto& cp : checkpoints) {
        auto it = std::find_if(reports.begin(), reports.end(), [&](const EffectReport& r) {
          return r.metric == m && r.comparison == c && r.checkpoint == cp;
        });
        row.push_back(it == reports.end() ? "-" : format_cell(*it));
      }
      rows.push_back(std::move(row));
    }
    out += detail::render_grid(rows);
  }
  return out;
}

inline std::string direct_effects_csv(std::span<const EffectReport> reports) {
  std::string out =
      "checkpoint,comparison,metric,value_from,value_to,effect,effect_sum,relative_change,t,df,p,stars,n_templates,"
      "test,degenerate_test\n";
  for (const auto& r : reports) {
    out += csv_field(r.checkpoint) + "," + csv_field(r.comparison) + "," + std::string(to_string(r.metric)) + "," +
           csv_number(r.value_from) + "," + csv_number(r.value_to) + "," + csv_number(r.effect) + "," +
           csv_number(r.effect_sum) + "," + (r.relative_change.defined ? csv_number(r.relative_change.value) : "") +
           "," + csv_number(r.t_stat) + "," + csv_number(r.df) + "," + csv_number(r.p_value) + "," + r.stars + "," +
           std::to_string(r.n_templates) + "," + std::string(to_string(r.test)) + "," +
           (r.degenerate_test ? "true" : "false") + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const EffectReport& r) {
  return {{"checkpoint", r.checkpoint},
          {"comparison", r.comparison},
          {"metric", to_string(r.metric)},
          {"value_from", json_number(r.value_from)},
          {"value_to", json_number(r.value_to)},
          {"effect", json_number(r.effect)},
          {"effect_sum", json_number(r.effect_sum)},
          {"relative_change", r.relative_change.defined ? json_number(r.relative_change.value) : nullptr},
          {"relative_change_defined", r.relative_change.defined},
          {"t", json_number(r.t_stat)},
          {"df", json_number(r.df)},
          {"p", json_number(r.p_value)},
          {"stars", r.stars},
          {"n_templates", r.n_templates},
          {"test", to_string(r.test)},
          {"degenerate_test", r.degenerate_test},
          {"cell", format_cell(r, CellLayout::Inline)}};
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return j.get<std::string>() == "-inf" ? -std::numeric_limits<double>::infinity()
                                                            : std::numeric_limits<double>::infinity();
  return j.get<double>();
}

inline EffectReport effect_report_from_json(const nlohmann::json& j) {
  EffectReport r;
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.comparison = j.at("comparison").get<std::string>();
  const auto metric = parse_metric(j.at("metric").get<std::string>());
  if (!metric) throw Error("unknown metric " + j.at("metric").dump());
  r.metric = *metric;
  r.value_from = number_from_json(j.at("value_from"));
  r.value_to = number_from_json(j.at("value_to"));
  r.effect = number_from_json(j.at("effect"));
  r.effect_sum = number_from_json(j.at("effect_sum"));
  r.relative_change.defined = j.at("relative_change_defined").get<bool>();
  r.relative_change.value = number_from_json(j.at("relative_change"));
  r.t_stat = number_from_json(j.at("t"));
  r.df = number_from_json(j.at("df"));
  r.p_value = number_from_json(j.at("p"));
  r.stars = j.at("stars").get<std::string>();
  r.n_templates = j.at("n_templates").get<std::size_t>();
  r.test = j.at("test").get<std::string>() == "paired" ? TestKind::Paired : TestKind::Welch;
  r.degenerate_test = j.at("degenerate_test").get<bool>();
  return r;
}

inline std::vector<EffectReport> load_direct_effects(const std::filesystem::path& path) {
  std::vector<EffectReport> out;
  for (const auto& j : nlohmann::json::parse(read_file(path))) out.push_back(effect_report_from_json(j));
  return out;
}

inline std::string direct_effects_json(std::span<const EffectReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Indirect effects

inline std::string indirect_effects_text(std::span<const IndirectReport> reports) {
  if (reports.empty()) throw Error("no indirect-effect reports to render");
  std::vector<std::string> sets, checkpoints;
  for (const auto& r : reports) {
    detail::push_unique(sets, r.set_label);
    detail::push_unique(checkpoints, r.checkpoint);
  }
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"names"});
  for (const auto& cp : checkpoints) rows.back().push_back(cp);
  for (const auto& s : sets) {
    std::vector<std::string> row{s};
    for (const auto& cp : checkpoints) {
      auto it = std::find_if(reports.begin(), reports.end(),
                             [&](const IndirectReport& r) { return r.set_label == s && r.checkpoint == cp; });
      row.push_back(it == reports.end() ? "-" : format_decimal(it->value));
    }
    rows.push_back(std::move(row));
  }
  return "Indirect effect: mean prediction flip rate under a pronoun swap\n\n" + detail::render_grid(rows);
}

inline std::string indirect_effects_csv(std::span<const IndirectReport> reports) {
  std::string out = "checkpoint,names,value,sum,cells,flips\n";
  for (const auto& r : reports)
    out += csv_field(r.checkpoint) + "," + r.set_label + "," + csv_number(r.value) + "," + csv_number(r.sum) + "," +
           std::to_string(r.cells) + "," + std::to_string(r.flips) + "\n";
  return out;
}

inline std::string indirect_effects_json(std::span<const IndirectReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports)
    arr.push_back({{"checkpoint", r.checkpoint},
                   {"names", r.set_label},
                   {"value", json_number(r.value)},
                   {"sum", json_number(r.sum)},
                   {"cells", r.cells},
                   {"flips", r.flips},
                   {"aggregation", "mean"}});
  return arr.dump(2) + "\n";
}

inline std::vector<IndirectReport> load_indirect_effects(const std::filesystem::path& path) {
  std::vector<IndirectReport> out;
  for (const auto& j : nlohmann::json::parse(read_file(path))) {
    IndirectReport r;
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.set_label = j.at("names").get<std::string>();
    r.value = number_from_json(j.at("value"));
    r.sum = number_from_json(j.at("sum"));
    r.cells = j.at("cells").get<std::size_t>();
    r.flips = j.at("flips").get<std::size_t>();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves, correlation, similarity

inline std::string curves_csv(std::span<const CurvePoint> points) {
  std::string out = "checkpoint,names,metric,value\n";
  for (const auto& p : points)
    out += csv_field(p.checkpoint) + "," + p.set_label + "," + std::string(to_string(p.metric)) + "," +
           csv_number(p.value) + "\n";
  return out;
}

inline std::string correlation_csv(std::span<const CorrelationRow> rows) {
  std::string out = "comparison,metric,rho,p,defined,points,cell\n";
  for (const auto& r : rows)
    out += csv_field(r.comparison) + "," + std::string(to_string(r.metric)) + "," + csv_number(r.corr.rho) + "," +
           csv_number(r.corr.p) + "," + (r.corr.defined ? "true" : "false") + "," + std::to_string(r.points) + "," +
           csv_field(format_cell(r.corr.rho, r.corr.p, CellLayout::Inline)) + "\n";
  return out;
}

inline std::string correlation_text(std::span<const CorrelationRow> rows) {
  if (rows.empty()) throw Error("no correlation rows to render");
  std::vector<std::string> comparisons;
  std::vector<Metric> metrics;
  for (const auto& r : rows) {
    detail::push_unique(comparisons, r.comparison);
    detail::push_unique(metrics, r.metric);
  }
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"comparison"});
  for (auto m : metrics) grid.back().push_back("d_" + std::string(to_string(m)));
  for (const auto& c : comparisons) {
    std::vector<std::string> row{c};
    for (auto m : metrics) {
      auto it = std::find_if(rows.begin(), rows.end(),
                             [&](const CorrelationRow& r) { return r.comparison == c && r.metric == m; });
      row.push_back(it == rows.end() ? "-" : format_cell(it->corr.rho, it->corr.p));
    }
    grid.push_back(std::move(row));
  }
  return "Spearman correlation between accuracy and effect size across checkpoints\n\n" + detail::render_grid(grid);
}

inline std::string similarity_csv(std::span<const ProfileRow> rows) {
  std::string out = "layer,metric,self_most,self_least,inter\n";
  for (const auto& r : rows)
    out += std::to_string(r.layer) + "," + r.metric + "," + csv_number(r.self_most) + "," +
           csv_number(r.self_least) + "," + csv_number(r.inter) + "\n";
  return out;
}

}  // namespace namebias
